/**
 * Gym-style environment facade over one gridshield server connection.
 *
 * Transport and adaptation only: every model quantity (observations,
 * rewards, the shielded action, the reward decomposition) comes from the
 * server verbatim.  One episode lives per connection; run several
 * RemoteEnv instances for vectorized training.
 */

import { NdjsonClient } from "./client";
import {
  isErrorResponse,
  ProtocolError,
  ResetResponse,
  StepInfo,
  StepResponse,
  validateAction,
} from "./protocol";

export interface RemoteEnvConfig {
  host: string;
  port: number;
  /** number of storage units n (actions are storages first) */
  nStorage: number;
  /** number of markets m (actions are markets last) */
  nMarkets: number;
  /** per-request timeout; safe-set computation makes resets the slow path */
  timeoutMs?: number;
}

export interface StepResult {
  obs: number[];
  reward: number;
  done: boolean;
  info: StepInfo;
}

export class RemoteEnv {
  readonly actionDim: number;
  private client: NdjsonClient;
  private obsDim: number | null = null;

  constructor(readonly config: RemoteEnvConfig) {
    this.actionDim = config.nStorage + config.nMarkets;
    this.client = new NdjsonClient(
      config.host,
      config.port,
      config.timeoutMs ?? 60_000
    );
  }

  connect(): Promise<void> {
    return this.client.connect();
  }

  get observationDim(): number | null {
    return this.obsDim;
  }

  async reset(day = 0, seed = 0): Promise<number[]> {
    const r = await this.client.request({ op: "reset", day, seed });
    if (isErrorResponse(r)) {
      throw new ProtocolError(`reset rejected: ${r.error}`);
    }
    const obs = (r as ResetResponse).obs;
    if (!Array.isArray(obs) || obs.some((v) => typeof v !== "number")) {
      throw new ProtocolError("reset response carries no observation vector");
    }
    this.obsDim = obs.length;
    return obs;
  }

  async step(action: readonly number[]): Promise<StepResult> {
    validateAction(action, this.actionDim); // reject locally, never on the wire
    const r = await this.client.request({ op: "step", action: [...action] });
    if (isErrorResponse(r)) {
      throw new ProtocolError(`step rejected: ${r.error}`);
    }
    const s = r as StepResponse;
    if (this.obsDim !== null && s.obs.length !== this.obsDim) {
      throw new ProtocolError(
        `observation width changed mid-episode: ${s.obs.length} != ${this.obsDim}`
      );
    }
    return { obs: s.obs, reward: s.reward, done: s.done, info: s.info };
  }

  close(): Promise<void> {
    return this.client.close();
  }
}
