/**
 * Rollout collection, PPO training loop, and matched-seed evaluation over
 * a RemoteEnv.  Episodes are seeded `baseSeed + episodeIndex`, so two runs
 * (or a PPO-vs-random comparison) see identical environment draws.
 */

import { PPOAgent, SeededRng, Transition } from "./ppo";
import { RemoteEnv } from "./remoteEnv";

export interface CurveRow {
  step: number;
  meanReward: number;
}

export interface TrainOptions {
  totalSteps: number;
  stepsPerUpdate?: number;
  baseSeed?: number;
  day?: number;
  /** episodes averaged into each curve row */
  rewardWindow?: number;
  onRow?: (row: CurveRow) => void;
}

export type ActFn = (obs: number[]) => number[];

/**
 * Train `agent` on `env` for `totalSteps` environment steps, one PPO
 * update per `stepsPerUpdate` transitions.  Returns the learning curve,
 * one row per update: cumulative step count and the mean total reward of
 * recently completed episodes.
 */
export async function trainPPO(
  env: RemoteEnv,
  agent: PPOAgent,
  opts: TrainOptions
): Promise<CurveRow[]> {
  const stepsPerUpdate = opts.stepsPerUpdate ?? 512;
  const baseSeed = opts.baseSeed ?? 0;
  const day = opts.day ?? 0;
  const window = opts.rewardWindow ?? 10;

  const curve: CurveRow[] = [];
  const recentReturns: number[] = [];
  let episodeIndex = 0;
  let episodeReturn = 0;
  let totalSteps = 0;

  let obs = await env.reset(day, baseSeed + episodeIndex);
  let transitions: Transition[] = [];

  while (totalSteps < opts.totalSteps) {
    const { action, logProb, value } = agent.sample(obs);
    const result = await env.step(agent.clipToBounds(action));
    transitions.push({
      obs,
      action,
      logProb,
      reward: result.reward,
      value,
      done: result.done,
    });
    episodeReturn += result.reward;
    totalSteps += 1;
    obs = result.obs;

    if (result.done) {
      recentReturns.push(episodeReturn);
      if (recentReturns.length > window) recentReturns.shift();
      episodeReturn = 0;
      episodeIndex += 1;
      obs = await env.reset(day, baseSeed + episodeIndex);
    }

    if (transitions.length >= stepsPerUpdate || totalSteps >= opts.totalSteps) {
      const last = transitions[transitions.length - 1];
      const lastValue = last.done ? 0 : agent.valueOf(obs);
      agent.update(transitions, lastValue);
      transitions = [];
      const meanReward =
        recentReturns.length > 0
          ? recentReturns.reduce((s, v) => s + v, 0) / recentReturns.length
          : episodeReturn; // no episode finished yet: report the partial sum
      const row = { step: totalSteps, meanReward };
      curve.push(row);
      opts.onRow?.(row);
    }
  }
  return curve;
}

/** Uniform proposals over the rate boxes (client-side twin of the server's
 * random agent; the shield makes them admissible). */
export function randomAgent(
  low: readonly number[],
  high: readonly number[],
  seed: number
): ActFn {
  const rng = new SeededRng(seed * 48611 + 7);
  return () => low.map((lo, i) => rng.uniform(lo, high[i]));
}

/**
 * Mean total episode reward of `act` over `episodes` episodes seeded
 * `baseSeed`, `baseSeed + 1`, ...  Matched seeds across calls make two
 * agents directly comparable.
 */
export async function evaluateAgent(
  env: RemoteEnv,
  act: ActFn,
  episodes: number,
  baseSeed: number,
  day = 0
): Promise<number> {
  let total = 0;
  for (let ep = 0; ep < episodes; ep++) {
    let obs = await env.reset(day, baseSeed + ep);
    let done = false;
    while (!done) {
      const result = await env.step(act(obs));
      total += result.reward;
      done = result.done;
      obs = result.obs;
    }
  }
  return total / episodes;
}

export function curveToCsv(curve: readonly CurveRow[]): string {
  const lines = ["step,mean_reward"];
  for (const row of curve) {
    lines.push(`${row.step},${row.meanReward}`);
  }
  return lines.join("\n") + "\n";
}
