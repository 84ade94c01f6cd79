/**
 * Learning smoke: a short PPO run on the mini grid must match or beat a
 * random agent on matched evaluation seeds, and the learning curve must
 * have the documented schema.
 */

import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { PPOAgent } from "../src/ppo";
import { RemoteEnv } from "../src/remoteEnv";
import { curveToCsv, evaluateAgent, randomAgent, trainPPO } from "../src/train";
import {
  ACTION_HIGH,
  ACTION_LOW,
  MiniServer,
  OBS_DIM,
  spawnMiniServer,
  stopMiniServer,
} from "./helpers";

let mini: MiniServer;

beforeAll(async () => {
  mini = await spawnMiniServer();
});

afterAll(async () => {
  await stopMiniServer(mini);
});

describe("PPO over the wire", () => {
  it(
    "matches or beats the random agent on matched seeds after a short run",
    { timeout: 600_000 },
    async () => {
      const env = new RemoteEnv({
        host: mini.server.host,
        port: mini.server.port,
        nStorage: 1,
        nMarkets: 1,
      });
      await env.connect();

      const agent = new PPOAgent({
        obsDim: OBS_DIM,
        actionDim: 2,
        actionLow: ACTION_LOW,
        actionHigh: ACTION_HIGH,
        minibatch: 120,
        seed: 1,
      });

      const totalSteps = 4800;
      const curve = await trainPPO(env, agent, {
        totalSteps,
        stepsPerUpdate: 480,
        baseSeed: 0,
        day: 0,
      });

      // curve schema: one row per update, monotonically increasing steps
      expect(curve).toHaveLength(totalSteps / 480);
      expect(curve[curve.length - 1].step).toBe(totalSteps);
      for (let i = 0; i < curve.length; i++) {
        expect(Number.isFinite(curve[i].meanReward)).toBe(true);
        if (i > 0) expect(curve[i].step).toBeGreaterThan(curve[i - 1].step);
      }
      const csv = curveToCsv(curve);
      const lines = csv.trim().split("\n");
      expect(lines[0]).toBe("step,mean_reward");
      expect(lines).toHaveLength(curve.length + 1);

      // matched-seed comparison on held-out episodes
      const evalSeed = 50_000;
      const episodes = 5;
      const ppoMean = await evaluateAgent(
        env,
        (obs) => agent.actDeterministic(obs),
        episodes,
        evalSeed
      );
      const randMean = await evaluateAgent(
        env,
        randomAgent(ACTION_LOW, ACTION_HIGH, 1),
        episodes,
        evalSeed
      );
      expect(Number.isFinite(ppoMean)).toBe(true);
      expect(Number.isFinite(randMean)).toBe(true);
      expect(ppoMean).toBeGreaterThanOrEqual(randMean);

      agent.dispose();
      await env.close();
    }
  );
});
