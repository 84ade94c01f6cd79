/**
 * PPO training smoke against a freshly spawned gridshield server.
 *
 * Trains a compact PPO agent for --steps environment steps on a small
 * single-storage grid, writes the learning curve as `step,mean_reward`
 * CSV, then compares the trained policy against a random agent on
 * matched evaluation seeds.  Exit code 0 when trained >= random.
 *
 * Usage:
 *   node dist/trainSmoke.js --steps 10000 --out curve.csv --seed 0
 */

import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { PPOAgent } from "./ppo";
import { RemoteEnv } from "./remoteEnv";
import { startServer } from "./serverProcess";
import { curveToCsv, evaluateAgent, randomAgent, trainPPO } from "./train";

const args = process.argv.slice(2);
const getArg = (name: string, defaultVal: string): string => {
  const idx = args.indexOf(`--${name}`);
  return idx !== -1 && args[idx + 1] ? args[idx + 1] : defaultVal;
};

const TOTAL_STEPS = parseInt(getArg("steps", "10000"), 10);
const OUT_CSV = getArg("out", "curve.csv");
const SEED = parseInt(getArg("seed", "0"), 10);
const EVAL_EPISODES = parseInt(getArg("evalEpisodes", "5"), 10);

// Small single-storage grid: 120-minute days keep episodes short enough
// that a 10k-step smoke sees ~80 of them.  The client knows the rate
// boxes from this same config; it never recomputes any model quantity.
const SMOKE_GRID = {
  storages: [
    {
      p_max: 3.5,
      p_min: -3.5,
      e_max: 6.54,
      e_min: 0.34,
      eta_d: 0.98,
      eta_c: 0.98,
      mu: 0.012,
      gamma: 0.15,
    },
  ],
  markets: [{ p_max: 5.0, p_min: -5.0 }],
  tau: 1 / 60,
  horizon_T: 120,
  islanding_H: 15,
};
const SMOKE_CONFIG = {
  grid: SMOKE_GRID,
  forecast: {
    smoothing_window: 16,
    smoothing_passes: 1,
    base_amplitude_gen: 0.02,
    base_amplitude_load: 0.01,
    growth_coefficient: 1.0014,
    horizons: [15, 30],
  },
  reward: { alpha: 0.5, beta: 0.5 },
  seed: 0,
  n_days: 1,
};
const ACTION_LOW = [SMOKE_GRID.storages[0].p_min, SMOKE_GRID.markets[0].p_min];
const ACTION_HIGH = [SMOKE_GRID.storages[0].p_max, SMOKE_GRID.markets[0].p_max];

async function main(): Promise<number> {
  const workDir = fs.mkdtempSync(path.join(os.tmpdir(), "gridshield-smoke-"));
  const configPath = path.join(workDir, "config.json");
  fs.writeFileSync(configPath, JSON.stringify(SMOKE_CONFIG));

  console.log(`[smoke] starting server (config ${configPath})`);
  const server = await startServer(configPath);
  console.log(`[smoke] server on ${server.host}:${server.port}`);

  const env = new RemoteEnv({
    host: server.host,
    port: server.port,
    nStorage: 1,
    nMarkets: 1,
  });
  await env.connect();

  const obs0 = await env.reset(0, SEED);
  const agent = new PPOAgent({
    obsDim: obs0.length,
    actionDim: 2,
    actionLow: ACTION_LOW,
    actionHigh: ACTION_HIGH,
    seed: SEED,
  });

  console.log(`[smoke] training for ${TOTAL_STEPS} steps`);
  const t0 = Date.now();
  const curve = await trainPPO(env, agent, {
    totalSteps: TOTAL_STEPS,
    stepsPerUpdate: 480,
    baseSeed: SEED,
    onRow: (row) =>
      console.log(`[smoke] step ${row.step}  mean episode reward ${row.meanReward.toFixed(3)}`),
  });
  console.log(`[smoke] trained in ${((Date.now() - t0) / 1000).toFixed(1)} s`);

  fs.writeFileSync(OUT_CSV, curveToCsv(curve));
  console.log(`[smoke] learning curve (${curve.length} rows) -> ${OUT_CSV}`);

  // Matched-seed comparison: same eval seeds for both agents.
  const evalSeed = SEED + 100_000;
  const ppoMean = await evaluateAgent(
    env,
    (obs) => agent.actDeterministic(obs),
    EVAL_EPISODES,
    evalSeed
  );
  const randMean = await evaluateAgent(
    env,
    randomAgent(ACTION_LOW, ACTION_HIGH, SEED),
    EVAL_EPISODES,
    evalSeed
  );
  console.log(`[smoke] mean episode reward  ppo ${ppoMean.toFixed(3)}  random ${randMean.toFixed(3)}`);

  await env.close();
  await server.stop();
  agent.dispose();

  if (ppoMean >= randMean) {
    console.log("[smoke] PASS: trained policy >= random agent on matched seeds");
    return 0;
  }
  console.log("[smoke] FAIL: trained policy did not reach the random agent");
  return 1;
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(err);
    process.exit(1);
  }
);
