/**
 * Shared test scaffolding: a small single-storage grid config (40-minute
 * days, noise-free forecasts, so episodes are fast and deterministic) and
 * a helper that spawns a real gridshield server on a fresh port.
 */

import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { ServerHandle, startServer } from "../src/serverProcess";

export const MINI_GRID = {
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
  horizon_T: 40,
  islanding_H: 10,
};

export const NOISELESS_FORECAST = {
  smoothing_window: 1,
  smoothing_passes: 0,
  base_amplitude_gen: 0.0,
  base_amplitude_load: 0.0,
  horizons: [5, 10],
};

export const ALPHA = 0.5;
export const BETA = 0.5;

export const MINI_CONFIG = {
  grid: MINI_GRID,
  forecast: NOISELESS_FORECAST,
  reward: { alpha: ALPHA, beta: BETA },
  seed: 0,
  n_days: 2,
};

/** n + 4 + 4 * horizons */
export const OBS_DIM = 13;
export const EPISODE_STEPS = MINI_GRID.horizon_T;
export const ACTION_LOW = [MINI_GRID.storages[0].p_min, MINI_GRID.markets[0].p_min];
export const ACTION_HIGH = [MINI_GRID.storages[0].p_max, MINI_GRID.markets[0].p_max];

export interface MiniServer {
  server: ServerHandle;
  dir: string;
}

export async function spawnMiniServer(
  overrides: Record<string, unknown> = {}
): Promise<MiniServer> {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), "gridshield-bridge-test-"));
  const configPath = path.join(dir, "config.json");
  fs.writeFileSync(configPath, JSON.stringify({ ...MINI_CONFIG, ...overrides }));
  const server = await startServer(configPath);
  return { server, dir };
}

export async function stopMiniServer(mini: MiniServer): Promise<void> {
  await mini.server.stop();
  fs.rmSync(mini.dir, { recursive: true, force: true });
}
