export {
  PROTOCOL_VERSION,
  ProtocolError,
  encodeFrame,
  decodeFrame,
  validateAction,
  isErrorResponse,
} from "./protocol";
export type {
  Request,
  Response,
  ResetResponse,
  StepResponse,
  CloseResponse,
  ErrorResponse,
  StepInfo,
} from "./protocol";
export { NdjsonClient } from "./client";
export { RemoteEnv } from "./remoteEnv";
export type { RemoteEnvConfig, StepResult } from "./remoteEnv";
export { PPOAgent, SeededRng, RunningNorm } from "./ppo";
export type { PPOConfig, Transition } from "./ppo";
export { trainPPO, evaluateAgent, randomAgent, curveToCsv } from "./train";
export type { CurveRow, TrainOptions, ActFn } from "./train";
export { startServer } from "./serverProcess";
export type { ServerHandle } from "./serverProcess";
