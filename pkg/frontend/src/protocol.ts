/**
 * Frame types for the gridshield NDJSON wire protocol (version 1).
 *
 * One JSON object per line in both directions.  Every server response
 * carries a `"v": 1` tag; `{"error": ...}` frames reject a request and
 * leave the episode untouched.  This module only validates and (de)codes
 * frames — it never recomputes any model quantity.
 */

export const PROTOCOL_VERSION = 1;

export interface ResetRequest {
  op: "reset";
  day?: number;
  seed?: number;
}

export interface StepRequest {
  op: "step";
  action: number[];
}

export interface CloseRequest {
  op: "close";
}

export type Request = ResetRequest | StepRequest | CloseRequest;

export interface StepInfo {
  safe_action: number[];
  correction: number;
  violation: number;
  shield_time: number;
  /** stage cost the server charged this step (reward decomposition term) */
  cost: number;
  /** baseline-mode violation penalty (0 under the full shield) */
  penalty: number;
  aborted?: boolean;
}

export interface ResetResponse {
  v: number;
  obs: number[];
}

export interface StepResponse {
  v: number;
  obs: number[];
  reward: number;
  done: boolean;
  info: StepInfo;
}

export interface CloseResponse {
  v: number;
  ok: boolean;
}

export interface ErrorResponse {
  v: number;
  error: string;
}

export type Response = ResetResponse | StepResponse | CloseResponse | ErrorResponse;

/** Error raised for anything wrong on the wire (bad frame, version, server error). */
export class ProtocolError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ProtocolError";
  }
}

export function isErrorResponse(r: Response): r is ErrorResponse {
  return typeof (r as ErrorResponse).error === "string";
}

export function encodeFrame(req: Request): string {
  return JSON.stringify(req) + "\n";
}

/**
 * Parse one response line, enforcing the version tag.  Throws
 * ProtocolError on non-JSON lines, non-object frames, and version
 * mismatches; server-side `error` frames are returned to the caller so it
 * can decide whether they are fatal.
 */
export function decodeFrame(line: string): Response {
  let parsed: unknown;
  try {
    parsed = JSON.parse(line);
  } catch {
    throw new ProtocolError(`server sent invalid JSON: ${line.slice(0, 120)}`);
  }
  if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed)) {
    throw new ProtocolError("server frame is not a JSON object");
  }
  const frame = parsed as { v?: unknown };
  if (frame.v !== PROTOCOL_VERSION) {
    throw new ProtocolError(
      `protocol version mismatch: expected ${PROTOCOL_VERSION}, got ${String(frame.v)}`
    );
  }
  return parsed as Response;
}

/**
 * Client-side action validation: a step action must be exactly the n+m
 * finite numbers the server expects (storages then markets, kW).  Rejecting
 * locally keeps malformed proposals from ever reaching the wire.
 */
export function validateAction(action: readonly number[], dim: number): void {
  if (!Array.isArray(action) || action.length !== dim) {
    throw new ProtocolError(`action must be a list of ${dim} numbers`);
  }
  for (const v of action) {
    if (typeof v !== "number" || !Number.isFinite(v)) {
      throw new ProtocolError("action entries must be finite numbers");
    }
  }
}
