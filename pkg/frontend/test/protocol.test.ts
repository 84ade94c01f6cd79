import { describe, expect, it } from "vitest";
import {
  decodeFrame,
  encodeFrame,
  isErrorResponse,
  PROTOCOL_VERSION,
  ProtocolError,
  validateAction,
} from "../src/protocol";

describe("frame encoding", () => {
  it("writes one JSON object per line", () => {
    const line = encodeFrame({ op: "step", action: [1.5, -2] });
    expect(line.endsWith("\n")).toBe(true);
    expect(JSON.parse(line)).toEqual({ op: "step", action: [1.5, -2] });
    expect(line.indexOf("\n")).toBe(line.length - 1);
  });

  it("round-trips numbers exactly (IEEE doubles survive JSON)", () => {
    const v = 4.9819931972789115;
    const decoded = decodeFrame(`{"v": 1, "obs": [${v}]}`) as { obs: number[] };
    expect(decoded.obs[0]).toBe(v);
  });
});

describe("frame decoding", () => {
  it("accepts version-1 frames", () => {
    const r = decodeFrame('{"v": 1, "ok": true}');
    expect((r as { ok: boolean }).ok).toBe(true);
  });

  it.each(["0", "2", "99", '"1"', "null"])(
    "rejects version %s",
    (v) => {
      expect(() => decodeFrame(`{"v": ${v}, "obs": []}`)).toThrow(
        /protocol version mismatch/
      );
    }
  );

  it("rejects a missing version tag", () => {
    expect(() => decodeFrame('{"obs": []}')).toThrow(ProtocolError);
  });

  it("rejects non-JSON lines", () => {
    expect(() => decodeFrame("{nope")).toThrow(/invalid JSON/);
  });

  it("rejects non-object frames", () => {
    expect(() => decodeFrame("[1, 2]")).toThrow(/not a JSON object/);
    expect(() => decodeFrame("42")).toThrow(/not a JSON object/);
  });

  it("classifies error frames", () => {
    const r = decodeFrame('{"v": 1, "error": "unknown op"}');
    expect(isErrorResponse(r)).toBe(true);
    const ok = decodeFrame('{"v": 1, "obs": []}');
    expect(isErrorResponse(ok)).toBe(false);
  });
});

describe("client-side action validation", () => {
  it("accepts exactly dim finite numbers", () => {
    expect(() => validateAction([1, -2.5], 2)).not.toThrow();
  });

  it("rejects wrong arity", () => {
    expect(() => validateAction([1], 2)).toThrow(/list of 2 numbers/);
    expect(() => validateAction([1, 2, 3], 2)).toThrow(/list of 2 numbers/);
    expect(() => validateAction([], 2)).toThrow(ProtocolError);
  });

  it("rejects non-finite and non-number entries", () => {
    expect(() => validateAction([NaN, 0], 2)).toThrow(/finite/);
    expect(() => validateAction([Infinity, 0], 2)).toThrow(/finite/);
    expect(() => validateAction([-Infinity, 0], 2)).toThrow(/finite/);
    expect(() => validateAction(["1" as unknown as number, 0], 2)).toThrow(/finite/);
    expect(() => validateAction([true as unknown as number, 0], 2)).toThrow(/finite/);
  });

  it("pins the protocol version at 1", () => {
    expect(PROTOCOL_VERSION).toBe(1);
  });
});
