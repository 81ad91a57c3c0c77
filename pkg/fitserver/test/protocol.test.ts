import { describe, expect, it } from "vitest";

import { decodeFrame, encodeFrame, FrameError } from "../src/protocol.js";

describe("encodeFrame", () => {
  it("emits one newline-terminated JSON object", () => {
    const wire = encodeFrame({ action: "CONFIG", payload: null });
    expect(wire.toString("utf-8")).toBe('{"action":"CONFIG","payload":null}\n');
  });

  it("round-trips through decodeFrame", () => {
    const frames = [
      { action: "CONFIG", payload: { primitives: { Add: 2, x: 0 }, constants: [] } },
      { action: "EXPERIMENT", payload: ["x", "Add x c"] },
      { action: "EXPERIMENT", payload: { fitness: [[0.5, 3], [null, null]] } },
      { action: "SHUTDOWN", payload: {} },
      { action: "ERROR", payload: "something broke" },
    ] as const;
    for (const frame of frames) {
      const wire = encodeFrame(frame);
      expect(wire[wire.length - 1]).toBe(0x0a);
      expect(decodeFrame(wire.subarray(0, -1))).toEqual(frame);
    }
  });

  it("refuses unknown actions", () => {
    expect(() =>
      encodeFrame({ action: "PING" as never, payload: null }),
    ).toThrow(FrameError);
  });

  it("refuses non-finite numbers anywhere in the payload", () => {
    for (const bad of [Infinity, -Infinity, NaN]) {
      expect(() =>
        encodeFrame({ action: "EXPERIMENT", payload: { fitness: [[bad]] } }),
      ).toThrow(/no JSON spelling/);
    }
  });
});

describe("decodeFrame", () => {
  it("rejects bytes that are not UTF-8", () => {
    expect(() => decodeFrame(Buffer.from([0xff, 0xfe, 0x22]))).toThrow(
      /not valid UTF-8/,
    );
  });

  it("rejects text that is not JSON", () => {
    for (const bad of ["", "not json", "{", '{"action":']) {
      expect(() => decodeFrame(bad)).toThrow(/not valid JSON/);
    }
  });

  it("rejects JSON's non-finite extensions", () => {
    // strict JSON has no spelling for these, so parsing must fail
    expect(() => decodeFrame('{"action":"CONFIG","payload":NaN}')).toThrow(
      FrameError,
    );
    expect(() => decodeFrame('{"action":"CONFIG","payload":Infinity}')).toThrow(
      FrameError,
    );
  });

  it("rejects frames that are not objects", () => {
    for (const bad of ["[1,2]", "3.5", '"CONFIG"', "null", "true"]) {
      expect(() => decodeFrame(bad)).toThrow(/must be a JSON object/);
    }
  });

  it("requires exactly the action and payload members", () => {
    expect(() => decodeFrame('{"action":"CONFIG"}')).toThrow(/exactly/);
    expect(() => decodeFrame('{"payload":null}')).toThrow(/exactly/);
    expect(() =>
      decodeFrame('{"action":"CONFIG","payload":null,"extra":1}'),
    ).toThrow(/exactly/);
    expect(() => decodeFrame("{}")).toThrow(/exactly/);
  });

  it("rejects unknown or non-string actions", () => {
    expect(() => decodeFrame('{"action":"PING","payload":null}')).toThrow(
      /unknown action/,
    );
    expect(() => decodeFrame('{"action":7,"payload":null}')).toThrow(
      /unknown action/,
    );
    expect(() => decodeFrame('{"action":null,"payload":null}')).toThrow(
      /unknown action/,
    );
  });

  it("accepts frames the reference client emits", () => {
    expect(decodeFrame('{"action":"CONFIG","payload":null}')).toEqual({
      action: "CONFIG",
      payload: null,
    });
    expect(decodeFrame('{"action": "EXPERIMENT", "payload": ["x"]}')).toEqual({
      action: "EXPERIMENT",
      payload: ["x"],
    });
  });
});
