/**
 * Newline-delimited JSON frame codec.
 *
 * One frame per line, strict UTF-8, exactly the two members "action" and
 * "payload".  Violations raise FrameError, which the server answers with an
 * ERROR frame instead of dropping the connection.
 */

export const ACTIONS = ["CONFIG", "EXPERIMENT", "SHUTDOWN", "ERROR"] as const;

export type Action = (typeof ACTIONS)[number];

export type Payload =
  | null
  | boolean
  | number
  | string
  | Payload[]
  | { [key: string]: Payload };

export interface Frame {
  readonly action: Action;
  readonly payload: Payload;
}

export class FrameError extends Error {}

const utf8 = new TextDecoder("utf-8", { fatal: true });

function rejectNonFinite(_key: string, value: unknown): unknown {
  if (typeof value === "number" && !Number.isFinite(value)) {
    throw new FrameError(`non-finite number ${value} has no JSON spelling`);
  }
  return value;
}

export function encodeFrame(frame: Frame): Buffer {
  if (!ACTIONS.includes(frame.action)) {
    throw new FrameError(`unknown action ${String(frame.action)}`);
  }
  const body = JSON.stringify(
    { action: frame.action, payload: frame.payload ?? null },
    rejectNonFinite,
  );
  return Buffer.from(body + "\n", "utf-8");
}

export function decodeFrame(line: Buffer | string): Frame {
  let text: string;
  if (typeof line === "string") {
    text = line;
  } else {
    try {
      text = utf8.decode(line);
    } catch {
      throw new FrameError("frame is not valid UTF-8");
    }
  }
  let document: unknown;
  try {
    document = JSON.parse(text);
  } catch {
    throw new FrameError("frame is not valid JSON");
  }
  if (
    typeof document !== "object" ||
    document === null ||
    Array.isArray(document)
  ) {
    throw new FrameError("frame must be a JSON object");
  }
  const keys = Object.keys(document).sort();
  if (keys.length !== 2 || keys[0] !== "action" || keys[1] !== "payload") {
    throw new FrameError(
      `frame members must be exactly action and payload, got ${keys.join(", ")}`,
    );
  }
  const record = document as { action: unknown; payload: Payload };
  if (
    typeof record.action !== "string" ||
    !ACTIONS.includes(record.action as Action)
  ) {
    throw new FrameError(`unknown action ${JSON.stringify(record.action)}`);
  }
  return { action: record.action as Action, payload: record.payload };
}
