/**
 * Prefix-notation expression parsing and evaluation.
 *
 * The grammar is the wire grammar: space-separated tokens, operator first,
 * numeric literals allowed as terminals.  Arities come from the task's
 * primitive table, so the parser itself stays tiny.
 */

export class ParseError extends Error {}

// matches what mainstream float formatters emit for finite values;
// deliberately excludes hex, "Infinity" and "NaN" spellings
const LITERAL = /^-?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$/;

export type Env = Readonly<Record<string, number>>;

export interface Expr {
  /** Node count; identical to the token count of the prefix encoding. */
  readonly length: number;
  evaluate(env: Env): number;
}

type Node =
  | { kind: "call"; op: string; args: Node[] }
  | { kind: "name"; name: string }
  | { kind: "literal"; value: number };

const OPS: Record<string, (args: number[]) => number> = {
  Add: ([a, b]) => a! + b!,
  Sub: ([a, b]) => a! - b!,
  Mul: ([a, b]) => a! * b!,
};

export function parsePrefix(
  text: string,
  arities: Readonly<Record<string, number>>,
): Expr {
  const tokens = text.split(" ").filter((t) => t.length > 0);
  if (tokens.length === 0) {
    throw new ParseError("empty expression");
  }
  let cursor = 0;

  function parseNode(): Node {
    const token = tokens[cursor];
    if (token === undefined) {
      throw new ParseError(`truncated expression: ${text}`);
    }
    cursor += 1;
    const arity = arities[token];
    if (arity !== undefined && arity > 0) {
      if (!(token in OPS)) {
        throw new ParseError(`function ${token} not implemented`);
      }
      const args: Node[] = [];
      for (let i = 0; i < arity; i++) {
        args.push(parseNode());
      }
      return { kind: "call", op: token, args };
    }
    if (arity === 0) {
      return { kind: "name", name: token };
    }
    if (LITERAL.test(token)) {
      return { kind: "literal", value: Number(token) };
    }
    throw new ParseError(`unknown token ${JSON.stringify(token)}`);
  }

  const root = parseNode();
  if (cursor !== tokens.length) {
    throw new ParseError(
      `trailing tokens after a complete expression: ${tokens.slice(cursor).join(" ")}`,
    );
  }
  const size = tokens.length;

  function evalNode(node: Node, env: Env): number {
    switch (node.kind) {
      case "literal":
        return node.value;
      case "name": {
        const value = env[node.name];
        if (value === undefined) {
          throw new ParseError(`unbound terminal ${node.name}`);
        }
        return value;
      }
      case "call":
        return OPS[node.op]!(node.args.map((a) => evalNode(a, env)));
    }
  }

  return {
    length: size,
    evaluate: (env) => evalNode(root, env),
  };
}
