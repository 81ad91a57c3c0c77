/**
 * Data-fitting task definition and scoring.
 *
 * A task bundles the sample set, the primitive table it advertises over
 * CONFIG, and default values for symbolic constants the client leaves
 * unresolved.  Scoring an expression yields a (rmse, length) pair where
 * either slot may be null, the wire spelling of +Infinity.
 */

import { ParseError, parsePrefix } from "./expr.js";

export interface Sample {
  readonly inputs: Readonly<Record<string, number>>;
  readonly target: number;
}

export interface FitTask {
  readonly samples: readonly Sample[];
  /** name -> arity; arity-0 entries are terminals (arguments or constants) */
  readonly primitives: Readonly<Record<string, number>>;
  /** subset of arity-0 primitive names the client may tune */
  readonly constants: readonly string[];
  /** values used when a constant arrives as a bare name token */
  readonly defaults: Readonly<Record<string, number>>;
}

export function makeFitTask(task: FitTask): FitTask {
  for (const sample of task.samples) {
    if (!Number.isFinite(sample.target)) {
      throw new Error(`non-finite target ${sample.target}`);
    }
    for (const [name, value] of Object.entries(sample.inputs)) {
      if (!Number.isFinite(value)) {
        throw new Error(`non-finite input ${name}=${value}`);
      }
    }
  }
  for (const name of task.constants) {
    if (task.primitives[name] !== 0) {
      throw new Error(`constant ${name} must be an arity-0 primitive`);
    }
    if (!Number.isFinite(task.defaults[name] ?? NaN)) {
      throw new Error(`constant ${name} needs a finite default`);
    }
  }
  return task;
}

/** y = 2x + 1 sampled on 21 evenly spaced points of [-1, 1]. */
export function linearTask(): FitTask {
  const samples: Sample[] = [];
  for (let i = 0; i <= 20; i++) {
    const x = (i - 10) / 10;
    samples.push({ inputs: { x }, target: 2 * x + 1 });
  }
  return makeFitTask({
    samples,
    primitives: { Add: 2, Sub: 2, Mul: 2, x: 0, c: 0 },
    constants: ["c"],
    defaults: { c: 1.0 },
  });
}

export type Score = [number | null, number | null];

/**
 * Score one prefix expression against the task.
 *
 * Unparseable text maps to [null, null]: the client reads null as +Infinity,
 * so garbage is dominated rather than fatal.  A parseable expression whose
 * error overflows keeps its real length.
 */
export function scoreExpression(task: FitTask, text: string): Score {
  let expr;
  try {
    expr = parsePrefix(text, task.primitives);
  } catch (err) {
    if (err instanceof ParseError) {
      return [null, null];
    }
    throw err;
  }
  let sumSquares = 0;
  for (const sample of task.samples) {
    const env = { ...task.defaults, ...sample.inputs };
    let predicted;
    try {
      predicted = expr.evaluate(env);
    } catch (err) {
      if (err instanceof ParseError) {
        return [null, expr.length];
      }
      throw err;
    }
    const residual = predicted - sample.target;
    sumSquares += residual * residual;
  }
  const rmse = Math.sqrt(sumSquares / task.samples.length);
  return [Number.isFinite(rmse) ? rmse : null, expr.length];
}
