/**
 * FuzzedDataProvider inverse-encoder binding.
 *
 * Producer calls mirror the consumer calls of a fuzz harness; `finalize()`
 * hands the accumulated call list to the `testforge encode` CLI and returns
 * the buffer the same-dialect consumer decodes to exactly the requested
 * values. Semantic errors (producing after the remaining bytes, unproducible
 * floats, range violations) cross the process boundary as typed
 * `FdpSemanticError`s carrying the stable error code and the offending call
 * index.
 *
 * No encoding logic lives on this side: the binding only owns call-list
 * serialization and byte plumbing.
 */

import { spawnSync } from "node:child_process";

export type Dialect = "llvm" | "jazzer";

export type ErrorCode =
  | "produce_after_exhaustion"
  | "value_not_producible"
  | "range_violation"
  | "non_finite_float";

export class FdpSemanticError extends Error {
  readonly code: ErrorCode;
  readonly callIndex: number | null;

  constructor(code: ErrorCode, callIndex: number | null, message: string) {
    super(message);
    this.name = "FdpSemanticError";
    this.code = code;
    this.callIndex = callIndex;
  }
}

export class EncoderProcessError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "EncoderProcessError";
  }
}

export type StringPolicy = "bounded" | "remaining";

/** Wire entries for the CLI's call-list document, one per producer call. */
type WireCall = Record<string, unknown>;

export interface EncoderOptions {
  /**
   * Command prefix that reaches the encoder CLI. Defaults to
   * `["python3", "-m", "testforge"]`; override with e.g. an installed
   * `testforge` entry point, or set TESTFORGE_CLI to a space-separated
   * command.
   */
  command?: string[];
}

function defaultCommand(): string[] {
  const fromEnv = process.env.TESTFORGE_CLI;
  if (fromEnv && fromEnv.trim()) {
    return fromEnv.trim().split(/\s+/);
  }
  return ["python3", "-m", "testforge"];
}

function wireBytes(data: Uint8Array): string {
  return "hex:" + Buffer.from(data).toString("hex");
}

function wireInt(value: number | bigint): string | number {
  // 64-bit values do not survive JSON numbers; decimal strings do, and the
  // CLI parses either form.
  if (typeof value === "bigint") return value.toString();
  if (!Number.isSafeInteger(value)) {
    throw new RangeError(`integer value ${value} is not exactly representable; pass a bigint`);
  }
  return value;
}

function wireFloat(value: number): string | number {
  if (Number.isFinite(value)) return value;
  return value.toString(); // "NaN" / "Infinity" / "-Infinity" parse as floats
}

export function newEncoder(dialect: Dialect, options?: EncoderOptions): FdpEncoder {
  return new FdpEncoder(dialect, options);
}

export class FdpEncoder {
  readonly dialect: Dialect;
  private readonly command: string[];
  private readonly calls: WireCall[] = [];

  constructor(dialect: Dialect, options?: EncoderOptions) {
    if (dialect !== "llvm" && dialect !== "jazzer") {
      throw new RangeError(`dialect must be "llvm" or "jazzer", got ${dialect}`);
    }
    this.dialect = dialect;
    this.command = options?.command ?? defaultCommand();
  }

  get callCount(): number {
    return this.calls.length;
  }

  private push(call: WireCall, checked: boolean): this {
    if (!checked) call.checked = false;
    this.calls.push(call);
    return this;
  }

  produceBytes(data: Uint8Array, checked = true): this {
    return this.push({ produce: "bytes", value: wireBytes(data) }, checked);
  }

  produceRemainingBytes(data: Uint8Array, checked = true): this {
    return this.push({ produce: "remaining_bytes", value: wireBytes(data) }, checked);
  }

  produceString(text: string, policy: StringPolicy = "bounded", checked = true): this {
    const call: WireCall = { produce: "string", value: text };
    if (policy !== "bounded") call.policy = policy;
    return this.push(call, checked);
  }

  produceBool(value: boolean, checked = true): this {
    return this.push({ produce: "bool", value }, checked);
  }

  produceInt(width: 8 | 16 | 32 | 64, signed: boolean,
             value: number | bigint, checked = true): this {
    return this.push(
      { produce: "int", width, signed, value: wireInt(value) }, checked);
  }

  produceIntInRange(width: 8 | 16 | 32 | 64, signed: boolean,
                    min: number | bigint, max: number | bigint,
                    value: number | bigint, checked = true): this {
    return this.push({
      produce: "int_in_range", width, signed,
      min: wireInt(min), max: wireInt(max), value: wireInt(value),
    }, checked);
  }

  produceFloatInRange(min: number, max: number, value: number, checked = true): this {
    return this.push({
      produce: "float_in_range",
      min: wireFloat(min), max: wireFloat(max), value: wireFloat(value),
    }, checked);
  }

  produceProbability(value: number, checked = true): this {
    return this.push({ produce: "probability", value: wireFloat(value) }, checked);
  }

  /** The call-list document the CLI consumes; useful for debugging. */
  toJSON(): WireCall[] {
    return [...this.calls];
  }

  finalize(): Uint8Array {
    const [executable, ...prefix] = this.command;
    const args = [...prefix, "encode", "--dialect", this.dialect, "--calls", "-"];
    const result = spawnSync(executable, args, {
      input: JSON.stringify(this.calls),
      maxBuffer: 64 * 1024 * 1024,
    });
    if (result.error) {
      throw new EncoderProcessError(`cannot run ${this.command.join(" ")}: ${result.error.message}`);
    }
    if (result.status === 0) {
      return new Uint8Array(result.stdout);
    }
    throw decodeFailure(result.stderr.toString("utf-8"), result.status);
  }
}

function decodeFailure(stderr: string, status: number | null): Error {
  try {
    const parsed = JSON.parse(stderr) as {
      error?: { code?: string; call_index?: number | null; message?: string };
    };
    const err = parsed.error;
    if (err && typeof err.code === "string") {
      return new FdpSemanticError(
        err.code as ErrorCode,
        typeof err.call_index === "number" ? err.call_index : null,
        err.message ?? err.code,
      );
    }
  } catch {
    // not the JSON error channel; fall through to a process error
  }
  return new EncoderProcessError(
    `encoder exited with status ${status}: ${stderr.trim()}`);
}
