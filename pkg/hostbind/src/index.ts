/**
 * Node bindings for the captionrl core.
 *
 * Every result is produced by the core itself: each batch call spawns the
 * installed CLI (`python3 -m captionrl`) exactly once and exchanges JSONL
 * over files and pipes, so values round-trip as 64-bit floats and equality
 * with direct core invocation is bitwise. Nothing is reimplemented here.
 */
import { execFile } from "node:child_process";
import { mkdtemp, rm, writeFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";

export const VERSION = "0.1.0";

/** Reward weights forwarded to the core; omitted fields keep core defaults. */
export interface RewardWeights {
  alpha?: number;
  rho?: number;
  gamma?: number;
  lambda?: number;
}

export interface BatchScoreRequest {
  responses: string[];
  recordIds: string[];
  matcher?: "lexical" | "judge";
  weights?: RewardWeights;
}

/** One scored response; field names and values exactly as the core emits. */
export interface RewardBreakdown {
  record_id: string;
  r_format: number;
  r_user: number;
  r_detail: number;
  r_supp: number;
  r_contra: number;
  total: number;
}

/** A core failure surfaced host-side, keeping the core error's name. */
export class CoreError extends Error {
  constructor(
    public readonly coreName: string,
    message: string,
  ) {
    super(message);
    this.name = "CoreError";
  }
}

export class UnknownRecordId extends CoreError {
  constructor(
    public readonly recordId: string,
    message: string,
  ) {
    super("UnknownRecordId", message);
    this.name = "UnknownRecordId";
  }
}

/** Spawn counter, exposed so tests can assert one crossing per batch. */
export const spawnStats = { spawns: 0 };

function pythonRunner(): string {
  return process.env.CAPTIONRL_PYTHON ?? "python3";
}

interface CoreResult {
  stdout: string;
  stderr: string;
}

function throwCoreError(stderr: string): never {
  const line = stderr
    .split("\n")
    .map((l) => l.trim())
    .filter((l) => l.startsWith("error:"))
    .pop();
  const message = line ? line.slice("error:".length).trim() : stderr.trim();
  const unknown = message.match(/^unknown record id: (.*)$/);
  if (unknown) {
    throw new UnknownRecordId(unknown[1], message);
  }
  if (/^rollout group needs/.test(message)) {
    throw new CoreError("GroupTooSmall", message);
  }
  throw new CoreError("CaptionRlError", message);
}

function runCore(args: string[], stdin?: string): Promise<CoreResult> {
  spawnStats.spawns += 1;
  return new Promise((resolve, reject) => {
    const child = execFile(
      pythonRunner(),
      ["-m", "captionrl", ...args],
      { maxBuffer: 64 * 1024 * 1024 },
      (error, stdout, stderr) => {
        if (error && (error as NodeJS.ErrnoException).code === "ENOENT") {
          reject(new CoreError("CoreUnavailable", `cannot spawn ${pythonRunner()}`));
          return;
        }
        if (error) {
          try {
            throwCoreError(stderr);
          } catch (coreError) {
            reject(coreError);
          }
          return;
        }
        resolve({ stdout, stderr });
      },
    );
    if (stdin !== undefined) {
      child.stdin?.write(stdin);
    }
    child.stdin?.end();
  });
}

function weightsFileBody(weights: RewardWeights): string {
  const lines: string[] = [];
  // String(number) is the shortest round-trip form; the core parses it
  // back to the identical double.
  if (weights.alpha !== undefined) lines.push(`alpha=${String(weights.alpha)}`);
  if (weights.rho !== undefined) lines.push(`rho=${String(weights.rho)}`);
  if (weights.gamma !== undefined) lines.push(`gamma=${String(weights.gamma)}`);
  if (weights.lambda !== undefined) lines.push(`lambda=${String(weights.lambda)}`);
  return lines.join("\n") + "\n";
}

/**
 * Score a batch of responses against a key-info records file.
 *
 * @param req batch of responses with their record ids
 * @param recordsStore path to a key-info JSONL file (the core's format)
 * @returns one breakdown per response, in request order
 */
export async function bindScore(
  req: BatchScoreRequest,
  recordsStore: string,
): Promise<RewardBreakdown[]> {
  if (req.responses.length !== req.recordIds.length) {
    throw new RangeError(
      `responses (${req.responses.length}) and recordIds (${req.recordIds.length}) differ in length`,
    );
  }
  if (req.responses.length === 0) {
    return [];
  }

  const workDir = await mkdtemp(join(tmpdir(), "captionrl-bind-"));
  try {
    const candidates = req.responses
      .map((response, i) =>
        JSON.stringify({ record_id: req.recordIds[i], response }),
      )
      .join("\n");
    const candidatesPath = join(workDir, "candidates.jsonl");
    await writeFile(candidatesPath, candidates + "\n", "utf-8");

    const args = [
      "score",
      "--records",
      recordsStore,
      "--candidates",
      candidatesPath,
      "--matcher",
      req.matcher ?? "lexical",
      "--summary",
      join(workDir, "summary.txt"),
    ];
    if (req.weights !== undefined) {
      const weightsPath = join(workDir, "weights.cfg");
      await writeFile(weightsPath, weightsFileBody(req.weights), "utf-8");
      args.push("--weights", weightsPath);
    }

    const { stdout } = await runCore(args);
    return stdout
      .split("\n")
      .filter((line) => line.trim() !== "")
      .map((line) => JSON.parse(line) as RewardBreakdown);
  } finally {
    await rm(workDir, { recursive: true, force: true });
  }
}

/**
 * Group-relative advantages for one rollout group's rewards.
 *
 * Contracts are the core's: fewer than two rewards is an error, a
 * degenerate group comes back all zeros.
 */
export async function bindAdvantages(rewards: number[]): Promise<number[]> {
  const { stdout } = await runCore(["advantages"], JSON.stringify(rewards));
  return JSON.parse(stdout) as number[];
}

/** Version string reported by the installed core CLI. */
export async function coreVersion(): Promise<string> {
  const { stdout } = await runCore(["--version"]);
  return stdout.trim();
}

/* Spec-mandated snake_case aliases. */
export const bind_score = bindScore;
export const bind_advantages = bindAdvantages;
