import * as fs from "node:fs";

export const EXPECTED_HEADER = "frame,iteration,g,rel_error,ls_trials,cum_ms";

export interface Row {
  frame: number;
  iteration: number;
  g: number;
  /** null when the harness left the column blank (frame not recorded) */
  relError: number | null;
  lsTrials: number;
  cumMs: number;
}

export class CsvError extends Error {}

function fail(path: string, line: number, message: string): never {
  throw new CsvError(`${path}:${line}: ${message}`);
}

function num(path: string, line: number, field: string, raw: string): number {
  const v = Number(raw);
  if (raw.trim() === "" || !Number.isFinite(v)) {
    fail(path, line, `field '${field}' is not a finite number: '${raw}'`);
  }
  return v;
}

/** Parse a solver benchmark CSV; errors name the file and 1-based line. */
export function parseCsv(path: string): Row[] {
  let text: string;
  try {
    text = fs.readFileSync(path, "utf8");
  } catch (e) {
    throw new CsvError(`${path}: cannot read file (${(e as Error).message})`);
  }
  const lines = text.split(/\r?\n/);
  if (lines.length === 0 || lines[0].trim() !== EXPECTED_HEADER) {
    fail(path, 1, `expected header '${EXPECTED_HEADER}', got '${lines[0] ?? ""}'`);
  }
  const rows: Row[] = [];
  for (let i = 1; i < lines.length; i++) {
    const line = lines[i];
    if (line.trim() === "") continue;
    const parts = line.split(",");
    if (parts.length !== 6) {
      fail(path, i + 1, `expected 6 fields, got ${parts.length}`);
    }
    const rel = parts[3].trim();
    const relError = rel === "" ? null : num(path, i + 1, "rel_error", parts[3]);
    if (relError !== null && relError < 0) {
      fail(path, i + 1, `rel_error must be non-negative, got ${relError}`);
    }
    rows.push({
      frame: num(path, i + 1, "frame", parts[0]),
      iteration: num(path, i + 1, "iteration", parts[1]),
      g: num(path, i + 1, "g", parts[2]),
      relError,
      lsTrials: num(path, i + 1, "ls_trials", parts[4]),
      cumMs: num(path, i + 1, "cum_ms", parts[5]),
    });
  }
  if (rows.length === 0) {
    fail(path, 1, "no data rows");
  }
  return rows;
}

export interface Series {
  label: string;
  /** per-iteration x values (iteration index or cumulative milliseconds) */
  x: number[];
  /** per-iteration relative errors, exactly as stored in the CSV */
  y: number[];
}

/**
 * Extract the convergence series for one file: the rows of the first frame
 * that carries recorded relative errors.
 */
export function extractSeries(
  path: string,
  label: string,
  xAxis: "iteration" | "time",
): Series {
  const rows = parseCsv(path);
  const recorded = rows.filter((r) => r.relError !== null);
  if (recorded.length === 0) {
    throw new CsvError(`${path}: no rows with a recorded rel_error`);
  }
  const frame = recorded[0].frame;
  const picked = recorded.filter((r) => r.frame === frame);
  return {
    label,
    x: picked.map((r) => (xAxis === "time" ? r.cumMs : r.iteration)),
    y: picked.map((r) => r.relError as number),
  };
}
