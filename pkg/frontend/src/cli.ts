#!/usr/bin/env node
import { CsvError } from "./csv.js";
import { PlotSpec, renderConvergence } from "./plot.js";

const USAGE =
  "usage: plot --csv a.csv:labelA [--csv b.csv:labelB ...] [--x iteration|time] --out fig.svg";

export function parseArgs(argv: string[]): PlotSpec {
  const csvs: { path: string; label: string }[] = [];
  let out: string | undefined;
  let xAxis: "iteration" | "time" = "iteration";
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    const value = () => {
      if (i + 1 >= argv.length) throw new Error(`${arg} requires a value\n${USAGE}`);
      return argv[++i];
    };
    if (arg === "--csv") {
      const v = value();
      const sep = v.lastIndexOf(":");
      if (sep <= 0 || sep === v.length - 1) {
        throw new Error(`--csv expects path:label, got '${v}'\n${USAGE}`);
      }
      csvs.push({ path: v.slice(0, sep), label: v.slice(sep + 1) });
    } else if (arg === "--x") {
      const v = value();
      if (v !== "iteration" && v !== "time") {
        throw new Error(`--x must be 'iteration' or 'time', got '${v}'\n${USAGE}`);
      }
      xAxis = v;
    } else if (arg === "--out") {
      out = value();
    } else {
      throw new Error(`unknown argument '${arg}'\n${USAGE}`);
    }
  }
  if (csvs.length === 0) throw new Error(`at least one --csv is required\n${USAGE}`);
  if (!out) throw new Error(`--out is required\n${USAGE}`);
  return { csvs, out, xAxis };
}

export function main(argv: string[]): number {
  let spec: PlotSpec;
  try {
    spec = parseArgs(argv);
    renderConvergence(spec);
  } catch (e) {
    if (e instanceof CsvError || e instanceof Error) {
      console.error(`plot: ${e.message}`);
      return 1;
    }
    throw e;
  }
  console.log(`wrote ${spec.out}`);
  return 0;
}

if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(main(process.argv.slice(2)));
}
