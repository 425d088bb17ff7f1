import { describe, expect, it } from "vitest";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { CsvError, EXPECTED_HEADER, extractSeries, parseCsv } from "../src/csv.js";
import { LOG_FLOOR, extractRendered, renderConvergence } from "../src/plot.js";
import { main, parseArgs } from "../src/cli.js";

const tmp = fs.mkdtempSync(path.join(os.tmpdir(), "plots-"));

function writeCsv(name: string, rows: string[]): string {
  const p = path.join(tmp, name);
  fs.writeFileSync(p, [EXPECTED_HEADER, ...rows, ""].join("\n"));
  return p;
}

/** rows mimicking a recorded frame: rel_error decays geometrically */
function convergenceRows(frame: number, n: number, r0: number, decay: number): string[] {
  const rows: string[] = [];
  for (let i = 1; i <= n; i++) {
    const rel = r0 * Math.pow(decay, i - 1);
    rows.push(`${frame},${i},${(100 / i).toPrecision(17)},${rel},1,${(2.5 * i).toFixed(3)}`);
  }
  return rows;
}

describe("parseCsv", () => {
  it("reads well-formed rows including blank rel_error", () => {
    const p = writeCsv("ok.csv", [
      "0,1,12.5,,2,3.100",
      "1,1,10.0,0.5,1,2.000",
      "1,2,9.0,0.25,1,4.000",
    ]);
    const rows = parseCsv(p);
    expect(rows).toHaveLength(3);
    expect(rows[0].relError).toBeNull();
    expect(rows[1].relError).toBe(0.5);
    expect(rows[2].cumMs).toBe(4.0);
  });

  it("rejects a wrong header naming file and line 1", () => {
    const p = path.join(tmp, "bad_header.csv");
    fs.writeFileSync(p, "a,b,c\n1,2,3\n");
    expect(() => parseCsv(p)).toThrowError(CsvError);
    expect(() => parseCsv(p)).toThrowError(new RegExp(`bad_header\\.csv:1`));
  });

  it("names the file and line of a malformed row", () => {
    const p = writeCsv("bad_row.csv", ["0,1,1.0,0.5,1,2.0", "0,2,oops,0.25,1,4.0"]);
    expect(() => parseCsv(p)).toThrowError(/bad_row\.csv:3: field 'g'/);
  });

  it("rejects a row with the wrong number of fields", () => {
    const p = writeCsv("short_row.csv", ["0,1,1.0,0.5,1"]);
    expect(() => parseCsv(p)).toThrowError(/short_row\.csv:2: expected 6 fields, got 5/);
  });

  it("rejects an empty file", () => {
    const p = path.join(tmp, "empty.csv");
    fs.writeFileSync(p, "");
    expect(() => parseCsv(p)).toThrowError(/empty\.csv:1/);
  });
});

describe("extractSeries", () => {
  it("picks the first recorded frame and skips blank rows", () => {
    const p = writeCsv("mixed.csv", [
      "0,1,5.0,,1,1.0",
      ...convergenceRows(3, 4, 0.5, 0.1),
      ...convergenceRows(7, 4, 0.9, 0.5),
    ]);
    const s = extractSeries(p, "run", "iteration");
    expect(s.x).toEqual([1, 2, 3, 4]);
    expect(s.y[0]).toBe(0.5);
    expect(s.y).toHaveLength(4);
  });

  it("uses cumulative milliseconds when the x axis is time", () => {
    const p = writeCsv("timed.csv", convergenceRows(0, 3, 0.1, 0.1));
    const s = extractSeries(p, "run", "time");
    expect(s.x).toEqual([2.5, 5.0, 7.5]);
  });
});

describe("renderConvergence", () => {
  it("writes a nonzero SVG for a single series of 10 rows", () => {
    const p = writeCsv("single.csv", convergenceRows(0, 10, 1.0, 0.3));
    const out = path.join(tmp, "single.svg");
    renderConvergence({ csvs: [{ path: p, label: "solver" }], out, xAxis: "iteration" });
    const stat = fs.statSync(out);
    expect(stat.size).toBeGreaterThan(0);
    expect(fs.readFileSync(out, "utf8")).toContain("<svg");
  });

  it("round-trips: the rendered series equal the CSV values exactly", () => {
    const a = writeCsv("rt_a.csv", convergenceRows(2, 8, 0.7, 0.2));
    const b = writeCsv("rt_b.csv", convergenceRows(2, 8, 0.9, 0.05));
    const out = path.join(tmp, "rt.svg");
    renderConvergence(
      { csvs: [{ path: a, label: "A" }, { path: b, label: "B" }], out, xAxis: "iteration" },
    );
    const rendered = extractRendered(out);
    expect(rendered).toHaveLength(2);
    const sa = extractSeries(a, "A", "iteration");
    const sb = extractSeries(b, "B", "iteration");
    expect(rendered[0].label).toBe("A");
    expect(rendered[0].x).toEqual(sa.x);
    expect(rendered[0].y).toEqual(sa.y);
    expect(rendered[1].label).toBe("B");
    expect(rendered[1].y).toEqual(sb.y);
  });

  it("draws two identical series with identical y data", () => {
    const p = writeCsv("twin.csv", convergenceRows(0, 6, 0.4, 0.25));
    const out = path.join(tmp, "twin.svg");
    renderConvergence(
      { csvs: [{ path: p, label: "one" }, { path: p, label: "two" }], out, xAxis: "iteration" },
    );
    const [one, two] = extractRendered(out);
    expect(one.y).toEqual(two.y);
    // overlapping curves: identical pixel coordinates
    const svg = fs.readFileSync(out, "utf8");
    const pts = [...svg.matchAll(/points="([^"]*)"/g)].map((m) => m[1]);
    expect(pts[0]).toBe(pts[1]);
  });

  it("clamps rel_error 0 to the 1e-16 floor on the log axis", () => {
    const rows = convergenceRows(0, 5, 1e-4, 0.1);
    rows.push("0,6,0.5,0,1,15.000");
    const p = writeCsv("zero.csv", rows);
    const out = path.join(tmp, "zero.svg");
    renderConvergence({ csvs: [{ path: p, label: "z" }], out, xAxis: "iteration" });
    // the data attribute keeps the exact 0 ...
    const [s] = extractRendered(out);
    expect(s.y[5]).toBe(0);
    // ... while the plotted point sits at the clamp, inside the axis box
    const svg = fs.readFileSync(out, "utf8");
    expect(svg).toContain(`1e${Math.log10(LOG_FLOOR)}`);
    const pts = svg.match(/points="([^"]*)"/)![1].split(" ");
    const lastY = Number(pts[pts.length - 1].split(",")[1]);
    expect(Number.isFinite(lastY)).toBe(true);
    expect(lastY).toBeLessThanOrEqual(460);
  });

  it("requires at least one series", () => {
    expect(() =>
      renderConvergence({ csvs: [], out: path.join(tmp, "none.svg"), xAxis: "iteration" }),
    ).toThrowError(/at least one/);
  });
});

describe("solver sweep fixtures", () => {
  const fixtures = path.join(__dirname, "fixtures");

  it("renders a two-series log figure from real benchmark output", () => {
    const pd = path.join(fixtures, "twist_pd_qn.csv");
    const lb = path.join(fixtures, "twist_lbfgs.csv");
    const out = path.join(tmp, "sweep.svg");
    renderConvergence(
      {
        csvs: [{ path: pd, label: "base method" }, { path: lb, label: "L-BFGS" }],
        out,
        xAxis: "iteration",
      },
    );
    const rendered = extractRendered(out);
    expect(rendered).toHaveLength(2);
    // both series decay; the quasi-Newton run reaches a lower error
    for (const s of rendered) {
      expect(s.y[0]).toBeGreaterThan(s.y[s.y.length - 1]);
    }
    expect(rendered[1].y[rendered[1].y.length - 1]).toBeLessThan(
      rendered[0].y[rendered[0].y.length - 1],
    );
    // round-trip against the source files
    expect(rendered[0].y).toEqual(extractSeries(pd, "base method", "iteration").y);
    expect(rendered[1].y).toEqual(extractSeries(lb, "L-BFGS", "iteration").y);
  });

  it("renders the same sweep against wall time", () => {
    const out = path.join(tmp, "sweep_time.svg");
    renderConvergence(
      {
        csvs: [{ path: path.join(fixtures, "twist_lbfgs.csv"), label: "L-BFGS" }],
        out,
        xAxis: "time",
      },
    );
    const [s] = extractRendered(out);
    // cumulative milliseconds are strictly increasing
    for (let i = 1; i < s.x.length; i++) expect(s.x[i]).toBeGreaterThan(s.x[i - 1]);
  });
});

describe("cli", () => {
  it("parses repeated --csv with labels, --x and --out", () => {
    const spec = parseArgs([
      "--csv", "a.csv:labelA", "--csv", "b.csv:labelB", "--x", "time", "--out", "fig.svg",
    ]);
    expect(spec.csvs).toEqual([
      { path: "a.csv", label: "labelA" },
      { path: "b.csv", label: "labelB" },
    ]);
    expect(spec.xAxis).toBe("time");
    expect(spec.out).toBe("fig.svg");
  });

  it("defaults the x axis to iteration", () => {
    expect(parseArgs(["--csv", "a.csv:A", "--out", "o.svg"]).xAxis).toBe("iteration");
  });

  it.each([
    [["--out", "o.svg"], /at least one --csv/],
    [["--csv", "a.csv:A"], /--out is required/],
    [["--csv", "nolabel.csv", "--out", "o.svg"], /path:label/],
    [["--csv", "a.csv:A", "--x", "bananas", "--out", "o.svg"], /iteration/],
    [["--frobnicate"], /unknown argument/],
  ])("rejects bad arguments %j", (argv, re) => {
    expect(() => parseArgs(argv as string[])).toThrowError(re);
  });

  it("runs end to end and reports malformed input with file and line", () => {
    const good = writeCsv("cli_ok.csv", convergenceRows(1, 5, 0.3, 0.2));
    const out = path.join(tmp, "cli.svg");
    expect(main(["--csv", `${good}:run`, "--out", out])).toBe(0);
    expect(fs.existsSync(out)).toBe(true);

    const bad = writeCsv("cli_bad.csv", ["0,1,nope,0.5,1,2.0"]);
    expect(main(["--csv", `${bad}:run`, "--out", out])).toBe(1);
  });
});
