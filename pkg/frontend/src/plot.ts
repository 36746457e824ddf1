import { readFileSync, writeFileSync } from "node:fs";

import { Table, column, parseCsv, requireColumns } from "./csv.js";
import { Scene, Series, renderScene } from "./svg.js";

/** Figure colors follow the QQ convention: aggregate approximation blue,
 * client approximation green, independent-increment baseline orange. */
export const QQ_COLORS: Record<string, string> = {
  q_aggr: "#1f77b4",
  q_client: "#2ca02c",
  q_fclt: "#ff7f0e",
};

export const QQ_LABELS: Record<string, string> = {
  q_aggr: "Aggr-GA",
  q_client: "Client-GA",
  q_fclt: "f-CLT",
};

/** Categorical palette for grouped line figures. */
export const LINE_COLORS = [
  "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

export interface PlotSpec {
  input: string;
  kind: "lines" | "qq";
  output: string;
  x?: string;
  y?: string;
  group?: string;
  xlabel?: string;
  ylabel?: string;
}

export function validateSpec(raw: Record<string, unknown>): PlotSpec {
  for (const field of ["input", "kind", "output"]) {
    if (typeof raw[field] !== "string" || raw[field] === "") {
      throw new Error(`plot spec needs a non-empty "${field}" field`);
    }
  }
  const kind = raw.kind as string;
  if (kind !== "lines" && kind !== "qq") {
    throw new Error(`unknown figure kind "${kind}" (expected lines or qq)`);
  }
  const spec: PlotSpec = {
    input: raw.input as string,
    kind,
    output: raw.output as string,
  };
  for (const field of ["x", "y", "group", "xlabel", "ylabel"] as const) {
    if (raw[field] !== undefined) {
      if (typeof raw[field] !== "string") {
        throw new Error(`plot spec field "${field}" must be a string`);
      }
      spec[field] = raw[field] as string;
    }
  }
  return spec;
}

/** Fill in x/y/group from the known experiment schemas when not given. */
function resolveAxes(table: Table, spec: PlotSpec): {
  x: string;
  y: string;
  group?: string;
} {
  if (spec.x && spec.y) {
    return { x: spec.x, y: spec.y, group: spec.group };
  }
  if (table.columns.includes("d_tilde_c")) {
    const group =
      spec.group ??
      (table.columns.includes("rho") ? "rho" : "tau");
    return { x: spec.x ?? "n", y: spec.y ?? "d_tilde_c", group };
  }
  if (table.columns.includes("d_dagger_c")) {
    return { x: spec.x ?? "n", y: spec.y ?? "d_dagger_c", group: spec.group ?? "r" };
  }
  if (table.columns.includes("detect_prob")) {
    return { x: spec.x ?? "mu", y: spec.y ?? "detect_prob", group: spec.group };
  }
  throw new Error(
    `cannot infer axes for columns ${table.columns.join(", ")}; ` +
      `set "x" and "y" in the plot spec`,
  );
}

function fmtGroupValue(value: number): string {
  return Number(value.toPrecision(6)).toString();
}

export function linesScene(table: Table, spec: PlotSpec): Scene {
  const axes = resolveAxes(table, spec);
  requireColumns(table, [axes.x, axes.y, ...(axes.group ? [axes.group] : [])]);
  const series: Series[] = [];
  if (axes.group) {
    const values = [...new Set(column(table, axes.group))];
    values.forEach((value, i) => {
      const rows = table.rows.filter((row) => row[axes.group!] === value);
      series.push({
        label: `${axes.group}=${fmtGroupValue(value)}`,
        color: LINE_COLORS[i % LINE_COLORS.length],
        mode: "line",
        points: rows.map((row) => [row[axes.x], row[axes.y]]),
      });
    });
  } else {
    series.push({
      label: axes.y,
      color: LINE_COLORS[0],
      mode: "line",
      points: table.rows.map((row) => [row[axes.x], row[axes.y]]),
    });
  }
  return {
    series,
    xlabel: spec.xlabel ?? axes.x,
    ylabel: spec.ylabel ?? axes.y,
  };
}

/** Base quantiles on x, each approximation's quantiles on y, plus the
 * identity diagonal. */
export function qqScene(table: Table, spec: PlotSpec): Scene {
  requireColumns(table, ["q_base", "q_fclt", "q_aggr", "q_client"]);
  const base = column(table, "q_base");
  const series: Series[] = (["q_aggr", "q_client", "q_fclt"] as const).map(
    (name) => ({
      label: QQ_LABELS[name],
      color: QQ_COLORS[name],
      mode: "scatter",
      points: column(table, name).map(
        (q, i): [number, number] => [base[i], q],
      ),
    }),
  );
  return {
    series,
    xlabel: spec.xlabel ?? "base quantile",
    ylabel: spec.ylabel ?? "approximation quantile",
    diagonal: true,
  };
}

export function buildScene(table: Table, spec: PlotSpec): Scene {
  return spec.kind === "qq" ? qqScene(table, spec) : linesScene(table, spec);
}

/** Read the CSV, build the figure, and write the SVG file. */
export function render(spec: PlotSpec): string {
  const table = parseCsv(readFileSync(spec.input, "utf-8"));
  const svg = renderScene(buildScene(table, spec));
  writeFileSync(spec.output, svg + "\n");
  return spec.output;
}
