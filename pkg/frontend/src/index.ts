export { parseCsv, requireColumns, column } from "./csv.js";
export type { Table } from "./csv.js";
export {
  render,
  buildScene,
  linesScene,
  qqScene,
  validateSpec,
  QQ_COLORS,
  QQ_LABELS,
  LINE_COLORS,
} from "./plot.js";
export type { PlotSpec } from "./plot.js";
export { renderScene, linearScale, ticks } from "./svg.js";
export type { Scene, Series } from "./svg.js";
