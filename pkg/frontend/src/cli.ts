import { readFileSync } from "node:fs";
import { parseArgs } from "node:util";

import { PlotSpec, render, validateSpec } from "./plot.js";

const USAGE =
  "usage: plots render --spec <file> | plots <kind> <csv> <out>\n" +
  "  kinds: lines, qq";

/** `plots render --spec <file>` or positional `plots <kind> <csv> <out>`. */
export async function main(argv: string[]): Promise<number> {
  try {
    const { values, positionals } = parseArgs({
      args: argv,
      options: {
        spec: { type: "string" },
        help: { type: "boolean", short: "h" },
      },
      allowPositionals: true,
    });
    if (values.help) {
      console.log(USAGE);
      return 0;
    }
    let spec: PlotSpec;
    if (positionals[0] === "render" || values.spec !== undefined) {
      if (values.spec === undefined) {
        throw new Error(`render needs --spec <file>\n${USAGE}`);
      }
      const raw = JSON.parse(readFileSync(values.spec, "utf-8"));
      spec = validateSpec(raw);
    } else {
      if (positionals.length !== 3) {
        throw new Error(USAGE);
      }
      spec = validateSpec({
        kind: positionals[0],
        input: positionals[1],
        output: positionals[2],
      });
    }
    const out = render(spec);
    console.log(out);
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}
