import Papa from "papaparse";

export interface Table {
  columns: string[];
  rows: Record<string, number>[];
  /** Leading "# key = value" comment lines, without the marker. */
  comments: string[];
}

/** Parse an experiment CSV: leading "#" lines are run metadata, the first
 * non-comment line is the header, every value is numeric. */
export function parseCsv(text: string): Table {
  const comments: string[] = [];
  const body: string[] = [];
  for (const line of text.split(/\r?\n/)) {
    if (line.startsWith("#")) {
      comments.push(line.replace(/^#\s?/, ""));
    } else if (line.trim() !== "") {
      body.push(line);
    }
  }
  if (body.length === 0) {
    throw new Error("empty CSV: no header line found");
  }
  const parsed = Papa.parse<Record<string, number>>(body.join("\n"), {
    header: true,
    dynamicTyping: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const first = parsed.errors[0];
    throw new Error(`CSV parse error at row ${first.row}: ${first.message}`);
  }
  const columns = parsed.meta.fields ?? [];
  if (parsed.data.length === 0) {
    throw new Error("empty CSV: header present but no data rows");
  }
  return { columns, rows: parsed.data, comments };
}

/** Assert that every named column exists; the diagnostic names the missing
 * column and lists what is available. */
export function requireColumns(table: Table, names: string[]): void {
  for (const name of names) {
    if (!table.columns.includes(name)) {
      throw new Error(
        `missing column "${name}"; available columns: ${table.columns.join(", ")}`,
      );
    }
  }
}

export function column(table: Table, name: string): number[] {
  requireColumns(table, [name]);
  return table.rows.map((row) => row[name]);
}
