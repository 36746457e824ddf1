// Minimal declarations for the papaparse API surface used here; the full
// @types/papaparse package is unavailable from the sandbox mirror.
declare module "papaparse" {
  export interface ParseError {
    type: string;
    code: string;
    message: string;
    row?: number;
  }

  export interface ParseMeta {
    fields?: string[];
    delimiter: string;
    linebreak: string;
    aborted: boolean;
    truncated: boolean;
  }

  export interface ParseResult<T> {
    data: T[];
    errors: ParseError[];
    meta: ParseMeta;
  }

  export interface ParseConfig {
    header?: boolean;
    dynamicTyping?: boolean;
    skipEmptyLines?: boolean | "greedy";
    comments?: string | false;
    delimiter?: string;
  }

  export function parse<T>(input: string, config?: ParseConfig): ParseResult<T>;

  const Papa: { parse: typeof parse };
  export default Papa;
}
