// A recorded-response fake server: replays the fixture entries in order and
// fails loudly when the app deviates from the recorded request sequence.

import { readFileSync } from "node:fs";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";
import type { Transport } from "../src/api/client.js";

function canonical(value: unknown): string {
  if (value !== null && typeof value === "object" && !Array.isArray(value)) {
    const entries = Object.entries(value as Record<string, unknown>).sort(([a], [b]) =>
      a.localeCompare(b),
    );
    return `{${entries.map(([k, v]) => `${JSON.stringify(k)}:${canonical(v)}`).join(",")}}`;
  }
  if (Array.isArray(value)) {
    return `[${value.map(canonical).join(",")}]`;
  }
  return JSON.stringify(value);
}

export interface FixtureEntry {
  method: string;
  path: string;
  body: unknown;
  status: number;
  response: unknown;
}

export function loadFixtures(name: string): FixtureEntry[] {
  const here = dirname(fileURLToPath(import.meta.url));
  return JSON.parse(readFileSync(join(here, "fixtures", name), "utf-8"));
}

export class FixtureServer {
  private cursor = 0;
  readonly calls: { method: string; path: string }[] = [];

  constructor(private readonly entries: FixtureEntry[]) {}

  get transport(): Transport {
    return async (method, path, body) => {
      const expected = this.entries[this.cursor];
      if (!expected) {
        throw new Error(`unexpected request beyond fixture end: ${method} ${path}`);
      }
      if (expected.method !== method || expected.path !== path) {
        throw new Error(
          `request #${this.cursor} mismatch: got ${method} ${path}, ` +
            `fixture has ${expected.method} ${expected.path}`,
        );
      }
      if (expected.body !== null && canonical(body) !== canonical(expected.body)) {
        throw new Error(
          `request #${this.cursor} body mismatch for ${method} ${path}: ` +
            `${JSON.stringify(body)} != ${JSON.stringify(expected.body)}`,
        );
      }
      this.cursor += 1;
      this.calls.push({ method, path });
      return { status: expected.status, body: expected.response };
    };
  }

  get consumed(): number {
    return this.cursor;
  }

  get remaining(): number {
    return this.entries.length - this.cursor;
  }

  /** The recorded response for the i-th consumed entry. */
  entry(i: number): FixtureEntry {
    const e = this.entries[i];
    if (!e) throw new Error(`no fixture entry ${i}`);
    return e;
  }
}
