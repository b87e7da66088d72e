/**
 * Canonical interchange formats shared by both converters.
 *
 * Canonical records: UTF-8 JSONL, one object per line, kind "item" or
 * "interaction". Schema registry: a JSON document listing attributes as
 * (name, modality, level, parse rule). Both match the loader on the
 * Python side byte for byte (sorted keys, "\n" line endings).
 */

import * as fs from "fs";

export type Modality =
  | "text"
  | "categorical"
  | "image"
  | "number"
  | "timestamp"
  | "geopoint";

export interface SchemaAttribute {
  name: string;
  modality: Modality;
  level: "item" | "interaction";
  parse: Record<string, unknown>;
}

export interface ItemRecord {
  kind: "item";
  item_id: string;
  attributes: Record<string, unknown>;
}

export interface Review {
  title?: string;
  text?: string;
  rating?: number;
  image_refs?: string[];
}

export interface InteractionRecord {
  kind: "interaction";
  user_id: string;
  item_id: string;
  timestamp: number;
  location?: { lat: number; lon: number };
  review?: Review;
}

export type CanonicalRecord = ItemRecord | InteractionRecord;

/** JSON with sorted keys, matching Python's json.dumps(sort_keys=True). */
export function stableStringify(value: unknown): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(stableStringify).join(", ") + "]";
  }
  const entries = Object.keys(value as Record<string, unknown>)
    .sort()
    .map(
      (k) =>
        JSON.stringify(k) +
        ": " +
        stableStringify((value as Record<string, unknown>)[k]),
    );
  return "{" + entries.join(", ") + "}";
}

export function writeJsonl(path: string, records: CanonicalRecord[]): void {
  fs.writeFileSync(
    path,
    records.map((r) => stableStringify(r)).join("\n") + (records.length ? "\n" : ""),
    "utf-8",
  );
}

export function writeRegistry(path: string, attributes: SchemaAttribute[]): void {
  fs.writeFileSync(path, JSON.stringify({ attributes }, null, 1) + "\n", "utf-8");
}

/** Read a JSONL file line by line; malformed lines are reported, not thrown. */
export function readJsonl(
  path: string,
): { records: unknown[]; skipped: { line: number; error: string }[] } {
  const records: unknown[] = [];
  const skipped: { line: number; error: string }[] = [];
  const text = fs.readFileSync(path, "utf-8");
  let lineno = 0;
  for (const line of text.split("\n")) {
    lineno += 1;
    const trimmed = line.trim();
    if (!trimmed) continue;
    try {
      records.push(JSON.parse(trimmed));
    } catch (e) {
      skipped.push({ line: lineno, error: String(e) });
    }
  }
  return { records, skipped };
}

/** Parse "$6.99", "6.99", 6.99 -> 6.99; returns undefined when unparseable. */
export function parsePrice(raw: unknown): number | undefined {
  if (typeof raw === "number" && Number.isFinite(raw)) return raw;
  if (typeof raw === "string") {
    const cleaned = raw.replace(/^[\s$€£¥]+/, "").replace(/,/g, "").trim();
    const value = Number(cleaned);
    if (cleaned && Number.isFinite(value)) return value;
  }
  return undefined;
}

/** Flatten a nested detail dictionary into one text blob. */
export function flattenDetails(details: Record<string, unknown>): string {
  return Object.entries(details)
    .map(([k, v]) => `${k}: ${typeof v === "object" ? JSON.stringify(v) : v}`)
    .join(" ");
}

export interface ConversionReport {
  input_lines: number;
  emitted: number;
  skipped: number;
  skip_reasons: Record<string, number>;
}

export function emptyReport(): ConversionReport {
  return { input_lines: 0, emitted: 0, skipped: 0, skip_reasons: {} };
}

export function recordSkip(report: ConversionReport, reason: string): void {
  report.skipped += 1;
  report.skip_reasons[reason] = (report.skip_reasons[reason] ?? 0) + 1;
}

/** input = emitted + skipped must reconcile exactly. */
export function assertReconciled(report: ConversionReport, label: string): void {
  if (report.input_lines !== report.emitted + report.skipped) {
    throw new Error(
      `${label}: reconciliation failed: ${report.input_lines} input != ` +
        `${report.emitted} emitted + ${report.skipped} skipped`,
    );
  }
}
