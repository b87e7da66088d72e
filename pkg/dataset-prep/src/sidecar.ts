/**
 * Feature-sidecar export: one {entity_id, attribute, vector} JSONL row per
 * (entity, attribute), in the format the training pipeline's embedder
 * registry consumes.
 *
 * The built-in "hash" encoder is deterministic and dependency-free (a
 * seeded pseudo-vector per reference), useful for format plumbing and
 * tests. Real encoders (CLIP-style image towers, sentence encoders) are
 * optional dependencies: when the module is not installed the command
 * reports which package is missing and becomes unavailable.
 */

import * as crypto from "crypto";
import * as fs from "fs";

import { readJsonl, stableStringify } from "./canonical.js";

export interface SidecarRow {
  entity_id: string;
  attribute: string;
  vector: number[];
}

/** Deterministic unit-norm pseudo-vector from sha256 stream of the key. */
export function hashVector(key: string, width: number): number[] {
  const out: number[] = [];
  let counter = 0;
  while (out.length < width) {
    const digest = crypto
      .createHash("sha256")
      .update(`${key}:${counter}`)
      .digest();
    for (let i = 0; i + 8 <= digest.length && out.length < width; i += 8) {
      // uniform in [-1, 1) from 52 mantissa-safe bits
      const hi = digest.readUInt32BE(i);
      const lo = digest.readUInt32BE(i + 4);
      const unit = (hi * 0x100000 + (lo >>> 12)) / 2 ** 52;
      out.push(unit * 2 - 1);
    }
    counter += 1;
  }
  let norm = Math.sqrt(out.reduce((s, v) => s + v * v, 0));
  if (norm === 0) norm = 1;
  return out.map((v) => v / norm);
}

export const ENCODERS: Record<
  string,
  { width: number; module?: string; encode?: (ref: string, width: number) => number[] }
> = {
  hash: { width: 768, encode: hashVector },
  // placeholders for real towers; exporting with these requires the module
  "clip-image": { width: 768, module: "@xenova/transformers" },
  "sentence-embedding": { width: 1024, module: "@xenova/transformers" },
};

export interface ExportOptions {
  encoder: string;
  attribute: string;
  width?: number;
}

export interface ExportResult {
  rows: number;
  skipped: { entity_id: string; reason: string }[];
  width: number;
}

/**
 * Extract (entity, attribute, refs) from canonical records and write one
 * sidecar row per entity that carries the attribute. Entities missing the
 * attribute are skipped and logged.
 */
export function exportSidecar(
  canonicalPath: string,
  outPath: string,
  opts: ExportOptions,
): ExportResult {
  const spec = ENCODERS[opts.encoder];
  if (!spec) {
    throw new Error(
      `unknown encoder "${opts.encoder}"; available: ` +
        Object.keys(ENCODERS).join(", "),
    );
  }
  if (!spec.encode) {
    throw new Error(
      `encoder "${opts.encoder}" requires the optional dependency ` +
        `"${spec.module}" which is not installed; run: npm install ${spec.module}`,
    );
  }
  const width = opts.width ?? spec.width;
  const { records } = readJsonl(canonicalPath);
  const lines: string[] = [];
  const skipped: { entity_id: string; reason: string }[] = [];
  let rows = 0;
  for (const raw of records) {
    const rec = raw as Record<string, unknown>;
    if (rec.kind !== "item") continue;
    const entityId = String(rec.item_id);
    const attrs = (rec.attributes ?? {}) as Record<string, unknown>;
    const value = attrs[opts.attribute];
    if (value === undefined || value === null) {
      skipped.push({ entity_id: entityId, reason: `missing ${opts.attribute}` });
      continue;
    }
    const refs = Array.isArray(value) ? value.map(String) : [String(value)];
    // one vector per entity: mean of per-ref vectors, renormalized
    const acc = new Array<number>(width).fill(0);
    for (const ref of refs) {
      const v = spec.encode(ref, width);
      for (let i = 0; i < width; i++) acc[i] += v[i];
    }
    let norm = Math.sqrt(acc.reduce((s, v) => s + v * v, 0));
    if (norm === 0) norm = 1;
    const vector = acc.map((v) => v / norm);
    const row: SidecarRow = { entity_id: entityId, attribute: opts.attribute, vector };
    lines.push(stableStringify(row));
    rows += 1;
  }
  fs.writeFileSync(outPath, lines.join("\n") + (lines.length ? "\n" : ""), "utf-8");
  return { rows, skipped, width };
}
