/**
 * dataset-prep CLI.
 *
 *   convert-amazon  --meta META.jsonl --reviews REV.jsonl --out DIR
 *   convert-yelp    --business B.json --reviews R.json [--photos P.json] --out DIR
 *   export-sidecar  --data canonical.jsonl --attribute image
 *                   [--encoder hash] [--width N] --out sidecar.jsonl
 *
 * Outputs: DIR/data.jsonl + DIR/registry.json + DIR/report.json, or the
 * sidecar file. Exit code 1 on usage errors, 2 on conversion failure.
 */

import * as fs from "fs";
import * as path from "path";

import { convertAmazon } from "./amazon.js";
import { writeJsonl, writeRegistry } from "./canonical.js";
import { ENCODERS, exportSidecar } from "./sidecar.js";
import { convertYelp } from "./yelp.js";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith("--") || i + 1 >= argv.length) {
      throw new UsageError(`bad argument ${key}`);
    }
    flags.set(key.slice(2), argv[i + 1]);
  }
  return flags;
}

class UsageError extends Error {}

function required(flags: Map<string, string>, name: string): string {
  const v = flags.get(name);
  if (!v) throw new UsageError(`--${name} is required`);
  return v;
}

function writeOutputs(
  outDir: string,
  conversion: {
    records: Parameters<typeof writeJsonl>[1];
    registry: Parameters<typeof writeRegistry>[1];
  },
  report: Record<string, unknown>,
): void {
  fs.mkdirSync(outDir, { recursive: true });
  writeJsonl(path.join(outDir, "data.jsonl"), conversion.records);
  writeRegistry(path.join(outDir, "registry.json"), conversion.registry);
  fs.writeFileSync(
    path.join(outDir, "report.json"),
    JSON.stringify(report, null, 1) + "\n",
  );
}

function cmdConvertAmazon(flags: Map<string, string>): void {
  const conversion = convertAmazon(
    required(flags, "meta"),
    required(flags, "reviews"),
  );
  const outDir = required(flags, "out");
  writeOutputs(outDir, conversion, {
    items: conversion.itemReport,
    reviews: conversion.reviewReport,
  });
  console.log(
    `amazon: ${conversion.itemReport.emitted} items, ` +
      `${conversion.reviewReport.emitted} interactions ` +
      `(skipped ${conversion.itemReport.skipped}/${conversion.reviewReport.skipped}) -> ${outDir}`,
  );
}

function cmdConvertYelp(flags: Map<string, string>): void {
  const conversion = convertYelp(
    required(flags, "business"),
    required(flags, "reviews"),
    flags.get("photos"),
  );
  const outDir = required(flags, "out");
  writeOutputs(outDir, conversion, {
    businesses: conversion.businessReport,
    reviews: conversion.reviewReport,
  });
  console.log(
    `yelp: ${conversion.businessReport.emitted} businesses, ` +
      `${conversion.reviewReport.emitted} interactions ` +
      `(skipped ${conversion.businessReport.skipped}/${conversion.reviewReport.skipped}) -> ${outDir}`,
  );
}

function cmdExportSidecar(flags: Map<string, string>): void {
  const out = required(flags, "out");
  const result = exportSidecar(required(flags, "data"), out, {
    encoder: flags.get("encoder") ?? "hash",
    attribute: required(flags, "attribute"),
    width: flags.has("width") ? Number(flags.get("width")) : undefined,
  });
  for (const s of result.skipped) {
    console.log(`skipped ${s.entity_id}: ${s.reason}`);
  }
  console.log(`sidecar: ${result.rows} rows, width ${result.width} -> ${out}`);
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    const flags = parseFlags(rest);
    switch (command) {
      case "convert-amazon":
        cmdConvertAmazon(flags);
        return 0;
      case "convert-yelp":
        cmdConvertYelp(flags);
        return 0;
      case "export-sidecar":
        cmdExportSidecar(flags);
        return 0;
      default:
        console.error(
          "usage: cli.ts <convert-amazon|convert-yelp|export-sidecar> [flags]",
        );
        console.error(`available sidecar encoders: ${Object.keys(ENCODERS).join(", ")}`);
        return 1;
    }
  } catch (e) {
    if (e instanceof UsageError) {
      console.error(`usage error: ${e.message}`);
      return 1;
    }
    console.error(`conversion failed: ${(e as Error).message}`);
    return 2;
  }
}

const isDirectRun =
  process.argv[1] && path.resolve(process.argv[1]) === new URL(import.meta.url).pathname;
if (isDirectRun) {
  process.exit(main(process.argv.slice(2)));
}
