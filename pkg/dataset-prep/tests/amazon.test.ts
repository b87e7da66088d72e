import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import {
  convertAmazon,
  convertAmazonItem,
  convertAmazonReview,
} from "../src/amazon.js";
import {
  AMAZON_ITEM_SAMPLE,
  AMAZON_REVIEW_SAMPLE,
  denseAmazonDump,
} from "./fixtures.js";

let dir: string;

beforeAll(() => {
  dir = fs.mkdtempSync(path.join(os.tmpdir(), "amazon-"));
});

afterAll(() => {
  fs.rmSync(dir, { recursive: true, force: true });
});

function writeLines(name: string, objs: unknown[]): string {
  const p = path.join(dir, name);
  fs.writeFileSync(p, objs.map((o) => JSON.stringify(o)).join("\n") + "\n");
  return p;
}

describe("convertAmazonItem", () => {
  it("parses the sample item: price 6.99, two image refs", () => {
    const item = convertAmazonItem(AMAZON_ITEM_SAMPLE as never);
    expect(item.item_id).toBe("B07G9GWFSM");
    expect(item.attributes.price).toBe(6.99);
    expect(item.attributes.image).toHaveLength(2);
    expect(item.attributes.main_category).toBe("All Beauty");
    expect(typeof item.attributes.details).toBe("string");
    expect(item.attributes.details).toContain("Brand: Lurrose");
  });

  it("joins bullet-list features and description into one text blob", () => {
    const item = convertAmazonItem(AMAZON_ITEM_SAMPLE as never);
    expect(typeof item.attributes.features).toBe("string");
    expect(item.attributes.features).toContain("durable with perfect length");
  });
});

describe("convertAmazonReview", () => {
  it("converts the sample review: rating 3.0, ms timestamp to seconds", () => {
    const rec = convertAmazonReview(AMAZON_REVIEW_SAMPLE as never);
    expect(rec.user_id).toBe("AEYORY2AVPMCPDV57CE337YU5LXA");
    expect(rec.item_id).toBe("B08BBQ29N5");
    expect(rec.timestamp).toBe(1634275259); // 2021-10-15
    expect(rec.review?.rating).toBe(3.0);
    expect(rec.review?.title).toBe("Meh");
    expect(rec.review?.image_refs).toHaveLength(1);
  });
});

describe("convertAmazon", () => {
  it("emits canonical records with exact reconciliation", () => {
    const { meta, reviews } = denseAmazonDump();
    const metaPath = writeLines("meta.jsonl", meta);
    const revPath = writeLines("reviews.jsonl", [
      ...reviews,
      { user_id: "USER0", parent_asin: "GHOST", sort_timestamp: 1_700_000_000_000 },
      "not json at all",
    ]);
    const out = convertAmazon(metaPath, revPath);
    expect(out.itemReport.emitted).toBe(meta.length);
    expect(out.reviewReport.emitted).toBe(reviews.length);
    expect(out.reviewReport.skipped).toBe(2);
    expect(out.reviewReport.input_lines).toBe(
      out.reviewReport.emitted + out.reviewReport.skipped,
    );
    expect(out.reviewReport.skip_reasons["dangling item reference"]).toBe(1);
  });

  it("fails loudly on an empty metadata file", () => {
    const metaPath = writeLines("empty.jsonl", []);
    const revPath = writeLines("revs.jsonl", [AMAZON_REVIEW_SAMPLE]);
    expect(() => convertAmazon(metaPath, revPath)).toThrow(/no items converted/);
  });
});
