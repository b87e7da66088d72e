/**
 * Amazon product-reviews dump -> canonical JSONL + schema registry.
 *
 * Inputs are the public per-category dumps: an item metadata JSONL
 * (parent_asin, title, price, images, details, ...) and a review JSONL
 * (user_id, parent_asin, rating, title, text, images, sort_timestamp in
 * milliseconds). Unparseable lines are skipped and counted; the report
 * reconciles input = emitted + skipped exactly.
 */

import {
  CanonicalRecord,
  ConversionReport,
  InteractionRecord,
  ItemRecord,
  Review,
  SchemaAttribute,
  assertReconciled,
  emptyReport,
  flattenDetails,
  parsePrice,
  readJsonl,
  recordSkip,
} from "./canonical.js";

export const AMAZON_REGISTRY: SchemaAttribute[] = [
  { name: "main_category", modality: "categorical", level: "item", parse: {} },
  { name: "title", modality: "text", level: "item", parse: {} },
  { name: "average_rating", modality: "number", level: "item", parse: {} },
  { name: "features", modality: "text", level: "item", parse: {} },
  { name: "description", modality: "text", level: "item", parse: {} },
  { name: "price", modality: "number", level: "item", parse: { strip: "currency" } },
  { name: "image", modality: "image", level: "item", parse: {} },
  { name: "store", modality: "categorical", level: "item", parse: {} },
  { name: "categories", modality: "categorical", level: "item", parse: {} },
  { name: "details", modality: "text", level: "item", parse: {} },
  { name: "timestamp", modality: "timestamp", level: "interaction", parse: {} },
  { name: "rating", modality: "number", level: "interaction", parse: {} },
  { name: "text", modality: "text", level: "interaction", parse: {} },
  { name: "image", modality: "image", level: "interaction", parse: {} },
];

function imageRefs(raw: unknown, fallbackPrefix: string): string[] {
  if (!Array.isArray(raw)) return [];
  const refs: string[] = [];
  raw.forEach((img, idx) => {
    if (typeof img === "string") {
      refs.push(img);
      return;
    }
    if (img && typeof img === "object") {
      const o = img as Record<string, unknown>;
      const url = o.hi_res ?? o.large ?? o.thumb ?? o.large_image_url ??
        o.medium_image_url ?? o.small_image_url;
      refs.push(typeof url === "string" && url ? url : `${fallbackPrefix}#${idx}`);
    }
  });
  return refs;
}

function joinText(raw: unknown): string | undefined {
  if (typeof raw === "string") return raw.trim() || undefined;
  if (Array.isArray(raw)) {
    const joined = raw.map((v) => String(v)).join(" ").trim();
    return joined || undefined;
  }
  return undefined;
}

export function convertAmazonItem(meta: Record<string, unknown>): ItemRecord {
  const itemId = String(meta.parent_asin ?? meta.asin ?? "");
  if (!itemId) throw new Error("item record without parent_asin/asin");
  const attrs: Record<string, unknown> = {};
  if (typeof meta.main_category === "string" && meta.main_category) {
    attrs.main_category = meta.main_category;
  }
  const title = joinText(meta.title);
  if (title) attrs.title = title;
  if (typeof meta.average_rating === "number") {
    attrs.average_rating = meta.average_rating;
  }
  const features = joinText(meta.features);
  if (features) attrs.features = features;
  const description = joinText(meta.description);
  if (description) attrs.description = description;
  const price = parsePrice(meta.price);
  if (price !== undefined) attrs.price = price;
  const images = imageRefs(meta.images, itemId);
  if (images.length) attrs.image = images;
  if (typeof meta.store === "string" && meta.store) attrs.store = meta.store;
  if (Array.isArray(meta.categories) && meta.categories.length) {
    attrs.categories = meta.categories.map((c) => String(c));
  }
  if (meta.details && typeof meta.details === "object") {
    const flat = flattenDetails(meta.details as Record<string, unknown>);
    if (flat) attrs.details = flat;
  }
  if (!Object.keys(attrs).length) {
    throw new Error(`item ${itemId} has no usable attributes`);
  }
  return { kind: "item", item_id: itemId, attributes: attrs };
}

export function convertAmazonReview(
  raw: Record<string, unknown>,
): InteractionRecord {
  const userId = String(raw.user_id ?? "");
  const itemId = String(raw.parent_asin ?? raw.asin ?? "");
  if (!userId || !itemId) throw new Error("review without user_id/parent_asin");
  const tsRaw = raw.sort_timestamp ?? raw.timestamp;
  const tsNum = Number(tsRaw);
  if (!Number.isFinite(tsNum)) throw new Error(`bad timestamp ${String(tsRaw)}`);
  // millisecond epochs are > 1e11; convert to whole seconds
  const timestamp = tsNum > 1e11 ? Math.floor(tsNum / 1000) : Math.floor(tsNum);
  const review: Review = {};
  if (typeof raw.title === "string" && raw.title.trim()) review.title = raw.title;
  if (typeof raw.text === "string" && raw.text.trim()) review.text = raw.text;
  const rating = Number(raw.rating);
  if (Number.isFinite(rating)) review.rating = rating;
  const refs = imageRefs(raw.images, `${userId}:${itemId}`);
  if (refs.length) review.image_refs = refs;
  const rec: InteractionRecord = {
    kind: "interaction",
    user_id: userId,
    item_id: itemId,
    timestamp,
  };
  if (Object.keys(review).length) rec.review = review;
  return rec;
}

export interface AmazonConversion {
  records: CanonicalRecord[];
  registry: SchemaAttribute[];
  itemReport: ConversionReport;
  reviewReport: ConversionReport;
}

export function convertAmazon(metaPath: string, reviewPath: string): AmazonConversion {
  const itemReport = emptyReport();
  const reviewReport = emptyReport();
  const records: CanonicalRecord[] = [];
  const itemIds = new Set<string>();

  const meta = readJsonl(metaPath);
  itemReport.input_lines = meta.records.length + meta.skipped.length;
  for (const s of meta.skipped) recordSkip(itemReport, "unparseable json");
  for (const raw of meta.records) {
    try {
      const item = convertAmazonItem(raw as Record<string, unknown>);
      records.push(item);
      itemIds.add(item.item_id);
      itemReport.emitted += 1;
    } catch (e) {
      recordSkip(itemReport, (e as Error).message.split(" ")[0] ?? "error");
    }
  }
  if (itemReport.emitted === 0) {
    throw new Error(`no items converted from ${metaPath}`);
  }

  const reviews = readJsonl(reviewPath);
  reviewReport.input_lines = reviews.records.length + reviews.skipped.length;
  for (const s of reviews.skipped) recordSkip(reviewReport, "unparseable json");
  for (const raw of reviews.records) {
    try {
      const rec = convertAmazonReview(raw as Record<string, unknown>);
      if (!itemIds.has(rec.item_id)) {
        recordSkip(reviewReport, "dangling item reference");
        continue;
      }
      records.push(rec);
      reviewReport.emitted += 1;
    } catch (e) {
      recordSkip(reviewReport, "malformed review");
    }
  }
  assertReconciled(itemReport, "amazon items");
  assertReconciled(reviewReport, "amazon reviews");
  return { records, registry: AMAZON_REGISTRY, itemReport, reviewReport };
}
