/**
 * Yelp open-dataset dump -> canonical JSONL + schema registry.
 *
 * Inputs: business.json (one business per line), review.json, and
 * optionally photos.json (photo_id, business_id, caption, label). The
 * canonical file keeps latitude/longitude as raw numeric fields; the
 * registry's geopoint pairing rule folds them into a single location
 * triplet at load time.
 */

import {
  CanonicalRecord,
  ConversionReport,
  InteractionRecord,
  ItemRecord,
  SchemaAttribute,
  assertReconciled,
  emptyReport,
  flattenDetails,
  readJsonl,
  recordSkip,
} from "./canonical.js";

export const YELP_REGISTRY: SchemaAttribute[] = [
  { name: "name", modality: "text", level: "item", parse: {} },
  { name: "latitude", modality: "number", level: "item", parse: {} },
  { name: "longitude", modality: "number", level: "item", parse: {} },
  {
    name: "location",
    modality: "geopoint",
    level: "item",
    parse: { lat: "latitude", lon: "longitude" },
  },
  { name: "stars", modality: "number", level: "item", parse: {} },
  { name: "review_count", modality: "number", level: "item", parse: {} },
  { name: "attributes", modality: "text", level: "item", parse: {} },
  { name: "categories", modality: "categorical", level: "item", parse: { split: "," } },
  { name: "image", modality: "image", level: "item", parse: {} },
  { name: "image_caption", modality: "text", level: "item", parse: {} },
  { name: "image_label", modality: "categorical", level: "item", parse: {} },
  { name: "timestamp", modality: "timestamp", level: "interaction", parse: {} },
  { name: "rating", modality: "number", level: "interaction", parse: {} },
  { name: "text", modality: "text", level: "interaction", parse: {} },
];

export interface YelpPhoto {
  photo_id: string;
  caption?: string;
  label?: string;
}

export function convertYelpBusiness(
  raw: Record<string, unknown>,
  photos: YelpPhoto[] = [],
): ItemRecord {
  const itemId = String(raw.business_id ?? "");
  if (!itemId) throw new Error("business without business_id");
  const attrs: Record<string, unknown> = {};
  if (typeof raw.name === "string" && raw.name) attrs.name = raw.name;
  if (typeof raw.latitude === "number" && typeof raw.longitude === "number") {
    attrs.latitude = raw.latitude;
    attrs.longitude = raw.longitude;
  }
  if (typeof raw.stars === "number") attrs.stars = raw.stars;
  if (typeof raw.review_count === "number") attrs.review_count = raw.review_count;
  if (raw.attributes && typeof raw.attributes === "object") {
    const flat = flattenDetails(raw.attributes as Record<string, unknown>);
    if (flat) attrs.attributes = flat;
  }
  if (typeof raw.categories === "string" && raw.categories.trim()) {
    attrs.categories = raw.categories; // registry splits on ","
  }
  if (photos.length) {
    attrs.image = photos.map((p) => p.photo_id);
    const captions = photos.map((p) => p.caption ?? "").filter(Boolean).join(". ");
    if (captions) attrs.image_caption = captions;
    const labels = [...new Set(photos.map((p) => p.label ?? "").filter(Boolean))];
    if (labels.length) attrs.image_label = labels;
  }
  if (!Object.keys(attrs).length) {
    throw new Error(`business ${itemId} has no usable attributes`);
  }
  return { kind: "item", item_id: itemId, attributes: attrs };
}

/** "2016-03-09" or "2016-03-09 14:02:11" (UTC) -> unix seconds. */
export function yelpDateToUnix(date: string): number {
  const iso = date.includes(" ") ? date.replace(" ", "T") + "Z" : date + "T00:00:00Z";
  const ms = Date.parse(iso);
  if (!Number.isFinite(ms)) throw new Error(`bad date ${date}`);
  return Math.floor(ms / 1000);
}

export function convertYelpReview(raw: Record<string, unknown>): InteractionRecord {
  const userId = String(raw.user_id ?? "");
  const itemId = String(raw.business_id ?? "");
  if (!userId || !itemId) throw new Error("review without user_id/business_id");
  if (typeof raw.date !== "string") throw new Error("review without date");
  const rec: InteractionRecord = {
    kind: "interaction",
    user_id: userId,
    item_id: itemId,
    timestamp: yelpDateToUnix(raw.date),
  };
  const review: Record<string, unknown> = {};
  if (typeof raw.text === "string" && raw.text.trim()) review.text = raw.text;
  const stars = Number(raw.stars);
  if (Number.isFinite(stars)) review.rating = stars;
  if (Object.keys(review).length) rec.review = review;
  return rec;
}

export interface YelpConversion {
  records: CanonicalRecord[];
  registry: SchemaAttribute[];
  businessReport: ConversionReport;
  reviewReport: ConversionReport;
}

export function convertYelp(
  businessPath: string,
  reviewPath: string,
  photoPath?: string,
): YelpConversion {
  const photosByBusiness = new Map<string, YelpPhoto[]>();
  if (photoPath) {
    const photos = readJsonl(photoPath);
    for (const raw of photos.records) {
      const o = raw as Record<string, unknown>;
      const bid = String(o.business_id ?? "");
      if (!bid || !o.photo_id) continue;
      const entry: YelpPhoto = { photo_id: String(o.photo_id) };
      if (typeof o.caption === "string" && o.caption) entry.caption = o.caption;
      if (typeof o.label === "string" && o.label) entry.label = o.label;
      const list = photosByBusiness.get(bid) ?? [];
      list.push(entry);
      photosByBusiness.set(bid, list);
    }
  }

  const businessReport = emptyReport();
  const reviewReport = emptyReport();
  const records: CanonicalRecord[] = [];
  const itemIds = new Set<string>();

  const businesses = readJsonl(businessPath);
  businessReport.input_lines = businesses.records.length + businesses.skipped.length;
  for (const _s of businesses.skipped) recordSkip(businessReport, "unparseable json");
  for (const raw of businesses.records) {
    try {
      const bid = String((raw as Record<string, unknown>).business_id ?? "");
      const item = convertYelpBusiness(
        raw as Record<string, unknown>,
        photosByBusiness.get(bid) ?? [],
      );
      records.push(item);
      itemIds.add(item.item_id);
      businessReport.emitted += 1;
    } catch {
      recordSkip(businessReport, "malformed business");
    }
  }
  if (businessReport.emitted === 0) {
    throw new Error(`no businesses converted from ${businessPath}`);
  }

  const reviews = readJsonl(reviewPath);
  reviewReport.input_lines = reviews.records.length + reviews.skipped.length;
  for (const _s of reviews.skipped) recordSkip(reviewReport, "unparseable json");
  for (const raw of reviews.records) {
    try {
      const rec = convertYelpReview(raw as Record<string, unknown>);
      if (!itemIds.has(rec.item_id)) {
        recordSkip(reviewReport, "dangling item reference");
        continue;
      }
      records.push(rec);
      reviewReport.emitted += 1;
    } catch {
      recordSkip(reviewReport, "malformed review");
    }
  }
  assertReconciled(businessReport, "yelp businesses");
  assertReconciled(reviewReport, "yelp reviews");
  return { records, registry: YELP_REGISTRY, businessReport, reviewReport };
}
