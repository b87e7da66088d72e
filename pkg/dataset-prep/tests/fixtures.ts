/**
 * Test fixtures: the appendix-style sample records (one Amazon item +
 * review, one Yelp business + photo + review) plus generators for dense
 * mini-dumps that survive 5-core filtering downstream.
 */

export const AMAZON_ITEM_SAMPLE = {
  parent_asin: "B07G9GWFSM",
  title:
    "Lurrose 100Pcs Full Cover Fake Toenails Artificial Transparent Nail Tips Nail Art for DIY",
  main_category: "All Beauty",
  store: "Lurrose",
  average_rating: 3.7,
  rating_number: 35,
  price: "$6.99",
  features: [
    "The false toenails are durable with perfect length.",
    "ABS is kind of green enviromental material.",
    "Fit well to your natural toenails.",
  ],
  description: [
    "Description: The false toenails are durable with perfect length.",
    "Feature: - Color: As Shown.- Material: ABS.",
    "Package Including: 100 x Pieces fake toenails",
  ],
  details: {
    Color: "As Shown",
    Size: "Large",
    Material: "Acrylonitrile Butadiene Styrene (ABS)",
    Brand: "Lurrose",
    Style: "French",
  },
  categories: ["Beauty", "Nail Art"],
  images: [
    { large: "https://img.example/B07G9GWFSM_main.jpg", variant: "MAIN" },
    { large: "https://img.example/B07G9GWFSM_alt.jpg", variant: "PT01" },
  ],
};

export const AMAZON_REVIEW_SAMPLE = {
  user_id: "AEYORY2AVPMCPDV57CE337YU5LXA",
  parent_asin: "B08BBQ29N5",
  asin: "B088SZDGXG",
  sort_timestamp: 1634275259292,
  rating: 3.0,
  verified_purchase: true,
  helpful_votes: 0,
  title: "Meh",
  text:
    "These were lightweight and soft but much too small for my liking. " +
    "I would have preferred two of these together to make one loc.",
  images: [{ small_image_url: "https://img.example/review1.jpg" }],
};

export const YELP_BUSINESS_SAMPLE = {
  business_id: "tnhfDv5Il8EaGSXZGiuQGg",
  name: "Garaje",
  address: "475 3rd St",
  city: "San Francisco",
  state: "CA",
  postal_code: "94107",
  latitude: 37.7817529521,
  longitude: -122.39612197,
  stars: 4.5,
  review_count: 1198,
  is_open: 1,
  attributes: {
    RestaurantsTakeOut: true,
    BusinessParking: "{garage: false, street: true}",
  },
  categories: "Mexican, Burgers, Gastropubs",
};

export const YELP_PHOTO_SAMPLE = {
  photo_id: "_nN_DhLXkfwEkwPNxne9hw",
  business_id: "tnhfDv5Il8EaGSXZGiuQGg",
  caption: "carne asada fries",
  label: "food",
};

export const YELP_REVIEW_SAMPLE = {
  review_id: "zdSx_SD6obEhz9VrW9uAWA",
  user_id: "Ha3iJu77CxlrFm-vQRs_8g",
  business_id: "tnhfDv5Il8EaGSXZGiuQGg",
  stars: 4,
  date: "2016-03-09",
  text:
    "Great place to hang out after work: the prices are decent, and the " +
    "ambience is fun.",
};

/** Dense mini-dump: every user reviews every item, so 5-core keeps all. */
export function denseAmazonDump(nUsers = 6, nItems = 6) {
  const meta = [];
  for (let i = 0; i < nItems; i++) {
    meta.push({
      parent_asin: `ITEM${i}`,
      title: `Sample product number ${i}`,
      main_category: "All Beauty",
      average_rating: 3.0 + (i % 3) * 0.5,
      price: `$${(5 + i).toFixed(2)}`,
      store: `Store${i % 2}`,
      categories: ["Beauty", `Sub${i % 3}`],
      images: [{ large: `https://img.example/item${i}.jpg` }],
      details: { Brand: `Brand${i % 2}` },
    });
  }
  const reviews = [];
  let t = 1_600_000_000_000;
  for (let u = 0; u < nUsers; u++) {
    for (let i = 0; i < nItems; i++) {
      t += 3_600_000;
      reviews.push({
        user_id: `USER${u}`,
        parent_asin: `ITEM${i}`,
        sort_timestamp: t,
        rating: 1 + ((u + i) % 5),
        title: "ok",
        text: `review text from user ${u} about item ${i}`,
      });
    }
  }
  return { meta, reviews };
}

export function denseYelpDump(nUsers = 6, nItems = 6) {
  const businesses = [];
  for (let i = 0; i < nItems; i++) {
    businesses.push({
      business_id: `BIZ${i}`,
      name: `Business number ${i}`,
      latitude: 37.0 + i * 0.01,
      longitude: -122.0 - i * 0.01,
      stars: 3.0 + (i % 4) * 0.5,
      review_count: 100 + i,
      categories: "Mexican, Burgers",
      attributes: { RestaurantsTakeOut: true },
    });
  }
  const photos = businesses.map((b, i) => ({
    photo_id: `PHOTO${i}`,
    business_id: b.business_id,
    caption: i % 2 === 0 ? `caption for ${i}` : undefined,
    label: "food",
  }));
  const reviews = [];
  const base = Date.parse("2016-01-01T00:00:00Z");
  let step = 0;
  for (let u = 0; u < nUsers; u++) {
    for (let i = 0; i < nItems; i++) {
      step += 1;
      const date = new Date(base + step * 86_400_000).toISOString().slice(0, 10);
      reviews.push({
        user_id: `YUSER${u}`,
        business_id: `BIZ${i}`,
        stars: 1 + ((u + i) % 5),
        date,
        text: `yelp review from ${u} about ${i}`,
      });
    }
  }
  return { businesses, photos, reviews };
}
