//! Deterministic synthetic world of colored shapes with spatial relations,
//! its region-feature provider and its candidate-box generator.

use serde::{Deserialize, Serialize};

use crate::dataset::record::{Endpoint, ObjectRecord, RelationRecord, RelationalRecord, SCHEMA_VERSION};
use crate::dataset::FeatureProvider;
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::rng::SplitRng;

pub const INSIDE: &str = "is inside";
pub const LEFT_OF: &str = "is left of";
pub const ABOVE: &str = "is above";
pub const NEAR: &str = "is near";
pub const PREDICATES: [&str; 4] = [INSIDE, LEFT_OF, ABOVE, NEAR];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub images: usize,
    pub width: f64,
    pub height: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_size: f64,
    pub max_size: f64,
    pub shapes: Vec<String>,
    pub colors: Vec<String>,
    /// Probability that a new object is placed inside an existing one.
    pub nest_prob: f64,
    /// Center-offset margin for "left of" / "above".
    pub margin: f64,
    /// Largest IoU allowed between two non-nested objects.
    pub max_overlap: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            images: 120,
            width: 100.0,
            height: 100.0,
            min_objects: 2,
            max_objects: 4,
            min_size: 12.0,
            max_size: 30.0,
            shapes: ["square", "circle", "triangle", "star"].map(String::from).to_vec(),
            colors: ["red", "green", "blue", "yellow", "purple"].map(String::from).to_vec(),
            nest_prob: 0.15,
            margin: 4.0,
            max_overlap: 0.1,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.images == 0 {
            return Err(Error::config("at least one image is required"));
        }
        if self.shapes.is_empty() || self.colors.is_empty() {
            return Err(Error::config("shape and color inventories must be non-empty"));
        }
        if !(2..=6).contains(&self.min_objects) || !(self.min_objects..=6).contains(&self.max_objects) {
            return Err(Error::config("objects per image must satisfy 2 <= min <= max <= 6"));
        }
        if self.shapes.len() * self.colors.len() < self.max_objects {
            return Err(Error::config("inventory too small for distinct objects"));
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size) {
            return Err(Error::config("object sizes must satisfy 0 < min <= max"));
        }
        if self.max_size >= self.width.min(self.height) {
            return Err(Error::config("objects must fit inside the image"));
        }
        if !(0.0..=1.0).contains(&self.nest_prob) || self.margin < 0.0 {
            return Err(Error::config("nest_prob must be a probability and margin non-negative"));
        }
        Ok(())
    }
}

/// Spatial predicate of an ordered pair, by precedence:
/// inside > left of > above > near.
pub fn spatial_predicate(subject: &BoundingBox<f64>, object: &BoundingBox<f64>, margin: f64) -> &'static str {
    if object.contains(subject) {
        INSIDE
    } else if subject.x < object.x - margin {
        LEFT_OF
    } else if subject.y < object.y - margin {
        ABOVE
    } else {
        NEAR
    }
}

#[derive(Debug, Clone)]
struct Placed {
    bbox: BoundingBox<f64>,
    shape: usize,
    color: usize,
}

fn sample_box(rng: &mut SplitRng, cfg: &ToyConfig, lo: f64, hi: f64, area: (f64, f64, f64, f64)) -> BoundingBox<f64> {
    let w = rng.uniform(lo, hi);
    let h = (w * rng.uniform(0.8, 1.25)).clamp(lo.min(cfg.min_size), hi);
    let (x1, y1, x2, y2) = area;
    let x = rng.uniform(x1 + w / 2.0, (x2 - w / 2.0).max(x1 + w / 2.0));
    let y = rng.uniform(y1 + h / 2.0, (y2 - h / 2.0).max(y1 + h / 2.0));
    BoundingBox::new(x, y, w, h)
}

fn place_objects(rng: &mut SplitRng, cfg: &ToyConfig) -> Vec<Placed> {
    let n = cfg.min_objects + rng.below(cfg.max_objects - cfg.min_objects + 1);
    let image = (0.0, 0.0, cfg.width, cfg.height);
    let inner_scale = 0.35f64.sqrt();
    let mut placed: Vec<Placed> = Vec::new();
    let mut used: Vec<(usize, usize)> = Vec::new();
    while placed.len() < n {
        let (shape, color) = loop {
            let c = (rng.below(cfg.shapes.len()), rng.below(cfg.colors.len()));
            if !used.contains(&c) {
                break c;
            }
        };
        let hosts: Vec<usize> = (0..placed.len())
            .filter(|&i| {
                let b = placed[i].bbox;
                b.w.min(b.h) * inner_scale >= cfg.min_size
                    && !placed.iter().any(|p| b.contains(&p.bbox) && p.bbox != b)
                    && !placed.iter().any(|p| p.bbox.contains(&b) && p.bbox != b)
            })
            .collect();
        let nest = !hosts.is_empty() && rng.bernoulli(cfg.nest_prob);
        let mut chosen = None;
        for _ in 0..200 {
            let candidate = if nest {
                let host = placed[hosts[rng.below(hosts.len())]].bbox;
                let hi = host.w.min(host.h) * inner_scale;
                let area = host.corners();
                let pad = 1.0;
                sample_box(rng, cfg, cfg.min_size, hi, (area.0 + pad, area.1 + pad, area.2 - pad, area.3 - pad))
            } else {
                sample_box(rng, cfg, cfg.min_size, cfg.max_size, image)
            };
            let ok = placed.iter().all(|p| {
                let nested = p.bbox.contains(&candidate);
                if nest && nested {
                    p.bbox.area() > candidate.area() / 0.35 - 1e-9
                } else {
                    iou(&p.bbox, &candidate) <= cfg.max_overlap && !candidate.contains(&p.bbox) && !nested
                }
            });
            let nested_somewhere = placed.iter().any(|p| p.bbox.contains(&candidate));
            if ok && (nest == nested_somewhere) {
                chosen = Some(candidate);
                break;
            }
        }
        match chosen {
            Some(bbox) => {
                used.push((shape, color));
                placed.push(Placed { bbox, shape, color });
            }
            None if placed.len() >= cfg.min_objects => break,
            None => continue,
        }
    }
    placed
}

/// One scene: objects plus a relation for every ordered pair.
pub fn generate_image(image_id: u64, seed: u64, cfg: &ToyConfig) -> RelationalRecord {
    let mut rng = SplitRng::derive(seed, image_id);
    let placed = place_objects(&mut rng, cfg);
    let objects: Vec<ObjectRecord> = placed
        .iter()
        .enumerate()
        .map(|(id, p)| ObjectRecord {
            id,
            bbox: p.bbox,
            category: cfg.shapes[p.shape].clone(),
            attributes: vec![cfg.colors[p.color].clone()],
            shape: Some(cfg.shapes[p.shape].clone()),
            color: Some(cfg.colors[p.color].clone()),
        })
        .collect();
    let endpoint = |o: &ObjectRecord| Endpoint {
        bbox: o.bbox,
        category: o.category.clone(),
        phrase: format!("the {} {}", o.attributes[0], o.category),
    };
    let mut relations = Vec::new();
    for s in &objects {
        for o in &objects {
            if s.id != o.id {
                relations.push(RelationRecord {
                    subject: endpoint(s),
                    predicate: spatial_predicate(&s.bbox, &o.bbox, cfg.margin).to_string(),
                    object: endpoint(o),
                });
            }
        }
    }
    RelationalRecord {
        version: SCHEMA_VERSION,
        image_id,
        width: cfg.width,
        height: cfg.height,
        objects,
        relations,
    }
}

pub fn generate_toy_world(seed: u64, cfg: &ToyConfig) -> Result<(Vec<RelationalRecord>, ToyProvider)> {
    cfg.validate()?;
    let records = (0..cfg.images as u64).map(|i| generate_image(i, seed, cfg)).collect();
    Ok((records, ToyProvider::new(cfg)))
}

/// Region descriptor for toy scenes. For a query box, the dominant object is
/// the one with the highest IoU (lowest index on ties). Layout:
/// one-hot shape ‖ one-hot color of the dominant object, then six occupancy
/// statistics (fraction of the box covered by it, fraction of it inside the
/// box, and the left/right/top/bottom extents of the overlap in box-relative
/// coordinates), then the box position `x/W, y/H, w/W, h/H`. Without any
/// overlapping object the first two blocks are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyProvider {
    pub shapes: Vec<String>,
    pub colors: Vec<String>,
}

impl ToyProvider {
    pub fn new(cfg: &ToyConfig) -> Self {
        Self {
            shapes: cfg.shapes.clone(),
            colors: cfg.colors.clone(),
        }
    }
}

impl FeatureProvider for ToyProvider {
    fn dim(&self) -> usize {
        self.shapes.len() + self.colors.len() + 10
    }

    fn feature(&self, record: &RelationalRecord, bbox: &BoundingBox<f64>) -> Vec<f64> {
        let (ns, nc) = (self.shapes.len(), self.colors.len());
        let mut f = vec![0.0; self.dim()];
        let mut best: Option<(usize, f64)> = None;
        for (i, o) in record.objects.iter().enumerate() {
            let v = iou(&o.bbox, bbox);
            if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        if let Some((i, _)) = best {
            let o = &record.objects[i];
            let find = |list: &[String], v: &Option<String>| v.as_ref().and_then(|v| list.iter().position(|s| s == v));
            if let Some(k) = find(&self.shapes, &o.shape) {
                f[k] = 1.0;
            }
            if let Some(k) = find(&self.colors, &o.color) {
                f[ns + k] = 1.0;
            }
            let inter = o.bbox.intersection_area(bbox);
            let (bx1, by1, _, _) = bbox.corners();
            let (ox1, oy1, ox2, oy2) = o.bbox.corners();
            let (qx1, qy1, qx2, qy2) = bbox.corners();
            let ix1 = ox1.max(qx1);
            let ix2 = ox2.min(qx2);
            let iy1 = oy1.max(qy1);
            let iy2 = oy2.min(qy2);
            let base = ns + nc;
            f[base] = inter / bbox.area();
            f[base + 1] = inter / o.bbox.area();
            f[base + 2] = (ix1 - bx1) / bbox.w;
            f[base + 3] = (ix2 - bx1) / bbox.w;
            f[base + 4] = (iy1 - by1) / bbox.h;
            f[base + 5] = (iy2 - by1) / bbox.h;
        }
        let base = ns + nc + 6;
        f[base] = bbox.x / record.width;
        f[base + 1] = bbox.y / record.height;
        f[base + 2] = bbox.w / record.width;
        f[base + 3] = bbox.h / record.height;
        f
    }
}

/// Settings of the candidate-box generator that stands in for a region
/// proposal network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CandidateConfig {
    pub per_object: usize,
    pub background: usize,
    /// Center jitter as a fraction of the object extent.
    pub shift: f64,
    /// Log-scale jitter of each extent.
    pub scale: f64,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        Self {
            per_object: 6,
            background: 8,
            shift: 0.15,
            scale: 0.2,
        }
    }
}

fn clip(b: BoundingBox<f64>, w: f64, h: f64) -> Option<BoundingBox<f64>> {
    let (x1, y1, x2, y2) = b.corners();
    let c = BoundingBox::from_corners(x1.max(0.0), y1.max(0.0), x2.min(w), y2.min(h));
    (c.w >= 2.0 && c.h >= 2.0).then_some(c)
}

/// Jittered copies of each box in `targets` plus random background boxes,
/// clipped to the image and fully determined by `(seed, stream)`.
pub fn candidate_boxes(
    targets: &[BoundingBox<f64>],
    width: f64,
    height: f64,
    seed: u64,
    stream: u64,
    cfg: &CandidateConfig,
) -> Vec<BoundingBox<f64>> {
    let mut rng = SplitRng::derive(seed, stream);
    let mut out = Vec::new();
    for b in targets {
        for _ in 0..cfg.per_object {
            let dx = rng.uniform(-cfg.shift, cfg.shift) * b.w;
            let dy = rng.uniform(-cfg.shift, cfg.shift) * b.h;
            let sw = rng.uniform(-cfg.scale, cfg.scale).exp();
            let sh = rng.uniform(-cfg.scale, cfg.scale).exp();
            if let Some(c) = clip(BoundingBox::new(b.x + dx, b.y + dy, b.w * sw, b.h * sh), width, height) {
                out.push(c);
            }
        }
    }
    for _ in 0..cfg.background {
        let w = rng.uniform(8.0, 40.0);
        let h = rng.uniform(8.0, 40.0);
        let x = rng.uniform(0.0, width);
        let y = rng.uniform(0.0, height);
        if let Some(c) = clip(BoundingBox::new(x, y, w, h), width, height) {
            out.push(c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::record::to_jsonl;
    use crate::dataset::vocab::{PosTag, Vocabulary};
    use proptest::prelude::*;

    #[test]
    fn same_seed_same_bytes() {
        let cfg = ToyConfig {
            images: 20,
            ..Default::default()
        };
        let (a, _) = generate_toy_world(7, &cfg).unwrap();
        let (b, _) = generate_toy_world(7, &cfg).unwrap();
        assert_eq!(to_jsonl(&a).unwrap(), to_jsonl(&b).unwrap());
        let (c, _) = generate_toy_world(8, &cfg).unwrap();
        assert_ne!(to_jsonl(&a).unwrap(), to_jsonl(&c).unwrap());
    }

    #[test]
    fn all_ordered_pairs_are_captioned() {
        let cfg = ToyConfig {
            images: 10,
            min_objects: 3,
            max_objects: 3,
            ..Default::default()
        };
        let (recs, _) = generate_toy_world(1, &cfg).unwrap();
        let total: usize = recs.iter().map(|r| r.relations.len()).sum();
        assert_eq!(total, 60);
    }

    #[test]
    fn records_are_valid_and_segmented() {
        let (recs, _) = generate_toy_world(3, &ToyConfig::default()).unwrap();
        for r in &recs {
            r.validate().unwrap();
            for g in r.ground_truth() {
                let first = |t| g.pos.iter().position(|&p| p == t).unwrap();
                let last = |t| g.pos.iter().rposition(|&p| p == t).unwrap();
                assert!(last(PosTag::Subj) < first(PosTag::Pred));
                assert!(last(PosTag::Pred) < first(PosTag::Obj));
            }
            for (i, a) in r.objects.iter().enumerate() {
                for b in &r.objects[i + 1..] {
                    assert!(
                        a.shape != b.shape || a.color != b.color,
                        "indistinguishable objects in image {}",
                        r.image_id
                    );
                }
            }
        }
    }

    #[test]
    fn vocabulary_is_small() {
        let (recs, _) = generate_toy_world(7, &ToyConfig::default()).unwrap();
        let texts: Vec<String> = recs
            .iter()
            .flat_map(|r| r.relations.iter().map(|x| x.segments().text()))
            .collect();
        let v = Vocabulary::build(texts.iter().map(String::as_str), 1).unwrap();
        assert_eq!(v.len(), 4 + 16);
    }

    #[test]
    fn nesting_occurs() {
        let (recs, _) = generate_toy_world(7, &ToyConfig::default()).unwrap();
        let inside = recs
            .iter()
            .flat_map(|r| &r.relations)
            .filter(|r| r.predicate == INSIDE)
            .count();
        assert!(inside > 0);
    }

    #[test]
    fn bad_configs() {
        for cfg in [
            ToyConfig {
                images: 0,
                ..Default::default()
            },
            ToyConfig {
                shapes: vec![],
                ..Default::default()
            },
            ToyConfig {
                max_objects: 7,
                ..Default::default()
            },
        ] {
            assert!(matches!(generate_toy_world(1, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn provider_is_deterministic_and_identifies_objects() {
        let (recs, p) = generate_toy_world(5, &ToyConfig::default()).unwrap();
        assert_eq!(p.dim(), 19);
        let r = &recs[0];
        for o in &r.objects {
            let f = p.feature(r, &o.bbox);
            assert_eq!(f, p.feature(r, &o.bbox));
            assert!(f.iter().all(|v| v.is_finite()));
            let shape = p.shapes.iter().position(|s| Some(s) == o.shape.as_ref()).unwrap();
            assert_eq!(f[shape], 1.0);
            assert_eq!(f[4..9].iter().sum::<f64>(), 1.0);
            assert!((f[10] - 1.0).abs() < 1e-12);
        }
        let empty = p.feature(r, &BoundingBox::new(-50.0, -50.0, 1.0, 1.0));
        assert!(empty[..15].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn candidates_cover_objects() {
        let (recs, _) = generate_toy_world(7, &ToyConfig::default()).unwrap();
        let cfg = CandidateConfig::default();
        for r in &recs[..10] {
            let boxes: Vec<BoundingBox<f64>> = r.objects.iter().map(|o| o.bbox).collect();
            let c = candidate_boxes(&boxes, r.width, r.height, 7, r.image_id, &cfg);
            assert_eq!(c, candidate_boxes(&boxes, r.width, r.height, 7, r.image_id, &cfg));
            for o in &r.objects {
                let best = c.iter().map(|b| iou(b, &o.bbox)).fold(0.0, f64::max);
                assert!(best > 0.5, "object poorly covered: {best}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn predicates_agree_with_geometry(seed in 0u64..1_000_000) {
            let cfg = ToyConfig { images: 1, ..Default::default() };
            let r = generate_image(0, seed, &cfg);
            for rel in &r.relations {
                let (s, o) = (&rel.subject.bbox, &rel.object.bbox);
                let inside = o.contains(s);
                let left = s.x < o.x - cfg.margin;
                let above = s.y < o.y - cfg.margin;
                let expect = if inside { INSIDE } else if left { LEFT_OF } else if above { ABOVE } else { NEAR };
                prop_assert_eq!(rel.predicate.as_str(), expect);
                if rel.predicate == LEFT_OF {
                    prop_assert!(s.x < o.x - cfg.margin);
                }
            }
            for ob in &r.objects {
                let (x1, y1, x2, y2) = ob.bbox.corners();
                prop_assert!(x1 >= 0.0 && y1 >= 0.0 && x2 <= cfg.width && y2 <= cfg.height);
            }
        }
    }
}
