//! Box geometry, pairwise geometric features, NMS, proposal matching and the
//! combination layer that expands proposals into ordered region pairs.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Axis-aligned box in center format: `(x, y)` is the center, `w`/`h` the extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox<T> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(x: T, y: T, w: T, h: T) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_corners(x1: T, y1: T, x2: T, y2: T) -> Self {
        let two = T::lit(2.0);
        Self {
            x: (x1 + x2) / two,
            y: (y1 + y2) / two,
            w: x2 - x1,
            h: y2 - y1,
        }
    }

    /// `(x1, y1, x2, y2)`
    pub fn corners(&self) -> (T, T, T, T) {
        let (hw, hh) = (self.w * T::half(), self.h * T::half());
        (self.x - hw, self.y - hh, self.x + hw, self.y + hh)
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.w > T::zero()
            && self.h > T::zero()
            && [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite())
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let (ax1, ay1, ax2, ay2) = self.corners();
        let (bx1, by1, bx2, by2) = other.corners();
        let iw = (ax2.min(bx2) - ax1.max(bx1)).max(T::zero());
        let ih = (ay2.min(by2) - ay1.max(by1)).max(T::zero());
        iw * ih
    }

    /// True when `other` lies inside `self` (boundaries may touch).
    pub fn contains(&self, other: &Self) -> bool {
        let (ax1, ay1, ax2, ay2) = self.corners();
        let (bx1, by1, bx2, by2) = other.corners();
        bx1 >= ax1 && by1 >= ay1 && bx2 <= ax2 && by2 <= ay2
    }

    pub fn translate(&self, dx: T, dy: T) -> Self {
        Self::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    pub fn scale(&self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.w * s, self.h * s)
    }

    pub fn cast<U: Scalar>(&self) -> BoundingBox<U> {
        BoundingBox::new(
            U::lit(self.x.as_f64()),
            U::lit(self.y.as_f64()),
            U::lit(self.w.as_f64()),
            U::lit(self.h.as_f64()),
        )
    }
}

pub fn iou<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    let inter = a.intersection_area(b);
    if inter <= T::zero() {
        return T::zero();
    }
    // Areas from corners so that iou(a, a) is exactly 1.
    let corner_area = |bx: &BoundingBox<T>| {
        let (x1, y1, x2, y2) = bx.corners();
        (x2 - x1) * (y2 - y1)
    };
    let union = corner_area(a) + corner_area(b) - inter;
    (inter / union).min(T::one())
}

/// Smallest axis-aligned box covering both inputs.
pub fn union_box<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> BoundingBox<T> {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    BoundingBox::from_corners(ax1.min(bx1), ay1.min(by1), ax2.max(bx2), ay2.max(by2))
}

/// Six-component relative geometry of a (subject, object) box pair:
/// center offsets normalised by the subject scale, object/subject scale ratio,
/// both aspect ratios, and IoU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricFeature<T>(pub [T; 6]);

impl<T: Scalar> GeometricFeature<T> {
    pub fn values(&self) -> &[T; 6] {
        &self.0
    }
}

pub fn geometric_feature<T: Scalar>(
    subject: &BoundingBox<T>,
    object: &BoundingBox<T>,
) -> Result<GeometricFeature<T>> {
    if !subject.is_valid() || !object.is_valid() {
        return Err(Error::contract(format!(
            "degenerate box in geometric feature: {subject:?} / {object:?}"
        )));
    }
    let s_scale = (subject.w * subject.h).sqrt();
    Ok(GeometricFeature([
        (object.x - subject.x) / s_scale,
        (object.y - subject.y) / s_scale,
        ((object.w * object.h) / (subject.w * subject.h)).sqrt(),
        subject.w / subject.h,
        object.w / object.h,
        iou(subject, object),
    ]))
}

/// Regression target moving `proposal` onto `gt`:
/// `((x_gt - x_p) / w_gt, (y_gt - y_p) / h_gt, ln(w_gt / w_p), ln(h_gt / h_p))`.
pub fn box_delta<T: Scalar>(proposal: &BoundingBox<T>, gt: &BoundingBox<T>) -> [T; 4] {
    [
        (gt.x - proposal.x) / gt.w,
        (gt.y - proposal.y) / gt.h,
        (gt.w / proposal.w).ln(),
        (gt.h / proposal.h).ln(),
    ]
}

/// Inverse of [`box_delta`].
pub fn apply_box_delta<T: Scalar>(proposal: &BoundingBox<T>, delta: &[T; 4]) -> BoundingBox<T> {
    let w = proposal.w * delta[2].exp();
    let h = proposal.h * delta[3].exp();
    BoundingBox::new(proposal.x + delta[0] * w, proposal.y + delta[1] * h, w, h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionProposal<T> {
    pub id: usize,
    pub bbox: BoundingBox<T>,
    pub confidence: T,
    /// `[1 × D_in]` appearance descriptor.
    pub feature: Tensor<T>,
}

impl<T: Scalar> RegionProposal<T> {
    pub fn new(id: usize, bbox: BoundingBox<T>, confidence: T, feature: Tensor<T>) -> Result<Self> {
        if !(confidence >= T::zero() && confidence <= T::one()) {
            return Err(Error::contract(format!("confidence {confidence} outside [0, 1]")));
        }
        if !bbox.is_valid() {
            return Err(Error::contract(format!("invalid box {bbox:?}")));
        }
        if !feature.is_finite() {
            return Err(Error::contract("non-finite region feature"));
        }
        Ok(Self {
            id,
            bbox,
            confidence,
            feature,
        })
    }
}

fn by_confidence<T: Scalar>(a: &RegionProposal<T>, b: &RegionProposal<T>) -> Ordering {
    b.confidence
        .partial_cmp(&a.confidence)
        .unwrap_or(Ordering::Equal)
        .then(a.id.cmp(&b.id))
}

/// Greedy non-maximum suppression in descending confidence (ties by ascending
/// id). A proposal is dropped when its IoU with an already kept one exceeds
/// `iou_threshold`; at most `keep` survive.
pub fn nms<T: Scalar>(proposals: &[RegionProposal<T>], iou_threshold: T, keep: usize) -> Vec<RegionProposal<T>> {
    let mut order: Vec<&RegionProposal<T>> = proposals.iter().collect();
    order.sort_by(|a, b| by_confidence(a, b));
    let mut kept: Vec<RegionProposal<T>> = Vec::new();
    for p in order {
        if kept.len() >= keep {
            break;
        }
        if kept.iter().all(|k| iou(&k.bbox, &p.bbox) <= iou_threshold) {
            kept.push(p.clone());
        }
    }
    kept
}

pub const POSITIVE_IOU: f64 = 0.7;
pub const NEGATIVE_IOU: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchLabel {
    /// Index of the best-overlapping ground-truth box.
    Positive(usize),
    Negative,
    Ignore,
}

/// Labels each proposal box: positive at max IoU ≥ 0.7, negative when every
/// IoU is below 0.3, ignored otherwise.
pub fn match_to_gt<T: Scalar>(proposals: &[BoundingBox<T>], gt: &[BoundingBox<T>]) -> Vec<MatchLabel> {
    proposals
        .iter()
        .map(|p| {
            let mut best: Option<(usize, T)> = None;
            for (gi, g) in gt.iter().enumerate() {
                let v = iou(p, g);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((gi, v));
                }
            }
            match best {
                Some((gi, v)) if v >= T::lit(POSITIVE_IOU) => MatchLabel::Positive(gi),
                Some((_, v)) if v >= T::lit(NEGATIVE_IOU) => MatchLabel::Ignore,
                _ => MatchLabel::Negative,
            }
        })
        .collect()
}

/// Ordered (subject, object) pair of proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPair<T> {
    /// Position of the subject within the proposal list the pair came from.
    pub subject_index: usize,
    pub object_index: usize,
    pub subject: RegionProposal<T>,
    pub object: RegionProposal<T>,
    pub union_box: BoundingBox<T>,
    pub geo: GeometricFeature<T>,
}

impl<T: Scalar> RegionPair<T> {
    pub fn new(proposals: &[RegionProposal<T>], s: usize, o: usize) -> Result<Self> {
        let (subject, object) = (&proposals[s], &proposals[o]);
        if subject.id == object.id {
            return Err(Error::contract(format!("pair with identical ids {}", subject.id)));
        }
        Ok(Self {
            subject_index: s,
            object_index: o,
            union_box: union_box(&subject.bbox, &object.bbox),
            geo: geometric_feature(&subject.bbox, &object.bbox)?,
            subject: subject.clone(),
            object: object.clone(),
        })
    }
}

/// All ordered pairs `(i, j)`, `i ≠ j`, in lexicographic order. With
/// `max_pairs`, only the pairs with the largest subject·object confidence
/// product are kept (still in lexicographic order).
pub fn combination_layer<T: Scalar>(
    proposals: &[RegionProposal<T>],
    max_pairs: Option<usize>,
) -> Result<Vec<RegionPair<T>>> {
    for (i, a) in proposals.iter().enumerate() {
        if proposals[i + 1..].iter().any(|b| b.id == a.id) {
            return Err(Error::contract(format!("duplicate proposal id {}", a.id)));
        }
    }
    let n = proposals.len();
    let mut index: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    if let Some(cap) = max_pairs {
        if index.len() > cap {
            let score = |&(i, j): &(usize, usize)| proposals[i].confidence * proposals[j].confidence;
            let mut ranked = index.clone();
            ranked.sort_by(|a, b| score(b).partial_cmp(&score(a)).unwrap_or(Ordering::Equal));
            ranked.truncate(cap);
            ranked.sort();
            index = ranked;
        }
    }
    index
        .into_iter()
        .map(|(i, j)| RegionPair::new(proposals, i, j))
        .collect()
}
