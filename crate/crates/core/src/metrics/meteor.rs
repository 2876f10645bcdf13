//! Unigram METEOR restricted to exact and Porter-stem matches.

use serde::{Deserialize, Serialize};

/// Alignment statistics behind a METEOR score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeteorDetail {
    pub score: f64,
    pub matches: usize,
    pub chunks: usize,
    pub precision: f64,
    pub recall: f64,
    pub fmean: f64,
    pub penalty: f64,
    /// Set when the candidate or the reference was empty.
    pub empty_input: bool,
}

impl MeteorDetail {
    fn zero(empty_input: bool) -> Self {
        Self {
            score: 0.0,
            matches: 0,
            chunks: 0,
            precision: 0.0,
            recall: 0.0,
            fmean: 0.0,
            penalty: 0.0,
            empty_input,
        }
    }
}

/// Pairs `(candidate index, reference index)` sorted by candidate index.
/// Exact matches are aligned first, then stem matches among the leftovers;
/// each candidate token takes the leftmost free reference token.
pub fn align<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Vec<(usize, usize)> {
    let mut ref_used = vec![false; reference.len()];
    let mut cand_match: Vec<Option<usize>> = vec![None; candidate.len()];
    let stage = |key: &dyn Fn(&str) -> String, ref_used: &mut Vec<bool>, cand_match: &mut Vec<Option<usize>>| {
        let ref_keys: Vec<String> = reference.iter().map(|r| key(r.as_ref())).collect();
        for (i, c) in candidate.iter().enumerate() {
            if cand_match[i].is_some() {
                continue;
            }
            let k = key(c.as_ref());
            if let Some(j) = (0..reference.len()).find(|&j| !ref_used[j] && ref_keys[j] == k) {
                ref_used[j] = true;
                cand_match[i] = Some(j);
            }
        }
    };
    stage(&|w| w.to_string(), &mut ref_used, &mut cand_match);
    stage(&porter_stemmer::stem, &mut ref_used, &mut cand_match);
    cand_match
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect()
}

/// Number of maximal runs of matches adjacent in both sentences.
pub fn count_chunks(alignment: &[(usize, usize)]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for &(i, j) in alignment {
        match prev {
            Some((pi, pj)) if i == pi + 1 && j == pj + 1 => {}
            _ => chunks += 1,
        }
        prev = Some((i, j));
    }
    chunks
}

pub fn meteor_detail<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> MeteorDetail {
    if candidate.is_empty() || reference.is_empty() {
        return MeteorDetail::zero(true);
    }
    let alignment = align(candidate, reference);
    let m = alignment.len();
    if m == 0 {
        return MeteorDetail::zero(false);
    }
    let chunks = count_chunks(&alignment);
    let mf = m as f64;
    let precision = mf / candidate.len() as f64;
    let recall = mf / reference.len() as f64;
    let fmean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let penalty = 0.5 * (chunks as f64 / mf).powi(3);
    // fmean * (1 - penalty) as one ratio of integers, so the score is
    // correctly rounded: 5 (2m³ - ch³) / ((c + 9r) m²).
    let (m3, ch3) = ((m * m * m) as f64, (chunks * chunks * chunks) as f64);
    let denom = (candidate.len() + 9 * reference.len()) as f64 * (m * m) as f64;
    MeteorDetail {
        score: 5.0 * (2.0 * m3 - ch3) / denom,
        matches: m,
        chunks,
        precision,
        recall,
        fmean,
        penalty,
        empty_input: false,
    }
}

/// METEOR score of `candidate` against `reference`, both lowercased tokens.
/// Empty inputs score 0.
pub fn meteor_lite<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    meteor_detail(candidate, reference).score
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_three_tokens() {
        let s = meteor_lite(&toks("the red square"), &toks("the red square"));
        assert!((s - (1.0 - 0.5 / 27.0)).abs() < 1e-15);
    }

    #[test]
    fn red_car() {
        let d = meteor_detail(&toks("a red car"), &toks("a car"));
        assert_eq!((d.matches, d.chunks), (2, 2));
        let (p, r) = (2.0 / 3.0, 1.0);
        let f = 10.0 * p * r / (r + 9.0 * p);
        assert!((d.score - f * (1.0 - 0.5 * 1.0f64.powi(3))).abs() < 1e-15);
    }

    #[test]
    fn empty_and_disjoint() {
        assert_eq!(meteor_lite(&toks("a b"), &toks("c d")), 0.0);
        let d = meteor_detail(&toks(""), &toks("c d"));
        assert!(d.empty_input && d.score == 0.0);
        assert!(!meteor_detail(&toks("a"), &toks("b")).empty_input);
    }

    #[test]
    fn stem_stage_runs_after_exact_stage() {
        // "runs" would stem-match "run" first, but exact matching claims the
        // second "runs" before stemming is tried.
        let a = align(&toks("runs"), &toks("run runs"));
        assert_eq!(a, vec![(0, 1)]);
        let b = align(&toks("running dogs"), &toks("dog run"));
        assert_eq!(b, vec![(0, 1), (1, 0)]);
        assert_eq!(count_chunks(&b), 2);
    }

    #[test]
    fn asymmetric() {
        let (a, b) = (toks("a red car"), toks("a car"));
        assert!(meteor_lite(&a, &b) != meteor_lite(&b, &a));
    }

    proptest! {
        #[test]
        fn self_score_bounds(words in proptest::collection::vec("[a-e]{1,3}", 2..12)) {
            let s = meteor_lite(&words, &words);
            prop_assert!(s > 0.5 && s <= 1.0, "{s}");
        }

        #[test]
        fn score_in_unit_interval(
            a in proptest::collection::vec("[a-d]{1,2}", 0..8),
            b in proptest::collection::vec("[a-d]{1,2}", 0..8),
        ) {
            let s = meteor_lite(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn single_token_self_score_is_one_half() {
        assert_eq!(meteor_lite(&toks("square"), &toks("square")), 0.5);
    }

    #[test]
    fn self_score_tends_to_one() {
        let long: Vec<String> = (0..200).map(|i| format!("w{i}")).collect();
        assert!(meteor_lite(&long, &long) > 0.9999);
    }
}
