//! Quadratic weighted kappa.
//!
//! `Q = 1 − ΣW∘C / ΣW∘E` with `W_ij = (i − j)² / (N − 1)²`, `C` the joint
//! rating counts and `E = hist_gold ⊗ hist_pred / n`, so `ΣE = ΣC = n`.

use serde::{Deserialize, Serialize};

use crate::corpus::ScoreRange;
use crate::error::{Error, Result};

/// Quadratic disagreement weights for `n` candidate ratings.
pub fn weight_matrix(n: usize) -> Result<Vec<Vec<f64>>> {
    if n < 2 {
        return Err(Error::Domain(format!("weight matrix needs at least 2 ratings, got {n}")));
    }
    let denom = ((n - 1) * (n - 1)) as f64;
    Ok((0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let d = i as f64 - j as f64;
                    d * d / denom
                })
                .collect()
        })
        .collect())
}

/// Gold and predicted ratings over a shared inclusive range.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingPairSet {
    gold: Vec<i64>,
    pred: Vec<i64>,
    range: ScoreRange,
}

impl RatingPairSet {
    pub fn new(gold: Vec<i64>, pred: Vec<i64>, range: ScoreRange) -> Result<Self> {
        if gold.len() != pred.len() {
            return Err(Error::Validation(format!(
                "rating lists differ in length ({} vs {})",
                gold.len(),
                pred.len()
            )));
        }
        if gold.is_empty() {
            return Err(Error::Empty("rating pair set".into()));
        }
        if let Some(v) = gold.iter().chain(&pred).find(|&&v| !range.contains(v)) {
            return Err(Error::Validation(format!("rating {v} outside range {range}")));
        }
        Ok(RatingPairSet { gold, pred, range })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (i64, i64)>, range: ScoreRange) -> Result<Self> {
        let (gold, pred) = pairs.into_iter().unzip();
        Self::new(gold, pred, range)
    }

    pub fn gold(&self) -> &[i64] {
        &self.gold
    }

    pub fn pred(&self) -> &[i64] {
        &self.pred
    }

    pub fn range(&self) -> ScoreRange {
        self.range
    }

    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }
}

/// A kappa value. `degenerate` marks constant rating lists (where the
/// value is 1 on exact agreement and 0 otherwise) and undefined inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub value: f64,
    pub degenerate: bool,
}

impl Kappa {
    pub(crate) fn undefined() -> Self {
        Kappa { value: 0.0, degenerate: true }
    }
}

pub fn qwk(pairs: &RatingPairSet) -> Kappa {
    let n_ratings = pairs.range.len();
    let lo = pairs.range.lo;
    let n = pairs.len() as f64;
    // a single-rating range can only hold exact agreement
    if n_ratings < 2 {
        return Kappa { value: 1.0, degenerate: true };
    }
    let w = weight_matrix(n_ratings).expect("n_ratings >= 2");
    let mut counts = vec![vec![0.0f64; n_ratings]; n_ratings];
    let mut hist_gold = vec![0.0f64; n_ratings];
    let mut hist_pred = vec![0.0f64; n_ratings];
    for (&g, &p) in pairs.gold.iter().zip(&pairs.pred) {
        let (i, j) = ((g - lo) as usize, (p - lo) as usize);
        counts[i][j] += 1.0;
        hist_gold[i] += 1.0;
        hist_pred[j] += 1.0;
    }
    let mut observed = 0.0;
    let mut expected = 0.0;
    for i in 0..n_ratings {
        for j in 0..n_ratings {
            observed += w[i][j] * counts[i][j];
            expected += w[i][j] * hist_gold[i] * hist_pred[j] / n;
        }
    }
    let constant = |v: &[i64]| v.iter().all(|&x| x == v[0]);
    if expected == 0.0 || (constant(&pairs.gold) && constant(&pairs.pred)) {
        let exact = pairs.gold == pairs.pred;
        return Kappa { value: if exact { 1.0 } else { 0.0 }, degenerate: true };
    }
    Kappa { value: 1.0 - observed / expected, degenerate: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pairwise form: observed mean disagreement over mean disagreement of
    /// all gold×pred cross pairs. Shares no code with `qwk`.
    fn brute_force(gold: &[i64], pred: &[i64], range: ScoreRange) -> f64 {
        let span = (range.hi - range.lo) as f64;
        let d = |a: i64, b: i64| ((a - b) as f64 / span).powi(2);
        let n = gold.len() as f64;
        let obs: f64 = gold.iter().zip(pred).map(|(&g, &p)| d(g, p)).sum::<f64>() / n;
        let exp: f64 = gold
            .iter()
            .map(|&g| pred.iter().map(|&p| d(g, p)).sum::<f64>())
            .sum::<f64>()
            / (n * n);
        1.0 - obs / exp
    }

    fn set(g: &[i64], p: &[i64], lo: i64, hi: i64) -> RatingPairSet {
        RatingPairSet::new(g.to_vec(), p.to_vec(), ScoreRange::new(lo, hi)).unwrap()
    }

    #[test]
    fn weight_matrix_entries() {
        let w = weight_matrix(4).unwrap();
        assert_eq!(w[2][2], 0.0);
        assert_eq!(w[0][3], 1.0);
        assert_eq!(w[3][0], 1.0);
        assert!((w[1][3] - 4.0 / 9.0).abs() < 1e-15);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(w[i][j], w[j][i]);
            }
        }
        assert!(matches!(weight_matrix(1), Err(Error::Domain(_))));
    }

    #[test]
    fn worked_examples() {
        assert_eq!(qwk(&set(&[0, 1, 2], &[0, 1, 2], 0, 2)).value, 1.0);
        let k = qwk(&set(&[0, 0, 1, 2], &[0, 1, 1, 2], 0, 2));
        assert!((k.value - 0.8).abs() < 1e-12, "{}", k.value);
        assert!((brute_force(&[0, 0, 1, 2], &[0, 1, 1, 2], ScoreRange::new(0, 2)) - 0.8).abs() < 1e-12);
        let k = qwk(&set(&[0, 0], &[0, 0], 0, 4));
        assert_eq!(k, Kappa { value: 1.0, degenerate: true });
        let k = qwk(&set(&[2, 2], &[3, 3], 0, 4));
        assert_eq!(k.value, 0.0);
    }

    #[test]
    fn rejects_bad_pair_sets() {
        let r = ScoreRange::new(0, 2);
        assert!(RatingPairSet::new(vec![0], vec![0, 1], r).is_err());
        assert!(RatingPairSet::new(vec![], vec![], r).is_err());
        assert!(RatingPairSet::new(vec![3], vec![0], r).is_err());
    }

    fn pair_sets() -> impl Strategy<Value = (Vec<i64>, Vec<i64>, i64, i64)> {
        (-5i64..5, 2i64..=13).prop_flat_map(|(lo, n)| {
            let hi = lo + n - 1;
            (1usize..=50).prop_flat_map(move |len| {
                (
                    proptest::collection::vec(lo..=hi, len),
                    proptest::collection::vec(lo..=hi, len),
                    Just(lo),
                    Just(hi),
                )
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn matches_brute_force((g, p, lo, hi) in pair_sets()) {
            let k = qwk(&set(&g, &p, lo, hi));
            if !k.degenerate {
                prop_assert!((k.value - brute_force(&g, &p, ScoreRange::new(lo, hi))).abs() < 1e-9);
            }
        }

        #[test]
        fn self_agreement_is_one((g, _p, lo, hi) in pair_sets()) {
            prop_assert!((qwk(&set(&g, &g, lo, hi)).value - 1.0).abs() < 1e-12);
        }

        #[test]
        fn symmetric_bounded_and_translation_invariant((g, p, lo, hi) in pair_sets(), shift in -7i64..7) {
            let a = qwk(&set(&g, &p, lo, hi));
            let b = qwk(&set(&p, &g, lo, hi));
            prop_assert!((a.value - b.value).abs() < 1e-12);
            prop_assert!(a.value <= 1.0 + 1e-12);
            if g != p && !a.degenerate {
                prop_assert!(a.value < 1.0);
            }
            let gs: Vec<i64> = g.iter().map(|v| v + shift).collect();
            let ps: Vec<i64> = p.iter().map(|v| v + shift).collect();
            let c = qwk(&set(&gs, &ps, lo + shift, hi + shift));
            prop_assert!((a.value - c.value).abs() < 1e-12);
        }
    }
}
