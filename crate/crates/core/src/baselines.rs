//! Comparison selectors. None of them see the validation set except
//! `direct-val`, which trains on it instead of selecting.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::{cosine, ordered_mean, NEAR_ZERO_NORM};
use crate::rng::Stream;
use crate::selector::{select_top_fraction, uniform_subset, CandidateEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum SelectorKind {
    #[default]
    #[serde(rename = "gradalign")]
    GradAlign,
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "accgreedy")]
    AccGreedy,
    #[serde(rename = "align")]
    Align,
    #[serde(rename = "direct-val")]
    DirectVal,
}

impl SelectorKind {
    pub const ALL: [SelectorKind; 5] = [
        SelectorKind::GradAlign,
        SelectorKind::Random,
        SelectorKind::AccGreedy,
        SelectorKind::Align,
        SelectorKind::DirectVal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SelectorKind::GradAlign => "gradalign",
            SelectorKind::Random => "random",
            SelectorKind::AccGreedy => "accgreedy",
            SelectorKind::Align => "align",
            SelectorKind::DirectVal => "direct-val",
        }
    }

    /// Whether the selector needs per-candidate rollouts.
    pub fn estimates_candidates(self) -> bool {
        matches!(
            self,
            SelectorKind::GradAlign | SelectorKind::AccGreedy | SelectorKind::Align
        )
    }

    pub fn uses_validation_rollouts(self) -> bool {
        self == SelectorKind::GradAlign
    }
}

impl std::fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SelectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SelectorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown selector {s:?}")))
    }
}

pub fn random_select(ids: &[u64], q: usize, rng: &mut Stream) -> Result<Vec<u64>> {
    uniform_subset(ids, q, rng)
}

/// Scores used by [`acc_greedy_select`]: `-|pass_rate - 0.5|`.
pub fn acc_greedy_scores(pass_rates: &[f64]) -> Result<Vec<f64>> {
    pass_rates
        .iter()
        .map(|&p| {
            if (0.0..=1.0).contains(&p) {
                Ok(-(p - 0.5).abs())
            } else {
                Err(Error::Input(format!("pass rate {p} outside [0, 1]")))
            }
        })
        .collect()
}

/// Keeps the candidates whose pass rates are closest to one half.
pub fn acc_greedy_select(pass_rates: &[f64], ids: &[u64], q: usize) -> Result<Vec<u64>> {
    select_top_fraction(&acc_greedy_scores(pass_rates)?, ids, q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignOutcome {
    pub selected_ids: Vec<u64>,
    pub scores: Vec<f64>,
    /// The pool-mean gradient vanished and selection fell back to uniform.
    pub degenerate: bool,
}

/// Ranks candidates by cosine similarity to the mean gradient of the whole
/// pool. Only the candidates themselves are consulted.
pub fn align_select(
    candidates: &[CandidateEstimate],
    q: usize,
    rng: &mut Stream,
) -> Result<AlignOutcome> {
    let first = candidates
        .first()
        .ok_or_else(|| Error::Input("align needs at least one candidate gradient".into()))?;
    let len = first.gradient.len();
    let ids: Vec<u64> = candidates.iter().map(|c| c.id).collect();
    let mean = ordered_mean(
        candidates
            .iter()
            .map(|c| (c.id, c.gradient.clone()))
            .collect(),
        len,
    )?;
    let scores = candidates
        .iter()
        .map(|c| cosine(&c.gradient, &mean))
        .collect::<Result<Vec<_>>>()?;
    if mean.norm() < NEAR_ZERO_NORM {
        log::warn!("align: pool-mean gradient vanished, selecting uniformly");
        return Ok(AlignOutcome {
            selected_ids: uniform_subset(&ids, q, rng)?,
            scores,
            degenerate: true,
        });
    }
    Ok(AlignOutcome {
        selected_ids: select_top_fraction(&scores, &ids, q)?,
        scores,
        degenerate: false,
    })
}

/// Indices into the validation set for one training step: without replacement
/// when the set is large enough, otherwise with replacement.
pub fn direct_val_batch<R: Rng + ?Sized>(
    validation_len: usize,
    n_train: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if validation_len == 0 {
        return Err(Error::Input(
            "direct-val needs a non-empty validation set".into(),
        ));
    }
    if validation_len >= n_train {
        Ok(sample(rng, validation_len, n_train).into_vec())
    } else {
        Ok((0..n_train)
            .map(|_| rng.gen_range(0..validation_len))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradient::GradientVec;
    use crate::rng::stream;

    fn est(id: u64, g: Vec<f64>, pass_rate: f64) -> CandidateEstimate {
        CandidateEstimate {
            id,
            gradient: GradientVec(g),
            pass_rate,
        }
    }

    #[test]
    fn parse_selector_names() {
        for k in SelectorKind::ALL {
            assert_eq!(k.as_str().parse::<SelectorKind>().unwrap(), k);
        }
        assert!("greedy".parse::<SelectorKind>().is_err());
    }

    #[test]
    fn random_select_contract() {
        let ids = [4, 5, 6, 7];
        assert!(random_select(&ids, 1, &mut stream(0, "r", 0, 0)).is_err());
        let a = random_select(&ids, 2, &mut stream(3, "r", 0, 0)).unwrap();
        let b = random_select(&ids, 2, &mut stream(3, "r", 0, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn random_select_is_uniform() {
        let ids: Vec<u64> = (0..8).collect();
        let q = 4;
        let n = 10_000;
        let mut counts = [0usize; 8];
        for seed in 0..n {
            for id in random_select(&ids, q, &mut stream(seed, "r", 0, 0)).unwrap() {
                counts[id as usize] += 1;
            }
        }
        let p = 1.0 / q as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - p).abs() < 3.0 * se, "{freq}");
        }
    }

    #[test]
    fn acc_greedy_cases() {
        assert_eq!(
            acc_greedy_select(&[0.1, 0.5, 0.9, 0.45], &[1, 2, 3, 4], 2).unwrap(),
            vec![2, 4]
        );
        assert_eq!(
            acc_greedy_select(&[0.5; 4], &[9, 2, 7, 4], 2).unwrap(),
            vec![2, 4]
        );
        assert!(acc_greedy_select(&[1.5], &[1], 2).is_err());
    }

    #[test]
    fn acc_greedy_prefers_coin_flip_problems() {
        // Coin-flip rewards concentrate near 0.5; saturated clean problems sit near 1.
        let mut rng = stream(1, "acc", 0, 0);
        let mut rates = Vec::new();
        let mut ids = Vec::new();
        for i in 0..32u64 {
            let corrupted = i % 2 == 0;
            let k = 16;
            let hits = (0..k)
                .filter(|_| {
                    if corrupted {
                        rng.gen::<f64>() < 0.5
                    } else {
                        rng.gen::<f64>() < 0.97
                    }
                })
                .count();
            rates.push(hits as f64 / k as f64);
            ids.push(i);
        }
        let picked = acc_greedy_select(&rates, &ids, 4).unwrap();
        let corrupted = picked.iter().filter(|id| *id % 2 == 0).count();
        assert!(corrupted as f64 / picked.len() as f64 > 0.8);
    }

    #[test]
    fn acc_greedy_ignores_gradients() {
        let a = vec![
            est(1, vec![1.0, 0.0], 0.3),
            est(2, vec![0.0, 1.0], 0.55),
            est(3, vec![-1.0, 0.0], 0.9),
        ];
        let mut b = a.clone();
        b[0].gradient = GradientVec(vec![0.0, -7.0]);
        b[2].gradient = GradientVec(vec![3.0, 3.0]);
        let pick = |c: &[CandidateEstimate]| {
            let rates: Vec<f64> = c.iter().map(|e| e.pass_rate).collect();
            let ids: Vec<u64> = c.iter().map(|e| e.id).collect();
            acc_greedy_select(&rates, &ids, 2).unwrap()
        };
        assert_eq!(pick(&a), pick(&b));
    }

    #[test]
    fn align_identical_gradients_tie_break() {
        let c: Vec<_> = (0..4).map(|i| est(10 - i, vec![1.0, 2.0], 0.5)).collect();
        let out = align_select(&c, 2, &mut stream(0, "a", 0, 0)).unwrap();
        assert!(out.scores.iter().all(|s| (s - 1.0).abs() < 1e-12));
        assert_eq!(out.selected_ids, vec![7, 8]);
    }

    #[test]
    fn align_excludes_orthogonal_outlier() {
        let c = vec![
            est(1, vec![1.0, 0.1], 0.5),
            est(2, vec![1.0, -0.1], 0.5),
            est(3, vec![0.0, 1.0], 0.5),
            est(4, vec![0.9, 0.0], 0.5),
        ];
        let out = align_select(&c, 2, &mut stream(0, "a", 0, 0)).unwrap();
        assert!(!out.selected_ids.contains(&3));
        assert!(!out.degenerate);
    }

    #[test]
    fn align_symmetric_pool_falls_back() {
        let c = vec![est(1, vec![1.0, 0.0], 0.5), est(2, vec![-1.0, 0.0], 0.5)];
        let out = align_select(&c, 2, &mut stream(0, "a", 0, 0)).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.selected_ids.len(), 1);
        assert!(align_select(&[], 2, &mut stream(0, "a", 0, 0)).is_err());
    }

    #[test]
    fn direct_val_batches() {
        let mut rng = stream(0, "d", 0, 0);
        let mut batch = direct_val_batch(6, 6, &mut rng).unwrap();
        batch.sort_unstable();
        assert_eq!(batch, (0..6).collect::<Vec<_>>());
        assert_eq!(direct_val_batch(1, 5, &mut rng).unwrap(), vec![0; 5]);
        assert!(direct_val_batch(0, 5, &mut rng).is_err());
    }
}
