//! Hard top-γ truncation of a scored pool.

use serde::{Deserialize, Serialize};

use crate::score::ScoreRecord;
use crate::{Error, PairId, Result};

/// Products within this distance of an integer are treated as that integer,
/// so `0.7 · 100` keeps 70 pairs rather than 71.
const ROUNDING_SLACK: f64 = 1e-9;

/// `⌈γ · pool_size⌉`, never zero for a nonempty pool.
pub fn retention_count(pool_size: usize, gamma: f64) -> Result<usize> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::domain(format!("keep ratio must lie in (0, 1], got {gamma}")));
    }
    if pool_size == 0 {
        return Err(Error::domain("cannot select from an empty pool"));
    }
    let exact = gamma * pool_size as f64;
    let nearest = exact.round();
    let count = if (exact - nearest).abs() <= ROUNDING_SLACK * nearest.max(1.0) {
        nearest
    } else {
        exact.ceil()
    };
    Ok((count as usize).clamp(1, pool_size))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Retained ids, highest score first.
    pub retained_ids: Vec<PairId>,
    /// Dropped ids in rank order, followed by any quarantined ids.
    pub dropped_ids: Vec<PairId>,
    /// Pairs with non-finite scores; always part of `dropped_ids`.
    pub quarantined_ids: Vec<PairId>,
    pub retention_count: usize,
    pub gamma_used: f64,
    /// Lowest retained score.
    pub threshold: Option<f64>,
}

impl SelectionResult {
    pub fn audit(&self, interval: usize) -> SelectionAudit {
        SelectionAudit {
            interval,
            pool_size: self.retained_ids.len() + self.dropped_ids.len(),
            retained: self.retained_ids.len(),
            dropped: self.dropped_ids.len(),
            quarantined: self.quarantined_ids.len(),
            gamma: self.gamma_used,
            threshold: self.threshold,
        }
    }
}

/// One JSON-lines audit record per interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionAudit {
    pub interval: usize,
    pub pool_size: usize,
    pub retained: usize,
    pub dropped: usize,
    pub quarantined: usize,
    pub gamma: f64,
    pub threshold: Option<f64>,
}

/// Ranks `(id, score)` entries by descending score with ascending-id
/// tie-breaks and keeps the first `⌈γ·n⌉`. Non-finite scores are never
/// retained.
pub fn rank_scores(scored: &[(PairId, f64)], gamma: f64) -> Result<SelectionResult> {
    let keep = retention_count(scored.len(), gamma)?;

    let (mut ranked, quarantined): (Vec<_>, Vec<_>) =
        scored.iter().copied().partition(|(_, s)| s.is_finite());
    if !quarantined.is_empty() {
        log::error!(
            "{} pairs with non-finite scores quarantined: {:?}",
            quarantined.len(),
            quarantined.iter().map(|(id, _)| id).collect::<Vec<_>>()
        );
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let cut = keep.min(ranked.len());
    let threshold = cut.checked_sub(1).map(|i| ranked[i].1);
    let retained_ids: Vec<PairId> = ranked[..cut].iter().map(|(id, _)| *id).collect();
    let quarantined_ids: Vec<PairId> = quarantined.iter().map(|(id, _)| *id).collect();
    let dropped_ids: Vec<PairId> = ranked[cut..]
        .iter()
        .map(|(id, _)| *id)
        .chain(quarantined_ids.iter().copied())
        .collect();

    Ok(SelectionResult {
        retained_ids,
        dropped_ids,
        quarantined_ids,
        retention_count: keep,
        gamma_used: gamma,
        threshold,
    })
}

pub fn rank_and_truncate(records: &[ScoreRecord], gamma: f64) -> Result<SelectionResult> {
    let scored: Vec<(PairId, f64)> = records.iter().map(|r| (r.pair_id, r.sage_score)).collect();
    rank_scores(&scored, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retention_examples() {
        assert_eq!(retention_count(100, 0.4).unwrap(), 40);
        assert_eq!(retention_count(100, 1.0).unwrap(), 100);
        assert_eq!(retention_count(7, 0.4).unwrap(), 3);
        assert_eq!(retention_count(100, 0.7).unwrap(), 70);
        assert_eq!(retention_count(3, 1e-9).unwrap(), 1);
        assert!(retention_count(10, 0.0).is_err());
        assert!(retention_count(10, 1.5).is_err());
        assert!(retention_count(10, f64::NAN).is_err());
        assert!(retention_count(0, 0.5).is_err());
    }

    #[test]
    fn top_two_of_three() {
        let r = rank_scores(&[(1, 3.0), (2, 1.0), (3, 2.0)], 2.0 / 3.0).unwrap();
        assert_eq!(r.retained_ids, vec![1, 3]);
        assert_eq!(r.dropped_ids, vec![2]);
        assert_eq!(r.threshold, Some(2.0));
    }

    #[test]
    fn ties_go_to_lower_ids() {
        let scored: Vec<_> = [7, 3, 9, 1, 4, 8].iter().map(|&id| (id, 0.5)).collect();
        let r = rank_scores(&scored, 0.5).unwrap();
        assert_eq!(r.retained_ids, vec![1, 3, 4]);
    }

    #[test]
    fn nan_is_quarantined() {
        let r = rank_scores(&[(1, f64::NAN), (2, 0.1), (3, 0.2)], 1.0).unwrap();
        assert_eq!(r.retained_ids, vec![3, 2]);
        assert_eq!(r.quarantined_ids, vec![1]);
        assert!(r.dropped_ids.contains(&1));

        let r = rank_scores(&[(1, f64::NAN)], 1.0).unwrap();
        assert!(r.retained_ids.is_empty());
        assert_eq!(r.threshold, None);
    }

    #[test]
    fn audit_counts() {
        let r = rank_scores(&[(1, 3.0), (2, 1.0), (3, 2.0)], 0.5).unwrap();
        let audit = r.audit(4);
        assert_eq!((audit.pool_size, audit.retained, audit.dropped), (3, 2, 1));
        assert_eq!(audit.interval, 4);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn pool() -> impl Strategy<Value = Vec<(PairId, f64)>> {
            proptest::collection::vec(prop_oneof![0.0f64..10.0, (0u8..4).prop_map(f64::from)], 1..200)
                .prop_map(|scores| scores.into_iter().enumerate().map(|(i, s)| ((i as u64 * 7919) % 1009, s)).collect())
                .prop_filter("unique ids", |p: &Vec<(PairId, f64)>| {
                    let mut ids: Vec<_> = p.iter().map(|x| x.0).collect();
                    ids.sort_unstable();
                    ids.windows(2).all(|w| w[0] != w[1])
                })
        }

        proptest! {
            #[test]
            fn threshold_and_partition(scored in pool(), gamma in 0.01f64..=1.0) {
                let r = rank_scores(&scored, gamma).unwrap();
                let score_of = |id: &PairId| scored.iter().find(|x| x.0 == *id).unwrap().1;
                let min_kept = r.retained_ids.iter().map(score_of).fold(f64::INFINITY, f64::min);
                let max_dropped = r.dropped_ids.iter().map(score_of).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(min_kept >= max_dropped);
                prop_assert_eq!(r.retained_ids.len(), r.retention_count);
                prop_assert_eq!(r.retained_ids.len() + r.dropped_ids.len(), scored.len());
            }

            #[test]
            fn monotone_in_gamma(scored in pool(), a in 0.01f64..=1.0, b in 0.01f64..=1.0) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let small = rank_scores(&scored, lo).unwrap();
                let large = rank_scores(&scored, hi).unwrap();
                prop_assert!(small.retained_ids.iter().all(|id| large.retained_ids.contains(id)));
            }

            #[test]
            fn scale_equivariant(scored in pool(), gamma in 0.01f64..=1.0, c in 0.01f64..100.0) {
                let scaled: Vec<_> = scored.iter().map(|&(id, s)| (id, s * c)).collect();
                prop_assert_eq!(
                    rank_scores(&scored, gamma).unwrap().retained_ids,
                    rank_scores(&scaled, gamma).unwrap().retained_ids
                );
            }
        }
    }
}
