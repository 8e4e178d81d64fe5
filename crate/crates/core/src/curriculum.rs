//! Coarse-grained curriculum: difficulty strata, linear mixing schedule and
//! disjoint refreshable pools.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::preference::PreferencePair;
use crate::{Error, PairId, Result};

/// Judge-assigned distinctness between the chosen and rejected responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Clarity {
    High,
    Medium,
    Low,
}

impl Clarity {
    pub const ALL: [Clarity; 3] = [Clarity::High, Clarity::Medium, Clarity::Low];

    pub fn as_str(self) -> &'static str {
        match self {
            Clarity::High => "High",
            Clarity::Medium => "Medium",
            Clarity::Low => "Low",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        Clarity::ALL.into_iter().find(|c| c.as_str() == token)
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

/// Clarity label plus the 1–5 quality score of the rejected response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Annotation {
    pub clarity: Clarity,
    pub rejected_quality: u8,
}

impl Annotation {
    pub fn new(clarity: Clarity, rejected_quality: u8) -> Result<Self> {
        if !(1..=5).contains(&rejected_quality) {
            return Err(Error::domain(format!(
                "rejected quality must be in 1..=5, got {rejected_quality}"
            )));
        }
        Ok(Self {
            clarity,
            rejected_quality,
        })
    }

    pub fn difficulty(&self) -> Difficulty {
        match (self.clarity, self.rejected_quality) {
            (Clarity::High, q) if q <= 2 => Difficulty::Easy,
            (Clarity::Medium, 2 | 3) => Difficulty::Medium,
            _ => Difficulty::Hard,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DifficultyStratum {
    pub label: Difficulty,
    pub member_ids: BTreeSet<PairId>,
}

/// The three disjoint difficulty strata, indexed by [`Difficulty`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Strata {
    strata: [DifficultyStratum; 3],
}

impl Strata {
    pub fn new(easy: BTreeSet<PairId>, medium: BTreeSet<PairId>, hard: BTreeSet<PairId>) -> Result<Self> {
        let strata = Self {
            strata: [
                DifficultyStratum { label: Difficulty::Easy, member_ids: easy },
                DifficultyStratum { label: Difficulty::Medium, member_ids: medium },
                DifficultyStratum { label: Difficulty::Hard, member_ids: hard },
            ],
        };
        let total: usize = strata.sizes().iter().sum();
        let union: BTreeSet<PairId> = strata.iter().flat_map(|s| s.member_ids.iter().copied()).collect();
        if union.len() != total {
            return Err(Error::domain("difficulty strata overlap"));
        }
        Ok(strata)
    }

    pub fn empty() -> Self {
        Self::new(BTreeSet::new(), BTreeSet::new(), BTreeSet::new()).expect("empty strata are disjoint")
    }

    pub fn get(&self, label: Difficulty) -> &DifficultyStratum {
        &self.strata[label.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &DifficultyStratum> {
        self.strata.iter()
    }

    /// `(easy, medium, hard)` member counts.
    pub fn sizes(&self) -> [usize; 3] {
        [0, 1, 2].map(|i| self.strata[i].member_ids.len())
    }

    pub fn total(&self) -> usize {
        self.sizes().iter().sum()
    }

    /// CSV with columns `stratum,count,fraction`.
    pub fn to_csv(&self) -> Result<String> {
        let total = self.total();
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(["stratum", "count", "fraction"])?;
        for stratum in self.iter() {
            let count = stratum.member_ids.len();
            let fraction = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            writer.write_record([stratum.label.to_string(), count.to_string(), fraction.to_string()])?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Buckets annotated pairs into Easy / Medium / Hard.
pub fn partition_difficulty(annotations: &BTreeMap<PairId, Annotation>) -> Strata {
    let mut buckets: [BTreeSet<PairId>; 3] = Default::default();
    for (&id, annotation) in annotations {
        buckets[annotation.difficulty().index()].insert(id);
    }
    let [easy, medium, hard] = buckets;
    Strata::new(easy, medium, hard).expect("each id lands in exactly one bucket")
}

/// Strata for a list of pairs, plus the ids that carried no annotation.
pub fn partition_pairs(pairs: &[PreferencePair]) -> (Strata, Vec<PairId>) {
    let mut annotated = BTreeMap::new();
    let mut missing = Vec::new();
    for pair in pairs {
        match pair.annotation {
            Some(a) => {
                annotated.insert(pair.id, a);
            }
            None => missing.push(pair.id),
        }
    }
    if !missing.is_empty() {
        warn!("{} pairs have no annotation and were excluded from the strata", missing.len());
    }
    (partition_difficulty(&annotated), missing)
}

/// `(1 − t)·a + t·b`, exact at both endpoints.
fn lerp(a: f64, b: f64, k: usize, num_intervals: usize) -> f64 {
    let t = k as f64 / num_intervals as f64;
    let v = (1.0 - t) * a + t * b;
    v.clamp(a.min(b), a.max(b))
}

/// Linear evolution of the easy/medium/hard mixing ratio over `K` intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingSchedule {
    pub rho_start: [f64; 3],
    pub rho_end: [f64; 3],
    pub num_intervals: usize,
}

/// Easy-heavy start mix.
pub const DEFAULT_RHO_START: [f64; 3] = [0.90, 0.10, 0.00];
/// Balanced end mix with a hard tail.
pub const DEFAULT_RHO_END: [f64; 3] = [0.40, 0.40, 0.20];

impl MixingSchedule {
    pub fn new(rho_start: [f64; 3], rho_end: [f64; 3], num_intervals: usize) -> Result<Self> {
        let mut problems = Vec::new();
        for (name, rho) in [("rho_start", rho_start), ("rho_end", rho_end)] {
            if rho.iter().any(|r| !r.is_finite() || *r < 0.0) {
                problems.push(format!("{name} entries must be finite and nonnegative"));
            } else if (rho.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                problems.push(format!("{name} must sum to 1, got {}", rho.iter().sum::<f64>()));
            }
        }
        if num_intervals == 0 {
            problems.push("number of intervals must be at least 1".to_owned());
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(Self {
            rho_start,
            rho_end,
            num_intervals,
        })
    }

    /// The easy-to-hard schedule used by default.
    pub fn standard(num_intervals: usize) -> Result<Self> {
        Self::new(DEFAULT_RHO_START, DEFAULT_RHO_END, num_intervals)
    }

    pub fn mixing_ratio(&self, k: usize) -> Result<[f64; 3]> {
        if k > self.num_intervals {
            return Err(Error::domain(format!(
                "interval {k} outside 0..={}",
                self.num_intervals
            )));
        }
        Ok([0, 1, 2].map(|c| lerp(self.rho_start[c], self.rho_end[c], k, self.num_intervals)))
    }
}

/// Linearly interpolated keep ratio `γ(k)`.
pub fn keep_ratio(gamma_start: f64, gamma_end: f64, num_intervals: usize, k: usize) -> Result<f64> {
    for g in [gamma_start, gamma_end] {
        if !(g > 0.0 && g <= 1.0) {
            return Err(Error::config(format!("keep ratio endpoints must lie in (0, 1], got {g}")));
        }
    }
    if num_intervals == 0 || k > num_intervals {
        return Err(Error::domain(format!("interval {k} outside 0..={num_intervals}")));
    }
    Ok(lerp(gamma_start, gamma_end, k, num_intervals))
}

/// Integer counts proportional to `weights` that sum exactly to `total`
/// (Hamilton / largest-remainder apportionment; ties go to the lower index).
pub fn largest_remainder(weights: &[f64; 3], total: usize) -> [usize; 3] {
    let sum: f64 = weights.iter().sum();
    if total == 0 || sum <= 0.0 {
        return [0; 3];
    }
    let quotas = weights.map(|w| w / sum * total as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    if assigned <= total {
        for &c in order.iter().cycle().take(total - assigned) {
            counts[c] += 1;
        }
    } else {
        // rounding pushed the floors over; trim from the smallest remainders
        for &c in order.iter().rev().cycle().take(assigned - total) {
            counts[c] = counts[c].saturating_sub(1);
        }
    }
    counts
}

/// `K` disjoint pools drawn from the strata under the mixing schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolPlan {
    pub seed: u64,
    #[serde(rename = "K")]
    pub num_intervals: usize,
    #[serde(rename = "M")]
    pub pool_size: usize,
    pub schedule: MixingSchedule,
    pub pools: Vec<Vec<PairId>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl PoolPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn covered(&self) -> usize {
        self.pools.iter().map(Vec::len).sum()
    }
}

/// Builds the pool plan. Pool `k` (0-based) is composed with `ρ(k)`; pools
/// hold `M = ⌊|D|/K⌋` pairs and the last pool absorbs `|D| mod K`. Strata are
/// shuffled once with the seed and consumed without replacement, so the pools
/// partition the corpus. When a stratum cannot meet its quota the shortfall
/// moves to the other strata in proportion to their remaining members.
pub fn build_pool_plan(strata: &Strata, schedule: &MixingSchedule, rng_seed: u64) -> Result<PoolPlan> {
    let k_total = schedule.num_intervals;
    if k_total == 0 {
        return Err(Error::config("number of intervals must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let queues: Vec<Vec<PairId>> = strata
        .iter()
        .map(|s| {
            let mut ids: Vec<PairId> = s.member_ids.iter().copied().collect();
            ids.shuffle(&mut rng);
            ids
        })
        .collect();
    let mut cursors = [0usize; 3];

    let total = strata.total();
    let pool_size = total / k_total;
    let mut warnings = Vec::new();
    if pool_size == 0 && total > 0 {
        let msg = format!("{total} pairs cannot fill {k_total} pools; early pools are empty");
        warn!("{msg}");
        warnings.push(msg);
    }

    let mut pools = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let size = if k + 1 == k_total {
            total - pool_size * (k_total - 1)
        } else {
            pool_size
        };
        let rho = schedule.mixing_ratio(k)?;
        let capacity: [usize; 3] = [0, 1, 2].map(|c| queues[c].len() - cursors[c]);
        let mut take = largest_remainder(&rho, size);

        let mut deficit = 0;
        for c in 0..3 {
            if take[c] > capacity[c] {
                deficit += take[c] - capacity[c];
                take[c] = capacity[c];
            }
        }
        if deficit > 0 {
            debug!("pool {k}: redistributing {deficit} slots from exhausted strata");
        }
        while deficit > 0 {
            let spare: [usize; 3] = [0, 1, 2].map(|c| capacity[c] - take[c]);
            let spare_total: usize = spare.iter().sum();
            if spare_total == 0 {
                let msg = format!("pool {k}: dataset exhausted, pool shrinks by {deficit}");
                warn!("{msg}");
                warnings.push(msg);
                break;
            }
            let grant = largest_remainder(&spare.map(|s| s as f64), deficit.min(spare_total));
            for c in 0..3 {
                let add = grant[c].min(spare[c]);
                take[c] += add;
                deficit -= add;
            }
        }

        let mut pool = Vec::with_capacity(size);
        for c in 0..3 {
            pool.extend_from_slice(&queues[c][cursors[c]..cursors[c] + take[c]]);
            cursors[c] += take[c];
        }
        pools.push(pool);
    }
    Ok(PoolPlan {
        seed: rng_seed,
        num_intervals: k_total,
        pool_size,
        schedule: schedule.clone(),
        pools,
        warnings,
    })
}
