//! Pair-disjoint train/validation/test splits.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{Dataset, Membership, Pair};

pub const MIN_PAIRS: usize = 10;

/// RNG stream reserved for splitting; training uses other streams of the
/// same seed.
const SPLIT_STREAM: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.as_array();
        if r.iter().any(|v| !(*v > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be positive and sum to 1: {r:?}"
            )));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` items; ties in the fractional part
/// go to the earlier subset.
pub fn apportion(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_pairs: BTreeSet<Pair>,
    pub val_pairs: BTreeSet<Pair>,
    pub test_pairs: BTreeSet<Pair>,
    /// Pairs straddling subsets in participant-disjoint mode; always empty
    /// otherwise.
    #[serde(default)]
    pub dropped_pairs: BTreeSet<Pair>,
    pub ratios: SplitRatios,
    pub seed: u64,
    /// Draw that was accepted, counting from 0.
    pub attempt: u32,
}

/// Random partition of `all_pairs` by `ratios`; a pure function of the
/// sorted pair set, the ratios and the seed.
pub fn split_pairs(
    all_pairs: &BTreeSet<Pair>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitPlan> {
    split_attempt(all_pairs, ratios, seed, 0)
}

fn split_rng(seed: u64, attempt: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM + ((attempt as u64) << 8));
    rng
}

fn split_attempt(
    all_pairs: &BTreeSet<Pair>,
    ratios: SplitRatios,
    seed: u64,
    attempt: u32,
) -> Result<SplitPlan> {
    ratios.validate()?;
    if all_pairs.len() < MIN_PAIRS {
        return Err(Error::Data(format!(
            "splitting needs at least {MIN_PAIRS} pairs, found {}",
            all_pairs.len()
        )));
    }
    let mut pairs: Vec<Pair> = all_pairs.iter().cloned().collect();
    pairs.shuffle(&mut split_rng(seed, attempt));
    let n = apportion(pairs.len(), &ratios.as_array());
    let test = pairs.split_off(n[0] + n[1]);
    let val = pairs.split_off(n[0]);
    Ok(SplitPlan {
        train_pairs: pairs.into_iter().collect(),
        val_pairs: val.into_iter().collect(),
        test_pairs: test.into_iter().collect(),
        dropped_pairs: BTreeSet::new(),
        ratios,
        seed,
        attempt,
    })
}

/// Splits participants instead of pairs so that nobody appears in two
/// subsets. Participant quotas use the square roots of the pair ratios,
/// since a subset of `k` people holds about `k²/2` pairs.
fn split_participants(
    all_pairs: &BTreeSet<Pair>,
    ratios: SplitRatios,
    seed: u64,
    attempt: u32,
) -> Result<SplitPlan> {
    ratios.validate()?;
    let people: BTreeSet<&str> = all_pairs
        .iter()
        .flat_map(|p| [p.first(), p.second()])
        .collect();
    let mut people: Vec<&str> = people.into_iter().collect();
    people.shuffle(&mut split_rng(seed, attempt));
    let roots: Vec<f64> = ratios.as_array().iter().map(|r| r.sqrt()).collect();
    let total: f64 = roots.iter().sum();
    let shares: Vec<f64> = roots.iter().map(|r| r / total).collect();
    let n = apportion(people.len(), &shares);
    let mut subset_of: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, p) in people.iter().enumerate() {
        subset_of.insert(
            p,
            if i < n[0] {
                0
            } else if i < n[0] + n[1] {
                1
            } else {
                2
            },
        );
    }
    let mut sets: [BTreeSet<Pair>; 4] = Default::default();
    for p in all_pairs {
        let (a, b) = (subset_of[p.first()], subset_of[p.second()]);
        sets[if a == b { a } else { 3 }].insert(p.clone());
    }
    let [train_pairs, val_pairs, test_pairs, dropped_pairs] = sets;
    if train_pairs.is_empty() || val_pairs.is_empty() || test_pairs.is_empty() {
        return Err(Error::Data(format!(
            "participant-disjoint split of {} people leaves an empty subset",
            people.len()
        )));
    }
    Ok(SplitPlan {
        train_pairs,
        val_pairs,
        test_pairs,
        dropped_pairs,
        ratios,
        seed,
        attempt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitOptions {
    pub ratios: SplitRatios,
    /// Draws tried before giving up on a split with a positive-free subset.
    pub max_attempts: u32,
    pub participant_disjoint: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            ratios: SplitRatios::default(),
            max_attempts: 100,
            participant_disjoint: false,
        }
    }
}

/// Sample indices routed by their pair's subset.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SampleSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitPlan {
    pub fn route(&self, dataset: &Dataset) -> SampleSplit {
        let mut out = SampleSplit::default();
        for (i, s) in dataset.samples.iter().enumerate() {
            if self.train_pairs.contains(&s.pair) {
                out.train.push(i);
            } else if self.val_pairs.contains(&s.pair) {
                out.val.push(i);
            } else if self.test_pairs.contains(&s.pair) {
                out.test.push(i);
            }
        }
        out
    }
}

/// Draws splits until every subset holds a positive sample and the training
/// subset holds every class of the task.
pub fn split_dataset(
    dataset: &Dataset,
    opts: &SplitOptions,
    seed: u64,
) -> Result<(SplitPlan, SampleSplit)> {
    let pairs = dataset.pairs();
    let mut last_problem = String::new();
    for attempt in 0..opts.max_attempts.max(1) {
        let plan = if opts.participant_disjoint {
            match split_participants(&pairs, opts.ratios, seed, attempt) {
                Ok(p) => p,
                Err(e) => {
                    last_problem = e.to_string();
                    continue;
                }
            }
        } else {
            split_attempt(&pairs, opts.ratios, seed, attempt)?
        };
        let routed = plan.route(dataset);
        let positive = |idx: &[usize]| {
            idx.iter()
                .any(|&i| dataset.samples[i].membership == Membership::Positive)
        };
        let train_counts = dataset.label_counts_of(&routed.train);
        let problem =
            if !positive(&routed.train) || !positive(&routed.val) || !positive(&routed.test) {
                Some("a subset has no positive samples".to_string())
            } else if let Some(c) = train_counts.iter().position(|&c| c == 0) {
                Some(format!("training subset lacks class {c}"))
            } else {
                None
            };
        match problem {
            None => return Ok((plan, routed)),
            Some(p) => {
                warn!("seed {seed}, split attempt {attempt}: {p}; redrawing");
                last_problem = p;
            }
        }
    }
    Err(Error::Data(format!(
        "no acceptable split after {} attempts (seed {seed}): {last_problem}",
        opts.max_attempts
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(n_people: usize) -> BTreeSet<Pair> {
        let ids: Vec<String> = (0..n_people).map(|i| format!("P{i:02}")).collect();
        let mut out = BTreeSet::new();
        for i in 0..n_people {
            for j in i + 1..n_people {
                out.insert(Pair::new(ids[i].as_str(), ids[j].as_str()));
            }
        }
        out
    }

    #[test]
    fn apportionment() {
        assert_eq!(apportion(10, &[0.8, 0.1, 0.1]), vec![8, 1, 1]);
        assert_eq!(apportion(66, &[0.8, 0.1, 0.1]), vec![53, 7, 6]);
        assert_eq!(apportion(11, &[0.8, 0.1, 0.1]), vec![9, 1, 1]);
        for n in 10..200 {
            let c = apportion(n, &[0.8, 0.1, 0.1]);
            assert_eq!(c.iter().sum::<usize>(), n);
            assert!(c.iter().all(|&v| v > 0));
        }
    }

    #[test]
    fn ten_pairs() {
        let all: BTreeSet<Pair> = pairs(5);
        let p = split_pairs(&all, SplitRatios::default(), 3).unwrap();
        assert_eq!(
            (p.train_pairs.len(), p.val_pairs.len(), p.test_pairs.len()),
            (8, 1, 1)
        );
        assert_eq!(split_pairs(&all, SplitRatios::default(), 3).unwrap(), p);
        let few: BTreeSet<Pair> = pairs(4);
        assert!(split_pairs(&few, SplitRatios::default(), 3).is_err());
    }

    #[test]
    fn disjoint_and_covering_across_seeds() {
        let all = pairs(12);
        for seed in 0..100 {
            let p = split_pairs(&all, SplitRatios::default(), seed).unwrap();
            assert!(p.train_pairs.intersection(&p.val_pairs).next().is_none());
            assert!(p.train_pairs.intersection(&p.test_pairs).next().is_none());
            assert!(p.val_pairs.intersection(&p.test_pairs).next().is_none());
            let union: BTreeSet<Pair> = p
                .train_pairs
                .iter()
                .chain(&p.val_pairs)
                .chain(&p.test_pairs)
                .cloned()
                .collect();
            assert_eq!(union, all);
        }
        let a = split_pairs(&all, SplitRatios::default(), 1).unwrap();
        let b = split_pairs(&all, SplitRatios::default(), 2).unwrap();
        assert_ne!(a.test_pairs, b.test_pairs);
    }

    #[test]
    fn participant_disjoint_mode() {
        let all = pairs(12);
        let plan = split_participants(&all, SplitRatios::default(), 5, 0).unwrap();
        let people = |s: &BTreeSet<Pair>| -> BTreeSet<String> {
            s.iter().flat_map(|p| [p.0.clone(), p.1.clone()]).collect()
        };
        let (tr, va, te) = (
            people(&plan.train_pairs),
            people(&plan.val_pairs),
            people(&plan.test_pairs),
        );
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        let n = plan.train_pairs.len()
            + plan.val_pairs.len()
            + plan.test_pairs.len()
            + plan.dropped_pairs.len();
        assert_eq!(n, 66);
    }

    #[test]
    fn bad_ratios() {
        let r = SplitRatios {
            train: 0.8,
            val: 0.3,
            test: 0.1,
        };
        assert!(split_pairs(&pairs(6), r, 0).is_err());
    }
}
