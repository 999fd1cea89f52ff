//! Synthetic implicit-feedback corpora with latent topic structure, shaped
//! after a small e-commerce review dataset. Used where the real file is not
//! available.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::InteractionTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub topics: usize,
    /// Mean interactions per user, including the `min_per_user` floor.
    pub mean_per_user: f64,
    pub min_per_user: usize,
    /// Probability that a draw comes from one of the user's own topics.
    pub topic_focus: f64,
    /// Probability that a user has a second topic.
    pub second_topic: f64,
    /// Zipf exponent of item popularity.
    pub zipf: f64,
}

impl SyntheticSpec {
    /// 22,364 users, 12,102 items and ~198.5k interactions at full scale
    /// (8.88 per user, at least 5).
    pub fn beauty_like() -> Self {
        SyntheticSpec {
            users: 22_364,
            items: 12_102,
            topics: 60,
            mean_per_user: 198_502.0 / 22_364.0,
            min_per_user: 5,
            topic_focus: 0.8,
            second_topic: 0.3,
            zipf: 0.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items == 0 || self.topics == 0 || self.topics > self.items {
            return Err(Error::Config(format!(
                "need users, items > 0 and 1 <= topics <= items, got {}/{}/{}",
                self.users, self.items, self.topics
            )));
        }
        if self.mean_per_user.is_nan() || self.mean_per_user < self.min_per_user as f64 || self.min_per_user == 0 {
            return Err(Error::Config("mean_per_user must be >= min_per_user >= 1".into()));
        }
        if self.min_per_user > self.items {
            return Err(Error::Config("min_per_user exceeds the catalog".into()));
        }
        for (name, p) in [("topic_focus", self.topic_focus), ("second_topic", self.second_topic)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.zipf.is_finite() && self.zipf >= 0.0) {
            return Err(Error::Config(format!("zipf must be >= 0, got {}", self.zipf)));
        }
        Ok(())
    }

    /// Deterministic in `seed`. Users are numbered `0..users`, items
    /// `0..items`; an item never seen by any user still counts toward
    /// `item_count`.
    pub fn generate(&self, seed: u64) -> Result<InteractionTable> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut ranks: Vec<usize> = (0..self.items).collect();
        ranks.shuffle(&mut rng);
        let weight: Vec<f64> = ranks.iter().map(|&r| (r as f64 + 1.0).powf(-self.zipf)).collect();
        let global = WeightedIndex::new(&weight).expect("positive weights");

        let mut members: Vec<Vec<u32>> = vec![Vec::new(); self.topics];
        for i in 0..self.items {
            // the first `topics` items seed one topic each so none is empty
            let t = if i < self.topics {
                i
            } else {
                rng.gen_range(0..self.topics)
            };
            members[t].push(i as u32);
        }
        let per_topic: Vec<WeightedIndex<f64>> = members
            .iter()
            .map(|m| WeightedIndex::new(m.iter().map(|&i| weight[i as usize])).expect("non-empty topic"))
            .collect();

        let extra_mean = self.mean_per_user - self.min_per_user as f64;
        let stop = 1.0 / (1.0 + extra_mean);
        let cap = self.items.min(self.min_per_user + 200);
        let mut pairs = Vec::new();
        let mut seen = Vec::new();
        for u in 0..self.users as u32 {
            let primary = rng.gen_range(0..self.topics);
            let secondary = (rng.gen::<f64>() < self.second_topic).then(|| rng.gen_range(0..self.topics));
            let mut len = self.min_per_user;
            while len < cap && rng.gen::<f64>() >= stop {
                len += 1;
            }
            seen.clear();
            let mut attempts = 0;
            while seen.len() < len && attempts < 50 * len {
                attempts += 1;
                let item = if rng.gen::<f64>() < self.topic_focus {
                    let t = match secondary {
                        Some(s) if rng.gen::<f64>() < 0.5 => s,
                        _ => primary,
                    };
                    members[t][per_topic[t].sample(&mut rng)]
                } else {
                    global.sample(&mut rng) as u32
                };
                if !seen.contains(&item) {
                    seen.push(item);
                }
            }
            pairs.extend(seen.iter().map(|&i| (u, i)));
        }
        InteractionTable::from_pairs(self.users, self.items, pairs)
    }
}

/// A `fraction` of the users of a Beauty-shaped synthetic corpus, with items
/// re-indexed to those that remain.
pub fn beauty_subsample(fraction: f64, seed: u64) -> Result<InteractionTable> {
    SyntheticSpec::beauty_like()
        .generate(seed)?
        .subsample_users(fraction, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            users: 300,
            items: 200,
            topics: 10,
            ..SyntheticSpec::beauty_like()
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = small().generate(4).unwrap();
        let b = small().generate(4).unwrap();
        let c = small().generate(5).unwrap();
        assert_eq!(a.pairs, b.pairs);
        assert_ne!(a.pairs, c.pairs);
    }

    #[test]
    fn shape_matches_spec() {
        let spec = small();
        let t = spec.generate(1).unwrap();
        let per_user = t.items_by_user(crate::corpus::Split::Train);
        assert!(per_user.iter().all(|v| v.len() >= spec.min_per_user));
        let mean = t.len() as f64 / spec.users as f64;
        assert!((mean - spec.mean_per_user).abs() < 0.8, "mean {mean}");
    }

    #[test]
    fn popularity_is_skewed() {
        let t = small().generate(2).unwrap();
        let mut counts = t.item_popularity();
        counts.sort_unstable_by(|a, b| b.cmp(a));
        let top: usize = counts[..20].iter().sum();
        // 10% of items hold well over 10% of interactions
        assert!(top as f64 > 0.2 * t.len() as f64);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = small();
        s.topics = 0;
        assert!(s.generate(0).is_err());
        let mut s = small();
        s.mean_per_user = 2.0;
        assert!(s.generate(0).is_err());
    }
}
