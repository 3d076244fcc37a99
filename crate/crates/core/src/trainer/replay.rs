use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub task_id: usize,
    pub actions: Vec<usize>,
    pub behavior_log_probs: Vec<f64>,
    pub reward: f64,
    pub iteration: u64,
}

/// Bounded FIFO of evaluated samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBank {
    records: VecDeque<RewardRecord>,
    capacity: usize,
}

impl ReplayBank {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { records: VecDeque::with_capacity(capacity.min(4096)), capacity }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = &RewardRecord> {
        self.records.iter()
    }

    /// Appends, evicting the oldest record when full.
    pub fn push(&mut self, record: RewardRecord) -> Result<(), TrainerError> {
        if !record.reward.is_finite() {
            return Err(TrainerError::InvalidRecord("non-finite reward".into()));
        }
        if record.behavior_log_probs.iter().any(|&l| !(l <= 0.0)) {
            return Err(TrainerError::InvalidRecord("log-probabilities must be <= 0".into()));
        }
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
        Ok(())
    }

    /// Uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&RewardRecord>, TrainerError> {
        if self.records.is_empty() {
            return Err(TrainerError::EmptyBank);
        }
        Ok((0..batch_size).map(|_| &self.records[rng.random_range(0..self.records.len())]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(i: u64) -> RewardRecord {
        RewardRecord { task_id: 0, actions: vec![0], behavior_log_probs: vec![-0.5], reward: i as f64, iteration: i }
    }

    #[test]
    fn fifo_eviction() {
        let mut bank = ReplayBank::new(2);
        for i in 0..3 {
            bank.push(rec(i)).unwrap();
        }
        let held: Vec<u64> = bank.iter().map(|r| r.iteration).collect();
        assert_eq!(held, vec![1, 2]);
    }

    #[test]
    fn singleton_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut bank = ReplayBank::new(5);
        assert_eq!(bank.sample(3, &mut rng), Err(TrainerError::EmptyBank));
        bank.push(rec(7)).unwrap();
        assert!(bank.sample(4, &mut rng).unwrap().iter().all(|r| r.iteration == 7));
    }

    #[test]
    fn sampling_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bank = ReplayBank::new(10);
        for i in 0..10 {
            bank.push(rec(i)).unwrap();
        }
        let mut counts = [0usize; 10];
        for r in bank.sample(10_000, &mut rng).unwrap() {
            counts[r.iteration as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((0.07..=0.13).contains(&f), "{counts:?}");
        }
    }

    #[test]
    fn rejects_invalid_records() {
        let mut bank = ReplayBank::new(2);
        let mut r = rec(0);
        r.reward = f64::NAN;
        assert!(bank.push(r).is_err());
        let mut r = rec(0);
        r.behavior_log_probs = vec![0.1];
        assert!(bank.push(r).is_err());
    }
}
