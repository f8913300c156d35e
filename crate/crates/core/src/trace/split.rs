use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TraceError;

pub const TRAIN_FRACTION: f64 = 0.7;
pub const VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles `trace_ids` with `seed` and cuts them 70/10/20. Train and
/// validation sizes are floored; the remainder goes to test.
pub fn split_dataset(trace_ids: &[String], seed: u64) -> Result<DatasetSplit, TraceError> {
    if trace_ids.len() < 10 {
        return Err(TraceError::Validation(format!(
            "need at least 10 traces to split, got {}",
            trace_ids.len()
        )));
    }
    let mut ids = trace_ids.to_vec();
    // Shuffle from a canonical order so the split does not depend on the
    // order ids were listed in.
    ids.sort();
    ids.dedup();
    if ids.len() != trace_ids.len() {
        return Err(TraceError::Validation("duplicate trace ids".into()));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let total = ids.len() as f64;
    let n_train = (TRAIN_FRACTION * total).floor() as usize;
    let n_val = (VALIDATION_FRACTION * total).floor() as usize;
    let test = ids.split_off(n_train + n_val);
    let validation = ids.split_off(n_train);
    Ok(DatasetSplit {
        train: ids,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("trace-{i:03}")).collect()
    }

    #[test]
    fn sizes_follow_floor_rule() {
        let s = split_dataset(&ids(10), 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (7, 1, 2));
        let s = split_dataset(&ids(504), 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (352, 50, 102));
    }

    #[test]
    fn deterministic_disjoint_exhaustive() {
        let all = ids(57);
        let a = split_dataset(&all, 11).unwrap();
        assert_eq!(a, split_dataset(&all, 11).unwrap());
        let mut seen = HashSet::new();
        for id in a.train.iter().chain(&a.validation).chain(&a.test) {
            assert!(seen.insert(id.clone()));
        }
        assert_eq!(seen.len(), all.len());
    }

    #[test]
    fn too_few_traces() {
        assert!(split_dataset(&ids(9), 0).is_err());
    }
}
