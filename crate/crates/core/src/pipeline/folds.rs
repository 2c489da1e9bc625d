//! Rodent-grouped fold splits and learning-set assembly.

use std::collections::BTreeSet;

use ndarray::Array3;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::evalkit::{stack_inputs, Variant};
use crate::rng;
use crate::seqnet::SequenceSet;
use crate::tac::ScanRecord;

/// Test and validation shares of the cohort: 11 and 8 of 52 rodents.
const TEST_SHARE: (usize, usize) = (11, 52);
const VAL_SHARE: (usize, usize) = (8, 52);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    /// 1-based.
    pub fold_id: u32,
    pub train_rodents: Vec<u32>,
    pub val_rodents: Vec<u32>,
    pub test_rodents: Vec<u32>,
}

fn share(n: usize, (num, den): (usize, usize)) -> usize {
    // round half up
    ((2 * n * num + den) / (2 * den)).max(1)
}

/// Seeded shuffle of the ids, then fold `f` (0-based) takes a test window
/// starting at `f * n_test` (wrapping), the validation window right after it,
/// and trains on the rest.
///
/// For 52 rodents the windows hold 11 and 8 ids. Other cohort sizes scale
/// both shares proportionally (rounded half up, at least one each) and need
/// at least one rodent left for training.
pub fn split_folds(rodent_ids: &[u32], k: usize, seed: u64) -> Result<Vec<FoldSplit>, PipelineError> {
    let n = rodent_ids.len();
    if k == 0 {
        return Err(PipelineError::InvalidConfig("k must be >= 1".into()));
    }
    if n < k {
        return Err(PipelineError::TooFewRodents { n, k });
    }
    if rodent_ids.iter().collect::<BTreeSet<_>>().len() != n {
        return Err(PipelineError::InvalidConfig("rodent ids are not distinct".into()));
    }
    let n_test = share(n, TEST_SHARE);
    let n_val = share(n, VAL_SHARE);
    if n_test + n_val >= n {
        return Err(PipelineError::TooFewRodents { n, k });
    }
    let mut ids = rodent_ids.to_vec();
    ids.shuffle(&mut rng::stream(seed, &[0xF01D]));
    let folds = (0..k)
        .map(|f| {
            let start = f * n_test;
            let take = |from: usize, len: usize| -> Vec<u32> {
                let mut v: Vec<u32> = (from..from + len).map(|i| ids[i % n]).collect();
                v.sort_unstable();
                v
            };
            FoldSplit {
                fold_id: f as u32 + 1,
                test_rodents: take(start, n_test),
                val_rodents: take(start + n_test, n_val),
                train_rodents: take(start + n_test + n_val, n - n_test - n_val),
            }
        })
        .collect();
    Ok(folds)
}

/// Scan indices falling into each partition: `(train, val, test)`.
/// Scans of rodents outside the split are ignored.
pub fn assign_scans(split: &FoldSplit, scans: &[ScanRecord]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for (i, s) in scans.iter().enumerate() {
        let id = &s.rodent_id;
        if split.train_rodents.binary_search(id).is_ok() {
            tr.push(i);
        } else if split.val_rodents.binary_search(id).is_ok() {
            va.push(i);
        } else if split.test_rodents.binary_search(id).is_ok() {
            te.push(i);
        }
    }
    (tr, va, te)
}

/// Stacked network inputs `(N, T, 2)`, targets `(N, T, 1)`, and the
/// `(rodent_id, age_months)` of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningSet {
    pub variant: Variant,
    pub inputs: Array3<f64>,
    pub targets: Array3<f64>,
    pub index: Vec<(u32, u32)>,
}

impl LearningSet {
    pub fn to_sequence_set(&self) -> SequenceSet {
        SequenceSet::new(self.inputs.clone(), self.targets.clone()).expect("shapes checked on build")
    }
}

/// Every scan must carry the same sample times as the first one.
pub fn build_learning_set(scans: &[ScanRecord], variant: Variant) -> Result<LearningSet, PipelineError> {
    let first = scans
        .first()
        .ok_or_else(|| PipelineError::InvalidConfig("no scans to stack".into()))?;
    let times = first.idif.times();
    for s in scans {
        s.check_shared_grid()?;
        if s.idif.times() != times {
            return Err(PipelineError::GridMismatch(format!(
                "rodent {} age {} has {} samples, expected {}",
                s.rodent_id,
                s.age_months,
                s.idif.len(),
                times.len()
            )));
        }
    }
    let inputs = stack_inputs(scans)?;
    let mut targets = Array3::zeros((scans.len(), times.len(), 1));
    for (i, s) in scans.iter().enumerate() {
        for (k, &v) in s.mcif.values().iter().enumerate() {
            targets[[i, k, 0]] = v;
        }
    }
    Ok(LearningSet {
        variant,
        inputs,
        targets,
        index: scans.iter().map(|s| (s.rodent_id, s.age_months)).collect(),
    })
}
