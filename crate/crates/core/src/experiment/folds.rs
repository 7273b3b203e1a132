use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{PreparedDataset, SegmentRef};

/// One training run of one leave-one-subject-out fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub fold: usize,
    /// Index of the test subject in the prepared dataset.
    pub test_subject: usize,
    pub test_subject_id: String,
    /// 1-based.
    pub run: usize,
    pub seed: u64,
    pub train: Vec<SegmentRef>,
    pub val: Vec<SegmentRef>,
    pub test: Vec<SegmentRef>,
}

impl FoldSpec {
    pub fn run_id(&self) -> String {
        format!("{}-run{}", self.test_subject_id, self.run)
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of run `run` in fold `fold`. Hash-combined so distinct (fold, run) pairs never
/// share a seed the way a plain XOR would (`0 ^ 3 == 1 ^ 2`).
pub fn run_seed(base_seed: u64, fold: usize, run: usize) -> u64 {
    mix(mix(mix(base_seed) ^ fold as u64) ^ run as u64)
}

fn segments_of(data: &PreparedDataset, subject: usize) -> impl Iterator<Item = SegmentRef> + '_ {
    (0..data.subjects[subject].segments.len()).map(move |segment| SegmentRef { subject, segment })
}

/// Subjects with at least one segment; the rest are reported and skipped.
pub fn eligible_subjects(data: &PreparedDataset) -> Vec<usize> {
    data.subjects
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            if s.segments.is_empty() {
                log::warn!("subject {} has no complete segment and is excluded", s.subject_id);
                None
            } else {
                Some(i)
            }
        })
        .collect()
}

/// Leave-one-subject-out folds with `runs` random train/validation splits each.
pub fn make_folds(data: &PreparedDataset, runs: usize, val_fraction: f64, base_seed: u64) -> Result<Vec<FoldSpec>> {
    let subjects = eligible_subjects(data);
    if subjects.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "leave-one-subject-out needs at least 3 subjects with segments, found {}",
            subjects.len()
        )));
    }
    let mut out = Vec::with_capacity(subjects.len() * runs);
    for (fold, &test) in subjects.iter().enumerate() {
        let pool: Vec<SegmentRef> = subjects
            .iter()
            .filter(|&&s| s != test)
            .flat_map(|&s| segments_of(data, s))
            .collect();
        let test_refs: Vec<SegmentRef> = segments_of(data, test).collect();
        for run in 1..=runs {
            let seed = run_seed(base_seed, fold, run);
            let (train, val) = split(&pool, val_fraction, seed);
            out.push(FoldSpec {
                fold,
                test_subject: test,
                test_subject_id: data.subjects[test].subject_id.clone(),
                run,
                seed,
                train,
                val,
                test: test_refs.clone(),
            });
        }
    }
    Ok(out)
}

/// Random segment-level split; both halves are returned sorted.
pub fn split(pool: &[SegmentRef], val_fraction: f64, seed: u64) -> (Vec<SegmentRef>, Vec<SegmentRef>) {
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((pool.len() as f64 * val_fraction).round() as usize).min(pool.len().saturating_sub(1));
    let mut val = shuffled.split_off(pool.len() - n_val);
    let mut train = shuffled;
    train.sort();
    val.sort();
    (train, val)
}
