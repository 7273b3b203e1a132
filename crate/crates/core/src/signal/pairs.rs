use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Identifies a segment by subject position and segment position within a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SegmentRef {
    pub subject: usize,
    pub segment: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorPair {
    pub a: SegmentRef,
    pub b: SegmentRef,
    pub same_subject: bool,
}

/// Draws one partner for every segment in `groups` (one group per subject).
///
/// With probability 0.5 the partner comes from the same subject (another segment when
/// one exists, otherwise the segment itself); otherwise it is drawn uniformly from the
/// other subjects' segments.
pub fn sample_discriminator_pairs<R: Rng>(groups: &[Vec<SegmentRef>], rng: &mut R) -> Vec<DiscriminatorPair> {
    let non_empty = groups.iter().filter(|g| !g.is_empty()).count();
    if non_empty < 2 {
        log::warn!("discriminator pairs from fewer than two subjects: every pair is same-subject");
    }
    let mut pairs = Vec::with_capacity(groups.iter().map(Vec::len).sum());
    for (gi, group) in groups.iter().enumerate() {
        for (si, &a) in group.iter().enumerate() {
            let same = non_empty < 2 || rng.gen_bool(0.5);
            let b = if same {
                if group.len() == 1 {
                    a
                } else {
                    let mut j = rng.gen_range(0..group.len() - 1);
                    if j >= si {
                        j += 1;
                    }
                    group[j]
                }
            } else {
                let others: usize = groups.iter().enumerate().filter(|(i, _)| *i != gi).map(|(_, g)| g.len()).sum();
                let mut k = rng.gen_range(0..others);
                let mut pick = a;
                for (i, g) in groups.iter().enumerate() {
                    if i == gi {
                        continue;
                    }
                    if k < g.len() {
                        pick = g[k];
                        break;
                    }
                    k -= g.len();
                }
                pick
            };
            pairs.push(DiscriminatorPair {
                a,
                b,
                same_subject: same,
            });
        }
    }
    pairs
}

/// Shuffles pairs in place; kept here so callers share one RNG discipline.
pub fn shuffle_pairs<R: Rng>(pairs: &mut [DiscriminatorPair], rng: &mut R) {
    pairs.shuffle(rng);
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn groups(sizes: &[usize]) -> Vec<Vec<SegmentRef>> {
        sizes
            .iter()
            .enumerate()
            .map(|(s, &n)| (0..n).map(|k| SegmentRef { subject: s, segment: k }).collect())
            .collect()
    }

    #[test]
    fn same_subject_fraction_is_balanced() {
        let g = groups(&[50, 50]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut same = 0usize;
        let mut total = 0usize;
        while total < 10_000 {
            for p in sample_discriminator_pairs(&g, &mut rng) {
                same += p.same_subject as usize;
                total += 1;
                assert_eq!(p.same_subject, p.a.subject == p.b.subject);
                if p.same_subject {
                    assert_ne!(p.a, p.b);
                }
            }
        }
        let frac = same as f64 / total as f64;
        assert!((frac - 0.5).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn single_segment_subject_pairs_with_itself() {
        let g = groups(&[1, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut saw_self = false;
        for _ in 0..50 {
            for p in sample_discriminator_pairs(&g, &mut rng) {
                if p.a.subject == 0 && p.same_subject {
                    assert_eq!(p.a, p.b);
                    saw_self = true;
                }
            }
        }
        assert!(saw_self);
    }

    #[test]
    fn single_subject_is_all_same() {
        let g = groups(&[4]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_discriminator_pairs(&g, &mut rng).iter().all(|p| p.same_subject));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let g = groups(&[3, 5, 2]);
        let a = sample_discriminator_pairs(&g, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_discriminator_pairs(&g, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
