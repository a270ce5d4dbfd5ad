use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Sample, Split};
use crate::error::{Error, Result};
use crate::model::{forward_index, ModelConfig, ModelParams};
use crate::numerics::Tensor;
use crate::objective::{total_loss, LossConfig};

/// Similarity used to rank candidate embeddings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// Mean over tokens of cos(z_i, e_i).
    #[default]
    Cosine,
    /// Negated mean absolute difference.
    NegL1,
}

impl FromStr for Scoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Scoring::Cosine),
            "neg_l1" => Ok(Scoring::NegL1),
            other => Err(Error::Usage(format!(
                "unknown scoring `{other}` (expected cosine|neg_l1)"
            ))),
        }
    }
}

impl Scoring {
    /// Similarity of a prediction and a target, both N×d.
    pub fn score(self, z: &Tensor<f32>, e: &Tensor<f32>) -> f64 {
        match self {
            Scoring::Cosine => token_cosine(z, e),
            Scoring::NegL1 => {
                -z.data()
                    .iter()
                    .zip(e.data())
                    .map(|(a, b)| (a - b).abs() as f64)
                    .sum::<f64>()
                    / z.len() as f64
            }
        }
    }
}

/// Cosine of two vectors; 0 when either is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// Mean over rows of the row-wise cosine.
pub fn token_cosine(z: &Tensor<f32>, e: &Tensor<f32>) -> f64 {
    let rows = z.rows();
    (0..rows).map(|i| cosine(z.row(i), e.row(i))).sum::<f64>() / rows as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: Split,
    pub n_samples: usize,
    pub total_loss: f64,
    pub l1_loss: f64,
    pub contrastive_loss: f64,
    pub cosine_mean: f64,
    pub top1_retrieval: f64,
    pub two_way_id: f64,
}

fn check_pairs(preds: &[Tensor<f32>], targets: &[Tensor<f32>]) -> Result<()> {
    if preds.len() != targets.len() {
        return Err(Error::shape(
            "retrieval",
            format!("{} predictions for {} targets", preds.len(), targets.len()),
        ));
    }
    if preds.len() < 2 {
        return Err(Error::Data("retrieval needs at least two pairs".into()));
    }
    Ok(())
}

fn score_matrix(preds: &[&Tensor<f32>], candidates: &[&Tensor<f32>], scoring: Scoring) -> Vec<Vec<f64>> {
    preds
        .iter()
        .map(|z| candidates.iter().map(|e| scoring.score(z, e)).collect())
        .collect()
}

/// Each row of `scores` holds one prediction against every candidate; `truth`
/// is the index of its own candidate. Returns (top-1 hits, 2-way wins, 2-way pairs).
fn rank_counts(scores: &[Vec<f64>], truth: &[usize]) -> (usize, usize, usize) {
    let (mut hits, mut wins, mut pairs) = (0, 0, 0);
    for (row, &t) in scores.iter().zip(truth) {
        let mut best = 0;
        for (j, &s) in row.iter().enumerate() {
            if s > row[best] {
                best = j;
            }
        }
        hits += (best == t) as usize;
        for (j, &s) in row.iter().enumerate() {
            if j != t {
                wins += (row[t] > s) as usize;
                pairs += 1;
            }
        }
    }
    (hits, wins, pairs)
}

/// Fraction of predictions whose own target outranks every other target.
/// Ties go to the lowest index.
pub fn retrieval_top1(preds: &[Tensor<f32>], targets: &[Tensor<f32>], scoring: Scoring) -> Result<f64> {
    check_pairs(preds, targets)?;
    let p: Vec<_> = preds.iter().collect();
    let t: Vec<_> = targets.iter().collect();
    let truth: Vec<usize> = (0..preds.len()).collect();
    let (hits, _, _) = rank_counts(&score_matrix(&p, &t, scoring), &truth);
    Ok(hits as f64 / preds.len() as f64)
}

/// Fraction of ordered pairs (i, j≠i) with score(Z_i, E_i) > score(Z_i, E_j).
pub fn two_way_identification(preds: &[Tensor<f32>], targets: &[Tensor<f32>], scoring: Scoring) -> Result<f64> {
    check_pairs(preds, targets)?;
    let p: Vec<_> = preds.iter().collect();
    let t: Vec<_> = targets.iter().collect();
    let truth: Vec<usize> = (0..preds.len()).collect();
    let (_, wins, pairs) = rank_counts(&score_matrix(&p, &t, scoring), &truth);
    Ok(wins as f64 / pairs as f64)
}

/// Encodes every sample and scores it.
///
/// Candidates are ranked within each subject: a trial competes against the
/// distinct stimuli (sorted by id) that subject saw in `samples`, so repeated
/// presentations never count as foils for each other.
pub fn evaluate_samples(
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    loss: &LossConfig,
    samples: &[Sample<'_>],
    targets: &BTreeMap<String, Tensor<f32>>,
    scoring: Scoring,
    split: Split,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Data("nothing to evaluate: the selection has no trials".into()));
    }
    let mut zs = Vec::with_capacity(samples.len());
    let (mut total, mut l1, mut con, mut cos) = (0.0, 0.0, 0.0, 0.0);
    for s in samples {
        let z = forward_index(s.voxels, s.subject, params, cfg)?;
        let lv = total_loss(&z, s.target, loss)?;
        total += lv.total;
        l1 += lv.l1;
        con += lv.contrastive;
        cos += token_cosine(&z, s.target);
        zs.push(z);
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(s.subject).or_default().push(i);
    }
    let (mut hits, mut wins, mut pairs) = (0, 0, 0);
    for members in groups.values() {
        let mut stimuli: Vec<&str> = members.iter().map(|&i| samples[i].stimulus).collect();
        stimuli.sort_unstable();
        stimuli.dedup();
        let cands: Vec<&Tensor<f32>> = stimuli.iter().map(|s| &targets[*s]).collect();
        let preds: Vec<&Tensor<f32>> = members.iter().map(|&i| &zs[i]).collect();
        let truth: Vec<usize> = members
            .iter()
            .map(|&i| {
                stimuli
                    .binary_search(&samples[i].stimulus)
                    .expect("own stimulus is a candidate")
            })
            .collect();
        let (h, w, p) = rank_counts(&score_matrix(&preds, &cands, scoring), &truth);
        hits += h;
        wins += w;
        pairs += p;
    }

    let n = samples.len() as f64;
    Ok(MetricsReport {
        split,
        n_samples: samples.len(),
        total_loss: total / n,
        l1_loss: l1 / n,
        contrastive_loss: con / n,
        cosine_mean: cos / n,
        top1_retrieval: hits as f64 / n,
        two_way_id: if pairs == 0 {
            f64::NAN
        } else {
            wins as f64 / pairs as f64
        },
    })
}

pub fn evaluate(
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    loss: &LossConfig,
    corpus: &Corpus,
    indices: &[usize],
    scoring: Scoring,
    split: Split,
) -> Result<MetricsReport> {
    let samples = corpus.samples(cfg, indices)?;
    evaluate_samples(params, cfg, loss, &samples, &corpus.embeddings, scoring, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn rand_mats(rng: &mut ChaCha8Rng, n: usize) -> Vec<Tensor<f32>> {
        (0..n)
            .map(|_| {
                let d: Vec<f32> = (0..12).map(|_| StandardNormal.sample(rng)).collect();
                Tensor::matrix(3, 4, d).unwrap()
            })
            .collect()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = rand_mats(&mut rng, 10);
        for s in [Scoring::Cosine, Scoring::NegL1] {
            assert_eq!(retrieval_top1(&t, &t, s).unwrap(), 1.0);
            assert_eq!(two_way_identification(&t, &t, s).unwrap(), 1.0);
        }
    }

    #[test]
    fn reversed_pairing_scores_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = rand_mats(&mut rng, 7);
        let rev: Vec<_> = t.iter().rev().cloned().collect();
        // The middle element pairs with itself, so use an even count.
        let t6 = &t[..6];
        let rev6: Vec<_> = t6.iter().rev().cloned().collect();
        assert_eq!(retrieval_top1(&rev6, t6, Scoring::Cosine).unwrap(), 0.0);
        assert!((retrieval_top1(&rev, &t, Scoring::Cosine).unwrap() - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn two_sample_hand_case() {
        // Scores: z0·(e0, e1) = (1, 0), z1·(e0, e1) = (1, 0).
        let e0 = Tensor::matrix(1, 2, vec![1.0f32, 0.0]).unwrap();
        let e1 = Tensor::matrix(1, 2, vec![0.0f32, 1.0]).unwrap();
        let preds = vec![e0.clone(), e0.clone()];
        let targets = vec![e0, e1];
        // Pair (0,1): 1 > 0 wins. Pair (1,0): 0 > 1 fails.
        assert_eq!(two_way_identification(&preds, &targets, Scoring::Cosine).unwrap(), 0.5);
        assert_eq!(retrieval_top1(&preds, &targets, Scoring::Cosine).unwrap(), 0.5);
    }

    #[test]
    fn ties_break_towards_the_lowest_index() {
        let z = Tensor::zeros(&[1, 2]);
        let t = vec![
            Tensor::matrix(1, 2, vec![1.0f32, 0.0]).unwrap(),
            Tensor::matrix(1, 2, vec![0.0f32, 1.0]).unwrap(),
        ];
        let preds = vec![z.clone(), z];
        assert_eq!(retrieval_top1(&preds, &t, Scoring::Cosine).unwrap(), 0.5);
        assert_eq!(two_way_identification(&preds, &t, Scoring::Cosine).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let t = vec![Tensor::<f32>::zeros(&[1, 2]); 3];
        assert!(retrieval_top1(&t[..2], &t, Scoring::Cosine).is_err());
        assert!(two_way_identification(&t[..1], &t[..1], Scoring::Cosine).is_err());
    }

    #[test]
    fn random_predictions_sit_at_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (reps, n) = (200, 50);
        let (mut top1, mut two) = (0.0, 0.0);
        for _ in 0..reps {
            let p = rand_mats(&mut rng, n);
            let t = rand_mats(&mut rng, n);
            top1 += retrieval_top1(&p, &t, Scoring::Cosine).unwrap();
            two += two_way_identification(&p, &t, Scoring::Cosine).unwrap();
        }
        let trials = (reps * n) as f64;
        let p = 1.0 / n as f64;
        let sd = (p * (1.0 - p) / trials).sqrt();
        assert!((top1 / reps as f64 - p).abs() < 3.0 * sd, "{}", top1 / reps as f64);
        assert!((two / reps as f64 - 0.5).abs() < 0.01, "{}", two / reps as f64);
    }

    #[test]
    fn cosine_is_scale_invariant_per_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = rand_mats(&mut rng, 1).pop().unwrap();
        let e = rand_mats(&mut rng, 1).pop().unwrap();
        let mut scaled = z.clone();
        for (i, x) in scaled.data_mut().iter_mut().enumerate() {
            *x *= [0.5f32, 3.0, 40.0][i / 4];
        }
        assert!((token_cosine(&z, &e) - token_cosine(&scaled, &e)).abs() < 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mats(n: usize) -> impl Strategy<Value = Vec<Tensor<f32>>> {
            proptest::collection::vec(proptest::collection::vec(-3.0f32..3.0, 6), n)
                .prop_map(|v| v.into_iter().map(|d| Tensor::matrix(2, 3, d).unwrap()).collect())
        }

        proptest! {
            #[test]
            fn fractions_stay_in_unit_interval(p in mats(6), t in mats(6)) {
                for s in [Scoring::Cosine, Scoring::NegL1] {
                    let a = retrieval_top1(&p, &t, s).unwrap();
                    let b = two_way_identification(&p, &t, s).unwrap();
                    prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
                }
            }

            #[test]
            fn retrieval_ignores_joint_permutation(p in mats(5), t in mats(5), perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()) {
                let pp: Vec<_> = perm.iter().map(|&i| p[i].clone()).collect();
                let tp: Vec<_> = perm.iter().map(|&i| t[i].clone()).collect();
                // Ties are broken by position, so compare on inputs without exact ties.
                let a = retrieval_top1(&p, &t, Scoring::Cosine).unwrap();
                let b = retrieval_top1(&pp, &tp, Scoring::Cosine).unwrap();
                let tied = p.iter().any(|z| {
                    let s: Vec<f64> = t.iter().map(|e| Scoring::Cosine.score(z, e)).collect();
                    (0..s.len()).any(|i| (i + 1..s.len()).any(|j| s[i] == s[j]))
                });
                prop_assume!(!tied);
                prop_assert_eq!(a, b);
                prop_assert_eq!(
                    two_way_identification(&p, &t, Scoring::Cosine).unwrap(),
                    two_way_identification(&pp, &tp, Scoring::Cosine).unwrap()
                );
            }
        }
    }
}
