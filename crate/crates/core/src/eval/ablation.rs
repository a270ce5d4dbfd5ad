use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, MetricsReport, Scoring};
use crate::data::{Corpus, Split};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objective::LossConfig;
use crate::train::{write_metrics_table, TrainConfig, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub runs: usize,
    pub top1_mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub top1_std: f64,
    pub two_way_mean: f64,
    pub two_way_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl ArmSummary {
    pub fn of<'a>(arm: &str, metrics: impl Iterator<Item = &'a MetricsReport>) -> Self {
        let (top1, two): (Vec<f64>, Vec<f64>) = metrics.map(|m| (m.top1_retrieval, m.two_way_id)).unzip();
        let (top1_mean, top1_std) = mean_std(&top1);
        let (two_way_mean, two_way_std) = mean_std(&two);
        Self {
            arm: arm.to_string(),
            runs: top1.len(),
            top1_mean,
            top1_std,
            two_way_mean,
            two_way_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenRun {
    pub subject_token: bool,
    pub seed: u64,
    pub epoch: usize,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenAblation {
    pub runs: Vec<TokenRun>,
    pub with_token: ArmSummary,
    pub without_token: ArmSummary,
}

fn train_and_score(
    corpus: &Corpus,
    model: ModelConfig,
    loss: &LossConfig,
    train: TrainConfig,
    eval_idx: &[usize],
    scoring: Scoring,
) -> Result<(usize, MetricsReport)> {
    let mut t = Trainer::new(model, loss.clone(), train)?;
    let train_idx = corpus.indices(Split::Train);
    let samples = corpus.samples(&t.model, &train_idx)?;
    while t.epoch < t.train.epochs {
        t.run_epoch(&samples)?;
    }
    let m = evaluate(&t.params, &t.model, loss, corpus, eval_idx, scoring, Split::Test)?;
    Ok((t.epoch, m))
}

/// Trains with and without the learnable subject token for every seed and
/// scores the final parameters on the test split.
///
/// Both arms share one initialization per seed; the token arm's tokens start
/// from the same draw the frozen arm zeroes out.
pub fn ablate_subject_token(
    corpus: &Corpus,
    model: &ModelConfig,
    loss: &LossConfig,
    train: &TrainConfig,
    seeds: &[u64],
    scoring: Scoring,
) -> Result<TokenAblation> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let test = corpus.indices(Split::Test);
    let mut runs = Vec::new();
    for &seed in seeds {
        for subject_token in [true, false] {
            let model = ModelConfig {
                seed,
                subject_token,
                ..model.clone()
            };
            let train = TrainConfig { seed, ..train.clone() };
            let (epoch, metrics) = train_and_score(corpus, model, loss, train, &test, scoring)?;
            info!(
                "token={subject_token} seed={seed}: top1 {:.3} 2-way {:.3}",
                metrics.top1_retrieval, metrics.two_way_id
            );
            runs.push(TokenRun {
                subject_token,
                seed,
                epoch,
                metrics,
            });
        }
    }
    let arm = |flag: bool| runs.iter().filter(move |r| r.subject_token == flag).map(|r| &r.metrics);
    Ok(TokenAblation {
        with_token: ArmSummary::of("with_token", arm(true)),
        without_token: ArmSummary::of("without_token", arm(false)),
        runs,
    })
}

impl TokenAblation {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<_> = self
            .runs
            .iter()
            .map(|r| {
                let arm = if r.subject_token { "with_token" } else { "without_token" };
                (vec![arm.to_string(), r.seed.to_string()], r.epoch, r.metrics.clone())
            })
            .collect();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_metrics_table(file, &["arm", "seed"], &rows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSizeRun {
    /// `single` trains on the target subject alone, `multi` on every subject.
    pub arm: String,
    /// Training trials kept per subject.
    pub size: usize,
    pub seed: u64,
    pub epoch: usize,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSizeAblation {
    pub subject: String,
    pub runs: Vec<DataSizeRun>,
}

/// For every size and seed, trains a single-subject and a multi-subject
/// model on `size` training trials per subject and scores both on the
/// target subject's test trials.
#[allow(clippy::too_many_arguments)]
pub fn ablate_data_size(
    corpus: &Corpus,
    model: &ModelConfig,
    loss: &LossConfig,
    train: &TrainConfig,
    subject: &str,
    sizes: &[usize],
    seeds: &[u64],
    scoring: Scoring,
) -> Result<DataSizeAblation> {
    if sizes.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one size and one seed".into()));
    }
    let single_corpus = corpus.only_subject(subject)?;
    let mut runs = Vec::new();
    for &size in sizes {
        for &seed in seeds {
            for (arm, base) in [("single", &single_corpus), ("multi", corpus)] {
                let sub = base.subset(size, seed)?;
                let model = ModelConfig {
                    seed,
                    subjects: sub.subjects.clone(),
                    ..model.clone()
                };
                let train = TrainConfig { seed, ..train.clone() };
                let eval_idx = sub.subject_indices(subject, Split::Test);
                let (epoch, metrics) = train_and_score(&sub, model, loss, train, &eval_idx, scoring)?;
                info!(
                    "{arm} size={size} seed={seed}: top1 {:.3} 2-way {:.3}",
                    metrics.top1_retrieval, metrics.two_way_id
                );
                runs.push(DataSizeRun {
                    arm: arm.to_string(),
                    size,
                    seed,
                    epoch,
                    metrics,
                });
            }
        }
    }
    Ok(DataSizeAblation {
        subject: subject.to_string(),
        runs,
    })
}

impl DataSizeAblation {
    pub fn summary(&self, arm: &str, size: usize) -> ArmSummary {
        ArmSummary::of(
            arm,
            self.runs
                .iter()
                .filter(|r| r.arm == arm && r.size == size)
                .map(|r| &r.metrics),
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<_> = self
            .runs
            .iter()
            .map(|r| {
                (
                    vec![r.arm.clone(), r.size.to_string(), r.seed.to_string()],
                    r.epoch,
                    r.metrics.clone(),
                )
            })
            .collect();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_metrics_table(file, &["arm", "size", "seed"], &rows)
    }
}
