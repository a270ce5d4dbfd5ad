use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_VERSION};
use super::config::TrainConfig;
use super::optim::{clip_grad_norm, AdamW, ParamRole};
use crate::data::{Corpus, Sample, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate_samples, MetricsReport, Scoring};
use crate::model::{encode, Binder, ModelConfig, ModelParams};
use crate::numerics::{Graph, Tensor};
use crate::objective::{record_total, LossConfig, LossValues};

pub const METRICS_HEADER: [&str; 8] = [
    "epoch",
    "split",
    "total_loss",
    "l1_loss",
    "contrastive_loss",
    "cosine_mean",
    "top1_retrieval",
    "two_way_id",
];

/// Mean batch loss and its gradient for every parameter slot.
///
/// Slots not touched by the batch (other subjects' projections) and frozen
/// slots get zero gradients.
pub fn batch_gradients(
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    loss: &LossConfig,
    batch: &[Sample<'_>],
) -> Result<(LossValues, Vec<Vec<f32>>)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut g = Graph::new();
    let mut binder = Binder::new(cfg, params, true);
    let mut totals = Vec::with_capacity(batch.len());
    let mut sums = LossValues {
        total: 0.0,
        l1: 0.0,
        contrastive: 0.0,
    };
    for s in batch {
        let v = g.constant(Tensor::vector(s.voxels.to_vec())?);
        let e = g.constant(s.target.clone());
        let z = encode(&mut g, &mut binder, cfg, v, s.subject)?;
        let lv = record_total(&mut g, z, e, loss)?;
        let vals = lv.values(&g);
        sums.total += vals.total;
        sums.l1 += vals.l1;
        sums.contrastive += vals.contrastive;
        totals.push(lv.total);
    }
    let mut acc = totals[0];
    for &t in &totals[1..] {
        acc = g.add(acc, t)?;
    }
    let n = batch.len() as f64;
    let mean = g.scale(acc, 1.0 / n as f32)?;
    g.backward(mean)?;

    let mut grads: Vec<Vec<f32>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    for (slot, var) in binder.bound() {
        if let Some(gr) = g.grad(var) {
            grads[slot].copy_from_slice(gr);
        }
    }
    Ok((
        LossValues {
            total: sums.total / n,
            l1: sums.l1 / n,
            contrastive: sums.contrastive / n,
        },
        grads,
    ))
}

pub fn param_roles(cfg: &ModelConfig, params: &ModelParams<f32>) -> Vec<ParamRole> {
    let binder = Binder::new(cfg, params, true);
    params
        .specs()
        .iter()
        .enumerate()
        .map(|(i, s)| ParamRole {
            trainable: binder.trainable(i),
            decay: s.kind.decays(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub params: ModelParams<f32>,
    pub optimizer: AdamW<f32>,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model: ModelConfig, loss: LossConfig, train: TrainConfig) -> Result<Self> {
        model.validate()?;
        loss.validate()?;
        train.validate()?;
        let params = ModelParams::init(&model)?;
        let optimizer = AdamW::new(params.tensors());
        Ok(Self {
            model,
            loss,
            train,
            params,
            optimizer,
            epoch: 0,
        })
    }

    /// Resumes from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(ck: Checkpoint) -> Result<Self> {
        let optimizer = ck
            .optimizer
            .ok_or_else(|| Error::Validation("checkpoint has no optimizer state to resume from".into()))?;
        Ok(Self {
            model: ck.header.model,
            loss: ck.header.loss,
            train: ck.header.train,
            params: ck.params,
            optimizer,
            epoch: ck.header.epoch,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                version: CHECKPOINT_VERSION,
                model: self.model.clone(),
                loss: self.loss.clone(),
                train: self.train.clone(),
                epoch: self.epoch,
                optimizer_step: self.optimizer.step,
                has_optimizer: true,
            },
            params: self.params.clone(),
            optimizer: Some(self.optimizer.clone()),
        }
    }

    /// Batch order for `epoch`, reproducible from the seed alone.
    pub fn epoch_order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        if self.train.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(self.train.seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
        }
        order
    }

    /// One AdamW update on `batch`.
    pub fn step(&mut self, batch: &[Sample<'_>]) -> Result<LossValues> {
        let (lv, mut grads) = batch_gradients(&self.params, &self.model, &self.loss, batch)?;
        if !lv.total.is_finite() {
            return Err(Error::NonFinite { op: "training loss" });
        }
        if let Some(c) = self.train.grad_clip {
            clip_grad_norm(&mut grads, c);
        }
        let roles = param_roles(&self.model, &self.params);
        self.optimizer
            .update(self.params.tensors_mut(), &grads, &roles, &self.train.adamw())?;
        Ok(lv)
    }

    /// Runs one epoch over `samples`. Returns mean batch losses.
    pub fn run_epoch(&mut self, samples: &[Sample<'_>]) -> Result<LossValues> {
        if samples.is_empty() {
            return Err(Error::Data("no training trials".into()));
        }
        let order = self.epoch_order(samples.len(), self.epoch);
        let mut sums = LossValues {
            total: 0.0,
            l1: 0.0,
            contrastive: 0.0,
        };
        let mut batches = 0usize;
        let mut batch = Vec::with_capacity(self.train.batch_size);
        for chunk in order.chunks(self.train.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i]));
            let lv = self.step(&batch)?;
            sums.total += lv.total;
            sums.l1 += lv.l1;
            sums.contrastive += lv.contrastive;
            batches += 1;
        }
        self.epoch += 1;
        let b = batches as f64;
        Ok(LossValues {
            total: sums.total / b,
            l1: sums.l1 / b,
            contrastive: sums.contrastive / b,
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Where `metrics.csv`, `best.*` and `last.*` go. Nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    pub scoring: Scoring,
    /// Evaluate on the training split instead of the test split.
    pub eval_split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossValues,
    pub eval: MetricsReport,
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub history: Vec<EpochRecord>,
    /// Epoch with the highest top-1 retrieval (earliest on ties), counting
    /// epochs recorded before a resume.
    pub best_epoch: usize,
    pub best_top1: f64,
    /// `None` when the best epoch predates this call.
    pub best_params: Option<ModelParams<f32>>,
}

impl FitReport {
    pub fn last(&self) -> &EpochRecord {
        self.history.last().expect("fit ran at least one epoch")
    }

    /// The best epoch's record, if it ran during this call.
    pub fn best(&self) -> Option<&EpochRecord> {
        self.history.iter().find(|r| r.epoch == self.best_epoch)
    }
}

/// Best (epoch, top-1) among rows up to `upto`. Later rows, left over from a
/// run that continued past the checkpoint being resumed, are dropped.
fn prior_best(path: &Path, upto: usize) -> Result<Option<(usize, f64)>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut rows = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut r = csv::Reader::from_path(path)?;
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let epoch: usize = field(0)
            .parse()
            .map_err(|_| Error::Data(format!("{}: bad epoch `{}`", path.display(), field(0))))?;
        let top1: f64 = field(6)
            .parse()
            .map_err(|_| Error::Data(format!("{}: bad top1 `{}`", path.display(), field(6))))?;
        if epoch > upto {
            continue;
        }
        if best.is_none_or(|(_, b)| top1 > b) {
            best = Some((epoch, top1));
        }
        rows.push(rec);
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for rec in &rows {
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(best)
}

fn append_metrics(path: &Path, r: &EpochRecord) -> Result<()> {
    let fresh = !path.exists();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(METRICS_HEADER)?;
    }
    let m = &r.eval;
    w.write_record([
        r.epoch.to_string(),
        m.split.to_string(),
        m.total_loss.to_string(),
        m.l1_loss.to_string(),
        m.contrastive_loss.to_string(),
        m.cosine_mean.to_string(),
        m.top1_retrieval.to_string(),
        m.two_way_id.to_string(),
    ])?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Trains up to `trainer.train.epochs`, evaluating after every epoch and
/// keeping the parameters with the best top-1 retrieval.
pub fn fit(trainer: &mut Trainer, corpus: &Corpus, opts: &FitOptions) -> Result<FitReport> {
    let train_idx = corpus.indices(Split::Train);
    let eval_split = opts.eval_split.unwrap_or(Split::Test);
    let eval_idx = corpus.indices(eval_split);
    let train_samples = corpus.samples(&trainer.model, &train_idx)?;
    let eval_samples = corpus.samples(&trainer.model, &eval_idx)?;
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Option<ModelParams<f32>>)> = None;
    if let Some(dir) = &opts.out_dir {
        let csv = dir.join("metrics.csv");
        if trainer.epoch == 0 {
            if csv.exists() {
                std::fs::remove_file(&csv).map_err(|e| Error::io(&csv, e))?;
            }
        } else {
            best = prior_best(&csv, trainer.epoch)?.map(|(e, t)| (e, t, None));
        }
    }
    while trainer.epoch < trainer.train.epochs {
        let train = trainer.run_epoch(&train_samples)?;
        let eval = evaluate_samples(
            &trainer.params,
            &trainer.model,
            &trainer.loss,
            &eval_samples,
            &corpus.embeddings,
            opts.scoring,
            eval_split,
        )?;
        info!(
            "epoch {:>3}  train loss {:.4} (l1 {:.4}, con {:.4})  {eval_split} top1 {:.3}  2-way {:.3}",
            trainer.epoch, train.total, train.l1, train.contrastive, eval.top1_retrieval, eval.two_way_id
        );
        let rec = EpochRecord {
            epoch: trainer.epoch,
            train,
            eval,
        };
        let improved = best.as_ref().is_none_or(|(_, top1, _)| rec.eval.top1_retrieval > *top1);
        if improved {
            best = Some((rec.epoch, rec.eval.top1_retrieval, Some(trainer.params.clone())));
        }
        if let Some(dir) = &opts.out_dir {
            append_metrics(&dir.join("metrics.csv"), &rec)?;
            let ck = trainer.checkpoint();
            ck.save(&dir.join("last"))?;
            if improved {
                debug!("new best at epoch {}", rec.epoch);
                ck.save(&dir.join("best"))?;
            }
        }
        history.push(rec);
    }
    if history.is_empty() {
        return Err(Error::Contract(format!(
            "nothing to train: already at epoch {}",
            trainer.epoch
        )));
    }
    let (best_epoch, best_top1, best_params) = best.expect("at least one epoch ran");
    Ok(FitReport {
        history,
        best_epoch,
        best_top1,
        best_params,
    })
}

/// Writes a metrics CSV row set with extra leading columns.
pub fn write_metrics_table<W: Write>(
    out: W,
    extra: &[&str],
    rows: &[(Vec<String>, usize, MetricsReport)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<&str> = extra.iter().copied().chain(METRICS_HEADER).collect();
    w.write_record(&header)?;
    for (cols, epoch, m) in rows {
        let mut rec = cols.clone();
        rec.extend([
            epoch.to_string(),
            m.split.to_string(),
            m.total_loss.to_string(),
            m.l1_loss.to_string(),
            m.contrastive_loss.to_string(),
            m.cosine_mean.to_string(),
            m.top1_retrieval.to_string(),
            m.two_way_id.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Data(format!("writing metrics: {e}")))?;
    Ok(())
}
