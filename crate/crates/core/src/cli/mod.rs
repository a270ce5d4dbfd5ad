//! The `mindformer` command line.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

pub use config::{
    deep_merge, preset_base, resolve_config, set_path, AblationSettings, ConfigSources, EvalSettings, Preset,
    RunConfig, CONFIG_VERSION,
};

use crate::data::{generate_synthetic, load_manifest, write_mft, write_synthetic, Corpus, MftEntry, Split};
use crate::error::{Error, Result};
use crate::eval::{ablate_data_size, ablate_subject_token, evaluate};
use crate::model::{enumerated_param_count, forward_index, param_count, subject_increment, SubjectDecl};
use crate::train::{
    check_model_gradients, fit, write_metrics_table, Checkpoint, FitOptions, GradCheckOptions, Trainer,
    GRAD_CHECK_TOLERANCE,
};

#[derive(Debug, Parser)]
#[command(
    name = "mindformer",
    version,
    about = "Multi-subject fMRI encoder: data, training, evaluation and ablations"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run config, merged over the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory. Every other path is relative to it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `desk` (default) or `full`.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Override a config field, e.g. `--set train.lr=1e-3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Seed for data generation, init and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset into <out>/data.
    GenData,
    /// Train and write metrics and checkpoints to <out>/train.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        scoring: Option<String>,
    },
    /// Finite-difference check of the full model's gradients.
    GradCheck {
        #[arg(long, default_value_t = 1e-6)]
        h: f64,
        #[arg(long, hide = true)]
        sabotage: bool,
    },
    /// Run an ablation grid.
    Ablate {
        which: Ablation,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Comma-separated training-trial counts per subject.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        subject: Option<String>,
    },
    /// Print the parameter breakdown.
    ParamCount {
        #[arg(long)]
        json: bool,
        /// Also report the effect of one more subject with this many voxels.
        #[arg(long, value_name = "VOXELS")]
        add_subject: Option<usize>,
    },
    /// Write the encoder outputs Z for a split as MFT1.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "export/z.mft")]
        file: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    Token,
    Datasize,
}

struct Ctx {
    out: PathBuf,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        self.out.join(p)
    }

    fn dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.out.join(name);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse()
}

impl Common {
    fn resolve(&self, epochs: Option<usize>, default_seeds: bool) -> Result<(RunConfig, Ctx)> {
        let preset = self.preset.as_deref().map(str::parse).transpose()?;
        let cfg = resolve_config(&ConfigSources {
            file: self.config.as_deref(),
            preset,
            sets: &self.sets,
            seed: self.seed,
            epochs,
            default_seeds,
        })?;
        let out = self
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok((cfg, Ctx { out }))
    }
}

fn load_corpus(cfg: &RunConfig, ctx: &Ctx) -> Result<Corpus> {
    match (&cfg.dataset, &cfg.synthetic) {
        (Some(path), _) => load_manifest(&ctx.path(path))?.to_corpus(),
        (None, Some(spec)) => Ok(generate_synthetic(spec)?.corpus),
        (None, None) => unreachable!("validated"),
    }
}

fn subjects_of(cfg: &RunConfig, ctx: &Ctx) -> Result<Vec<SubjectDecl>> {
    match (&cfg.dataset, &cfg.synthetic) {
        (Some(path), _) => Ok(load_manifest(&ctx.path(path))?.manifest().subjects.clone()),
        (None, Some(spec)) => Ok(spec.subjects.clone()),
        (None, None) => unreachable!("validated"),
    }
}

/// Parses `args` and runs the command, writing human output to `stdout`.
pub fn run<W: Write>(cli: Cli, stdout: &mut W) -> Result<()> {
    let c = &cli.common;
    let io = |e: std::io::Error| Error::io("<stdout>", e);
    match cli.command {
        Command::GenData => {
            let (cfg, ctx) = c.resolve(None, false)?;
            let spec = cfg
                .synthetic
                .as_ref()
                .ok_or_else(|| Error::Config("gen-data needs a `synthetic` section".into()))?;
            let manifest = write_synthetic(spec, &ctx.path(Path::new("data")))?;
            writeln!(stdout, "wrote {}", manifest.display()).map_err(io)?;
        }
        Command::Train { epochs, resume } => {
            let (cfg, ctx) = c.resolve(epochs, false)?;
            let corpus = load_corpus(&cfg, &ctx)?;
            let mut trainer = match &resume {
                Some(p) => {
                    let mut t = Trainer::resume(Checkpoint::load(&ctx.path(p))?)?;
                    t.train.epochs = cfg.train.epochs;
                    t
                }
                None => Trainer::new(cfg.model_for(&corpus.subjects)?, cfg.loss.clone(), cfg.train.clone())?,
            };
            let dir = ctx.dir("train")?;
            write_json(&dir.join("config.json"), &cfg)?;
            let report = fit(
                &mut trainer,
                &corpus,
                &FitOptions {
                    out_dir: Some(dir.clone()),
                    scoring: cfg.eval.scoring,
                    eval_split: None,
                },
            )?;
            match report.best() {
                Some(b) => writeln!(
                    stdout,
                    "best epoch {}: top1 {:.4} two-way {:.4} cosine {:.4}",
                    b.epoch, b.eval.top1_retrieval, b.eval.two_way_id, b.eval.cosine_mean
                ),
                None => writeln!(
                    stdout,
                    "best epoch {} (before resume): top1 {:.4}",
                    report.best_epoch, report.best_top1
                ),
            }
            .map_err(io)?;
        }
        Command::Eval {
            checkpoint,
            split,
            scoring,
        } => {
            let split = parse_split(&split)?;
            let (cfg, ctx) = c.resolve(None, true)?;
            let ck = Checkpoint::load(&ctx.path(&checkpoint))?;
            let scoring = match scoring {
                Some(s) => s.parse()?,
                None => cfg.eval.scoring,
            };
            let corpus = load_corpus(&cfg, &ctx)?;
            let idx = corpus.indices(split);
            let m = evaluate(
                &ck.params,
                &ck.header.model,
                &ck.header.loss,
                &corpus,
                &idx,
                scoring,
                split,
            )?;
            let dir = ctx.dir("eval")?;
            write_json(&dir.join(format!("{split}.json")), &m)?;
            let file = std::fs::File::create(dir.join(format!("{split}.csv"))).map_err(|e| Error::io(&dir, e))?;
            write_metrics_table(file, &[], &[(vec![], ck.header.epoch, m.clone())])?;
            writeln!(
                stdout,
                "{split}: n {} top1 {:.4} two-way {:.4} cosine {:.4} loss {:.4}",
                m.n_samples, m.top1_retrieval, m.two_way_id, m.cosine_mean, m.total_loss
            )
            .map_err(io)?;
        }
        Command::GradCheck { h, sabotage } => {
            if !(1e-10..=1e-2).contains(&h) {
                return Err(Error::Usage(format!("--h {h} is outside [1e-10, 1e-2]")));
            }
            let (cfg, _) = c.resolve(None, true)?;
            let r = check_model_gradients(&GradCheckOptions {
                h,
                seed: cfg.model.seed,
                loss: cfg.loss.clone(),
                sabotage,
            })?;
            writeln!(
                stdout,
                "max_rel_err {:.3e} over {} coordinates",
                r.max_rel_err, r.coords
            )
            .map_err(io)?;
            if !(r.max_rel_err < GRAD_CHECK_TOLERANCE) {
                return Err(Error::GradCheck {
                    max_rel_err: r.max_rel_err,
                    tolerance: GRAD_CHECK_TOLERANCE,
                });
            }
        }
        Command::Ablate {
            which,
            seeds,
            sizes,
            subject,
        } => {
            let (cfg, ctx) = c.resolve(None, true)?;
            let corpus = load_corpus(&cfg, &ctx)?;
            let model = cfg.model_for(&corpus.subjects)?;
            let seeds = seeds.unwrap_or_else(|| cfg.ablation.seeds.clone());
            let dir = ctx.dir("ablate")?;
            match which {
                Ablation::Token => {
                    let r = ablate_subject_token(&corpus, &model, &cfg.loss, &cfg.train, &seeds, cfg.eval.scoring)?;
                    r.write_csv(&dir.join("token.csv"))?;
                    write_json(&dir.join("token.json"), &r)?;
                    for s in [&r.with_token, &r.without_token] {
                        writeln!(stdout, "{}: top1 {:.4} ± {:.4}", s.arm, s.top1_mean, s.top1_std).map_err(io)?;
                    }
                }
                Ablation::Datasize => {
                    let sizes = sizes.unwrap_or_else(|| cfg.ablation.sizes.clone());
                    let subject = subject
                        .or_else(|| cfg.ablation.subject.clone())
                        .unwrap_or_else(|| corpus.subjects[0].id.clone());
                    let r = ablate_data_size(
                        &corpus,
                        &model,
                        &cfg.loss,
                        &cfg.train,
                        &subject,
                        &sizes,
                        &seeds,
                        cfg.eval.scoring,
                    )?;
                    r.write_csv(&dir.join("datasize.csv"))?;
                    write_json(&dir.join("datasize.json"), &r)?;
                    for &size in &sizes {
                        for arm in ["single", "multi"] {
                            let s = r.summary(arm, size);
                            writeln!(stdout, "{arm} size {size}: top1 {:.4} ± {:.4}", s.top1_mean, s.top1_std)
                                .map_err(io)?;
                        }
                    }
                }
            }
        }
        Command::ParamCount { json, add_subject } => {
            let (cfg, ctx) = c.resolve(None, true)?;
            let model = cfg.model_for(&subjects_of(&cfg, &ctx)?)?;
            let count = param_count(&model)?;
            let enumerated = enumerated_param_count(&model)?;
            if enumerated != count.total {
                return Err(Error::Contract(format!(
                    "closed-form count {} disagrees with enumeration {enumerated}",
                    count.total
                )));
            }
            let extra = match add_subject {
                Some(f) => {
                    let mut m = model.clone();
                    m.subjects
                        .push(SubjectDecl::new(format!("extra{}", m.subjects.len() + 1), f));
                    Some((param_count(&m)?.total, subject_increment(&model, f)))
                }
                None => None,
            };
            if json {
                let mut v = serde_json::to_value(&count)?;
                if let Some((total, inc)) = extra {
                    v["with_added_subject"] = serde_json::json!({ "total": total, "increment": inc });
                }
                writeln!(stdout, "{}", serde_json::to_string_pretty(&v)?).map_err(io)?;
            } else {
                for g in &count.groups {
                    writeln!(stdout, "{:<22} {:>14}", g.name, g.count).map_err(io)?;
                }
                writeln!(stdout, "{:<22} {:>14}", "total", count.total).map_err(io)?;
                if let Some((total, inc)) = extra {
                    writeln!(stdout, "{:<22} {:>14} (+{inc})", "with added subject", total).map_err(io)?;
                }
            }
        }
        Command::Export {
            checkpoint,
            split,
            file,
        } => {
            let split = parse_split(&split)?;
            let (cfg, ctx) = c.resolve(None, true)?;
            let ck = Checkpoint::load(&ctx.path(&checkpoint))?;
            let corpus = load_corpus(&cfg, &ctx)?;
            let idx = corpus.indices(split);
            let samples = corpus.samples(&ck.header.model, &idx)?;
            let mut entries = Vec::with_capacity(samples.len());
            for s in &samples {
                let z = forward_index(s.voxels, s.subject, &ck.params, &ck.header.model)?;
                let t = &corpus.trials[s.trial];
                entries.push(MftEntry::new(format!("{:06}.{}.{}", s.trial, t.subject, t.stimulus), z));
            }
            let path = ctx.path(&file);
            write_mft(&path, &entries)?;
            info!("exported {} encodings", entries.len());
            writeln!(stdout, "wrote {} ({} entries)", path.display(), entries.len()).map_err(io)?;
        }
    }
    Ok(())
}

/// Parses `args`, mapping clap failures to usage errors.
/// `Ok(None)` means help or version text was printed.
pub fn parse<I, T>(args: I) -> Result<Option<Cli>>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => Ok(Some(cli)),
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                print!("{e}");
                Ok(None)
            }
            _ => {
                let text = e.to_string();
                let line = text
                    .lines()
                    .find(|l| !l.trim().is_empty())
                    .unwrap_or("invalid arguments")
                    .trim_start_matches("error: ");
                Err(Error::Usage(line.to_string()))
            }
        },
    }
}
