//! Command-line front end. Each phase command reads and writes the
//! checkpoint in `out_dir`; `pipeline` runs them all in order.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Stage};
use crate::config::{parse_config, PipelineConfig};
use crate::data::format_corpus;
use crate::pipeline::{
    check_dims, cluster_report, enhance, evaluate_model, load_datasets, train_filters, train_phase1, write_file,
    Datasets, EvalReport, PipelineError,
};
use crate::sac::format_trajectory;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAJECTORY_FILE: &str = "trajectory.tsv";
pub const CLUSTER_FILE: &str = "clusters.tsv";
pub const REPORT_FILE: &str = "eval_report.txt";

#[derive(Debug, Parser)]
#[command(
    name = "lms2s",
    about = "Latent-clustered multi-filter sequence-to-sequence training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat key=value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; overrides any `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// key=value overrides, applied after the config file.
    #[arg(global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write the synthetic train/valid corpora as TAB-separated files.
    GenData,
    /// Phase 1: train encoder, enhancer and dummy decoder; freeze.
    Train,
    /// Phase 2: rescale the cluster classifier with the agent.
    Enhance,
    /// Phase 3: route training pairs and train one filter per cluster.
    TrainFilters,
    /// Score the validation split and write the report.
    Evaluate,
    /// Write projected latent points with clusters and scores.
    ClusterReport,
    /// All phases in order, then evaluation and reports.
    Pipeline,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

impl From<crate::config::ConfigError> for CliError {
    fn from(e: crate::config::ConfigError) -> Self {
        CliError::Pipeline(e.into())
    }
}

/// Parses `args` (program name first) and runs the command, writing
/// progress lines to `out`.
pub fn run<I, S>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            write!(out, "{e}")?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string().trim_end().to_string())),
    };
    let mut cfg = parse_config(cli.config.as_deref(), &cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    write!(out, "{}", cfg.echo())?;
    run_command(cli.command, &cfg, out)
}

fn ckpt_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.out_dir.join(CHECKPOINT_FILE)
}

fn load_stage(cfg: &PipelineConfig, data: &Datasets, need: Stage, next: &str) -> Result<Checkpoint, CliError> {
    let path = ckpt_path(cfg);
    if !path.exists() {
        return Err(PipelineError::Order(format!(
            "no checkpoint at {}; run `train` before `{next}`",
            path.display()
        ))
        .into());
    }
    let ck = load_checkpoint(&path).map_err(PipelineError::from)?;
    check_dims(cfg, &ck.params, data.vocab.len())?;
    if ck.stage < need {
        let phase = match need {
            Stage::Trained => "train",
            Stage::Enhanced => "enhance",
            Stage::FiltersTrained => "train-filters",
        };
        return Err(
            PipelineError::Order(format!("checkpoint is missing a phase; run `{phase}` before `{next}`")).into(),
        );
    }
    Ok(ck)
}

fn save(cfg: &PipelineConfig, ck: &Checkpoint) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|source| PipelineError::Io {
        path: cfg.out_dir.display().to_string(),
        source,
    })?;
    save_checkpoint(ck, &ckpt_path(cfg)).map_err(PipelineError::from)?;
    Ok(())
}

fn out_file(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

pub fn run_command(command: Command, cfg: &PipelineConfig, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::GenData => gen_data(cfg, out),
        Command::Train => {
            let data = load_datasets(cfg)?;
            train(cfg, &data, out)
        }
        Command::Enhance => {
            let data = load_datasets(cfg)?;
            let mut ck = load_stage(cfg, &data, Stage::Trained, "enhance")?;
            run_enhance(cfg, &data, &mut ck, out)?;
            save(cfg, &ck)
        }
        Command::TrainFilters => {
            let data = load_datasets(cfg)?;
            let mut ck = load_stage(cfg, &data, Stage::Trained, "train-filters")?;
            run_filters(cfg, &data, &mut ck, out)?;
            save(cfg, &ck)
        }
        Command::Evaluate => {
            let data = load_datasets(cfg)?;
            let ck = load_stage(cfg, &data, Stage::FiltersTrained, "evaluate")?;
            run_evaluate(cfg, &data, &ck, out).map(|_| ())
        }
        Command::ClusterReport => {
            let data = load_datasets(cfg)?;
            let ck = load_stage(cfg, &data, Stage::Trained, "cluster-report")?;
            run_cluster_report(cfg, &data, &ck, out)
        }
        Command::Pipeline => {
            let data = load_datasets(cfg)?;
            train(cfg, &data, out)?;
            let mut ck = load_stage(cfg, &data, Stage::Trained, "enhance")?;
            run_enhance(cfg, &data, &mut ck, out)?;
            run_filters(cfg, &data, &mut ck, out)?;
            save(cfg, &ck)?;
            run_cluster_report(cfg, &data, &ck, out)?;
            run_evaluate(cfg, &data, &ck, out).map(|_| ())
        }
    }
}

fn gen_data(cfg: &PipelineConfig, out: &mut dyn Write) -> Result<(), CliError> {
    if cfg.corpus != "synthetic" {
        return Err(CliError::Usage(
            "gen-data only generates the synthetic corpus (corpus=synthetic)".into(),
        ));
    }
    let data = load_datasets(cfg)?;
    for (name, corpus) in [("train.tsv", &data.train), ("valid.tsv", &data.valid)] {
        let path = out_file(cfg, name);
        write_file(&path, &format_corpus(corpus, &data.vocab))?;
        writeln!(out, "wrote {} ({} pairs)", path.display(), corpus.len())?;
    }
    Ok(())
}

fn train(cfg: &PipelineConfig, data: &Datasets, out: &mut dyn Write) -> Result<(), CliError> {
    let (params, log) = train_phase1(cfg, data)?;
    for (i, l) in log.epoch_losses.iter().enumerate() {
        let v = log
            .valid_losses
            .get(i)
            .map_or(String::new(), |v| format!(" valid {v:.6}"));
        writeln!(out, "phase1 epoch {} train {l:.6}{v}", i + 1)?;
    }
    if log.stopped_early {
        writeln!(
            out,
            "phase1 stopped early: validation loss rose {} epochs in a row",
            cfg.patience
        )?;
    }
    save(
        cfg,
        &Checkpoint {
            config: cfg.clone(),
            stage: Stage::Trained,
            params,
        },
    )?;
    writeln!(out, "wrote {}", ckpt_path(cfg).display())?;
    Ok(())
}

fn run_enhance(
    cfg: &PipelineConfig,
    data: &Datasets,
    ck: &mut Checkpoint,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let result = enhance(cfg, &mut ck.params, data)?;
    let path = out_file(cfg, TRAJECTORY_FILE);
    match &result {
        Some(e) => {
            write_file(&path, &format_trajectory(&e.trajectory))?;
            writeln!(
                out,
                "enhance: silhouette {} -> {} in {} steps; target {} {}",
                e.initial_sc,
                e.best_sc,
                e.trajectory.len(),
                cfg.sac.target,
                if e.reached_target { "reached" } else { "not reached" }
            )?;
            if e.clip_warnings > 0 {
                writeln!(out, "enhance: {} actions clipped into range", e.clip_warnings)?;
            }
        }
        None => {
            write_file(&path, &format_trajectory(&[]))?;
            writeln!(out, "enhance: skipped (rl=false or a single filter)")?;
        }
    }
    ck.stage = ck.stage.max(Stage::Enhanced);
    ck.config = cfg.clone();
    Ok(())
}

fn run_filters(
    cfg: &PipelineConfig,
    data: &Datasets,
    ck: &mut Checkpoint,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let log = train_filters(cfg, data, &mut ck.params)?;
    for (i, (size, losses)) in log.train_sizes.iter().zip(&log.epoch_losses).enumerate() {
        match losses.last() {
            Some(l) => writeln!(
                out,
                "filter {}: {size} pairs, {} epochs, final loss {l:.6}",
                i + 1,
                losses.len()
            )?,
            None => writeln!(out, "filter {}: empty cluster, left at initialization", i + 1)?,
        }
    }
    ck.stage = Stage::FiltersTrained;
    ck.config = cfg.clone();
    Ok(())
}

fn run_evaluate(
    cfg: &PipelineConfig,
    data: &Datasets,
    ck: &Checkpoint,
    out: &mut dyn Write,
) -> Result<EvalReport, CliError> {
    let report = evaluate_model(
        &ck.params,
        &data.valid,
        cfg.max_len,
        cfg.sac.silhouette_sample,
        cfg.seed,
    )?;
    let path = out_file(cfg, REPORT_FILE);
    write_file(&path, &report.format())?;
    write!(out, "{}", report.format())?;
    writeln!(out, "wrote {}", path.display())?;
    Ok(report)
}

fn run_cluster_report(
    cfg: &PipelineConfig,
    data: &Datasets,
    ck: &Checkpoint,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let report = cluster_report(&ck.params, &data.train, cfg.sac.silhouette_sample, cfg.seed)?;
    let path = out_file(cfg, CLUSTER_FILE);
    write_file(&path, &report.format())?;
    writeln!(
        out,
        "cluster report: sizes {:?}, silhouette {}; wrote {}",
        report.sizes,
        report.silhouette,
        path.display()
    )?;
    Ok(())
}

/// Reads a report written by `evaluate`.
pub fn read_report(path: &Path) -> Option<EvalReport> {
    EvalReport::parse(&std::fs::read_to_string(path).ok()?)
}
