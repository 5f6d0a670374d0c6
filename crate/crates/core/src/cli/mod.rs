//! Command-line workflows over config files.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input or configuration,
//! 3 numeric failure. `PHASEREC_THREADS` caps the worker pool.

mod config;

pub use config::{read_taxonomy, Ablation, DataConfig, RunConfig};

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::annotations::{
    dataset_stats, load_annotation_dir, make_splits, synth_generate, write_annotation_file,
    write_manifest, AnnotationTrack, ManifestEntry,
};
use crate::error::{Error, Result};
use crate::eval::{per_video_report, ribbon_csv, ribbon_svg, EvalReport};
use crate::features::{read_prfv, write_prfv};
use crate::model::{load_checkpoint, save_checkpoint, Model, PhaseTaxonomy, Prediction};
use crate::parallel::{self, Execution};
use crate::spi::{build_spi_targets, transition_table, SpiTrack, TransitionTable};
use crate::training::{evaluate, fit, write_log_csv, FitOptions, LabeledVideo};

pub const THREADS_VAR: &str = "PHASEREC_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "phaserec",
    version,
    about = "Online surgical phase recognition"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Feature switches, e.g. `spi=off,stfeat=on`.
    #[arg(long)]
    pub ablation: Option<Ablation>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-phase duration table of an annotation directory.
    Stats {
        annotations: PathBuf,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
    /// Average phase transition points over complete videos, as CSV.
    SpiTable {
        annotations: PathBuf,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes a synthetic corpus described by the `[synth]` section.
    Synth {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Trains one model per split round.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Only this round.
        #[arg(long)]
        round: Option<usize>,
    },
    /// Scores a checkpoint on a round's evaluation videos.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 0)]
        round: usize,
        /// Defaults to the round's final checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Per-second predictions for one feature file, as CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => 1,
        e if e.is_numeric() => 3,
        _ => 2,
    }
}

/// Parses arguments, runs the command and reports failures on stderr.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads_from_env().and_then(|_| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn init_threads_from_env() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Error::Config(format!(
                "{THREADS_VAR} must be a positive integer, got `{value}`"
            ))
        })?;
    parallel::init_threads(threads);
    Ok(())
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Stats {
            annotations,
            taxonomy,
        } => {
            let tax = taxonomy_or_default(taxonomy.as_deref())?;
            let tracks = load_annotation_dir(&annotations, &tax)?;
            print!("{}", dataset_stats(&tracks, &tax)?);
            Ok(())
        }
        Command::SpiTable {
            annotations,
            taxonomy,
            out,
        } => {
            let tax = taxonomy_or_default(taxonomy.as_deref())?;
            let tracks = load_annotation_dir(&annotations, &tax)?;
            let table = complete_table(&tracks, &tax)?;
            match out {
                Some(path) => write_file(&path, table.to_csv().as_bytes()),
                None => {
                    print!("{}", table.to_csv());
                    Ok(())
                }
            }
        }
        Command::Synth { run } => cmd_synth(&load(&run)?),
        Command::Train { run, round } => cmd_train(&load(&run)?, round),
        Command::Eval {
            run,
            round,
            checkpoint,
        } => {
            let cfg = load(&run)?;
            let ckpt = checkpoint.unwrap_or_else(|| round_dir(&cfg, round).join("last.ckpt"));
            cmd_eval(&cfg, round, &ckpt)
        }
        Command::Predict {
            checkpoint,
            features,
            out,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let seq = read_prfv(&features)?;
            let csv = predictions_csv(&model.predict_video(&seq)?)?;
            match out {
                Some(path) => write_file(&path, csv.as_bytes()),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
    }
}

fn load(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    if let Some(a) = &args.ablation {
        cfg.apply(a);
    }
    Ok(cfg)
}

fn taxonomy_or_default(path: Option<&Path>) -> Result<PhaseTaxonomy> {
    path.map_or_else(|| Ok(PhaseTaxonomy::acl27()), read_taxonomy)
}

/// Transition table over the complete tracks; the rest are listed on stderr.
fn complete_table(tracks: &[AnnotationTrack], tax: &PhaseTaxonomy) -> Result<TransitionTable> {
    let (complete, partial): (Vec<_>, Vec<_>) = tracks
        .iter()
        .cloned()
        .partition(|t| t.is_complete(tax.len()));
    if !partial.is_empty() {
        let ids: Vec<&str> = partial.iter().map(AnnotationTrack::video_id).collect();
        eprintln!("warning: excluding incomplete videos: {}", ids.join(", "));
    }
    if complete.is_empty() {
        return Err(Error::Empty(
            "no complete videos to build a transition table".into(),
        ));
    }
    transition_table(&complete, tax)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn round_dir(cfg: &RunConfig, round: usize) -> PathBuf {
    cfg.output.join(format!("round{round}"))
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let spec = cfg
        .synth
        .as_ref()
        .ok_or_else(|| Error::Config("missing [synth] section".into()))?;
    let videos = synth_generate(spec)?;
    let ann = cfg.output.join("annotations");
    let feat = cfg.output.join("features");
    for dir in [&ann, &feat] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut manifest = Vec::with_capacity(videos.len());
    for v in &videos {
        let id = v.track.video_id();
        write_annotation_file(ann.join(format!("{id}.csv")), &v.track, &spec.taxonomy)?;
        write_prfv(feat.join(format!("{id}.prfv")), &v.features)?;
        manifest.push(ManifestEntry::of(&v.track, &spec.taxonomy));
    }
    write_manifest(cfg.output.join("manifest.csv"), &manifest)?;
    let names = spec.taxonomy.names().join("\n") + "\n";
    write_file(&cfg.output.join("taxonomy.txt"), names.as_bytes())?;
    write_file(&cfg.output.join("run.toml"), cfg.to_toml().as_bytes())?;
    eprintln!("wrote {} videos to {}", videos.len(), cfg.output.display());
    Ok(())
}

/// Tracks, features and split rounds of the configured corpus.
struct Corpus {
    taxonomy: PhaseTaxonomy,
    tracks: Vec<AnnotationTrack>,
    rounds: Vec<crate::annotations::Round>,
}

impl Corpus {
    fn load(cfg: &RunConfig) -> Result<Self> {
        let taxonomy = cfg.taxonomy()?;
        if taxonomy.len() != cfg.model.phases {
            return Err(Error::Config(format!(
                "taxonomy has {} phases, model expects {}",
                taxonomy.len(),
                cfg.model.phases
            )));
        }
        let tracks = load_annotation_dir(&cfg.data()?.annotations, &taxonomy)?;
        let ids: Vec<String> = tracks.iter().map(|t| t.video_id().to_string()).collect();
        let rounds = make_splits(&ids, &cfg.split)?;
        Ok(Corpus {
            taxonomy,
            tracks,
            rounds,
        })
    }

    fn select(&self, ids: &[String]) -> Vec<AnnotationTrack> {
        ids.iter()
            .filter_map(|id| self.tracks.iter().find(|t| t.video_id() == id))
            .cloned()
            .collect()
    }

    /// Transition table from the round's training videos only.
    fn table(&self, round: usize) -> Result<TransitionTable> {
        complete_table(&self.select(&self.rounds[round].train), &self.taxonomy)
    }

    fn round(&self, index: usize) -> Result<&crate::annotations::Round> {
        self.rounds
            .get(index)
            .ok_or_else(|| Error::Split(format!("round {index} of {}", self.rounds.len())))
    }
}

fn labeled(
    cfg: &RunConfig,
    tracks: &[AnnotationTrack],
    table: &TransitionTable,
) -> Result<(Vec<LabeledVideo>, Vec<SpiTrack>)> {
    let feat_dir = &cfg.data()?.features;
    let mut videos = Vec::with_capacity(tracks.len());
    let mut targets = Vec::with_capacity(tracks.len());
    for track in tracks {
        let features = read_prfv(feat_dir.join(format!("{}.prfv", track.video_id())))?;
        let spi = build_spi_targets(track, table, cfg.spi_mode)?;
        videos.push(LabeledVideo::new(features, track, Some(&spi))?);
        targets.push(spi);
    }
    Ok((videos, targets))
}

fn report(
    cfg: &RunConfig,
    model: &Model,
    corpus: &Corpus,
    tracks: &[AnnotationTrack],
    videos: &[LabeledVideo],
    targets: &[SpiTrack],
    split: &str,
) -> Result<(EvalReport, Vec<Vec<Prediction>>)> {
    let summary = evaluate(model, videos, Execution::Parallel)?;
    let spi = model.config().spi_head.then_some(targets);
    let rep = per_video_report(
        tracks,
        &summary.predictions,
        spi,
        &corpus.taxonomy,
        split,
        cfg.macro_mode,
    )?;
    Ok((rep, summary.predictions))
}

fn write_report(dir: &Path, rep: &EvalReport) -> Result<()> {
    write_file(&dir.join("report.csv"), rep.to_csv().as_bytes())?;
    write_file(&dir.join("report.txt"), rep.to_string().as_bytes())
}

fn cmd_train(cfg: &RunConfig, only: Option<usize>) -> Result<()> {
    cfg.model.validate()?;
    let corpus = Corpus::load(cfg)?;
    write_file(&cfg.output.join("run.toml"), cfg.to_toml().as_bytes())?;
    let rounds: Vec<usize> = match only {
        Some(r) => vec![corpus.round(r)?.index],
        None => (0..corpus.rounds.len()).collect(),
    };
    for r in rounds {
        let round = corpus.round(r)?;
        let dir = round_dir(cfg, r);
        let table = corpus.table(r)?;
        write_file(&dir.join("spi_table.csv"), table.to_csv().as_bytes())?;
        let train_tracks = corpus.select(&round.train);
        let eval_tracks = corpus.select(&round.eval);
        let (train, _) = labeled(cfg, &train_tracks, &table)?;
        let (eval, targets) = labeled(cfg, &eval_tracks, &table)?;
        let model = Model::build(cfg.model.clone(), cfg.seed)?;
        let opts = FitOptions {
            loss: cfg.loss.clone(),
            optim: cfg.optim.clone(),
            seed: cfg.seed,
            exec: Execution::Parallel,
        };
        let result = fit(model, &train, &eval, &opts, |e| {
            let spi = e
                .spi_err
                .map_or_else(String::new, |s| format!(" spi_err {s:.2}"));
            eprintln!(
                "round {r} epoch {} lr {:.1e} loss {:.4} acc {:.2} jaccard {:.2}{spi}",
                e.epoch, e.lr, e.train_loss, e.eval_acc, e.eval_jaccard
            );
        })?;
        write_log_csv(dir.join("train_log.csv"), &result.log)?;
        save_checkpoint(dir.join("last.ckpt"), &result.model)?;
        save_checkpoint(dir.join("best.ckpt"), &result.best)?;
        let split = format!("round{r}");
        let (rep, _) = report(
            cfg,
            &result.model,
            &corpus,
            &eval_tracks,
            &eval,
            &targets,
            &split,
        )?;
        write_report(&dir, &rep)?;
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, r: usize, checkpoint: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let corpus = Corpus::load(cfg)?;
    if model.config().phases != corpus.taxonomy.len() {
        return Err(Error::Config(format!(
            "checkpoint predicts {} phases, taxonomy has {}",
            model.config().phases,
            corpus.taxonomy.len()
        )));
    }
    let round = corpus.round(r)?;
    let table = corpus.table(r)?;
    let tracks = corpus.select(&round.eval);
    let (videos, targets) = labeled(cfg, &tracks, &table)?;
    let (rep, predictions) = report(
        cfg,
        &model,
        &corpus,
        &tracks,
        &videos,
        &targets,
        &format!("round{r}"),
    )?;
    let dir = round_dir(cfg, r).join("eval");
    write_report(&dir, &rep)?;
    for ((track, preds), target) in tracks.iter().zip(&predictions).zip(&targets) {
        let pred: Vec<usize> = preds.iter().map(Prediction::phase).collect();
        let spi_hat: Option<Vec<f64>> = preds.iter().map(|p| p.spi_hat.map(f64::from)).collect();
        let spi_target = spi_hat.as_ref().map(|_| target.values.as_slice());
        let id = track.video_id();
        let svg = ribbon_svg(track.labels(), &pred, spi_hat.as_deref(), spi_target)?;
        let csv = ribbon_csv(track.labels(), &pred, spi_hat.as_deref(), spi_target)?;
        write_file(
            &dir.join("ribbons").join(format!("{id}.svg")),
            svg.as_bytes(),
        )?;
        write_file(
            &dir.join("ribbons").join(format!("{id}.csv")),
            csv.as_bytes(),
        )?;
    }
    print!("{rep}");
    Ok(())
}

/// `video_id,t,phase,spi_hat,p0..` with one row per second.
pub fn predictions_csv(predictions: &[Prediction]) -> Result<String> {
    let phases = predictions.first().map_or(0, |p| p.probs.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "video_id".to_string(),
        "t".into(),
        "phase".into(),
        "spi_hat".into(),
    ];
    header.extend((0..phases).map(|i| format!("p{i}")));
    w.write_record(&header)?;
    for p in predictions {
        let mut row = vec![
            p.video_id.clone(),
            p.t.to_string(),
            p.phase().to_string(),
            p.spi_hat.map_or_else(String::new, |s| s.to_string()),
        ];
        row.extend(p.probs.iter().map(f32::to_string));
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(
        w.into_inner()
            .map_err(|e| Error::io("<predictions>", e.into_error()))?,
    )
    .expect("utf-8"))
}
