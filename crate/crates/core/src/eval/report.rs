use std::fmt;

use serde::{Deserialize, Serialize};

use super::metrics::{confusion, mean_std, metrics, ConfusionMatrix, PhaseMetrics};
use crate::annotations::AnnotationTrack;
use crate::error::{Error, Result};
use crate::model::{PhaseTaxonomy, Prediction};
use crate::spi::{spi_output_error, SpiTrack};

/// How macro precision/recall/Jaccard aggregate across videos.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacroMode {
    /// One confusion matrix over all frames.
    #[default]
    Pooled,
    /// Macro values per video, then averaged over videos.
    PerVideo,
}

impl MacroMode {
    fn as_str(self) -> &'static str {
        match self {
            MacroMode::Pooled => "pooled",
            MacroMode::PerVideo => "per_video",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoScore {
    pub video_id: String,
    pub frames: u64,
    pub accuracy: f64,
}

/// Evaluation of one split. Rates are percentages.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub split: String,
    pub macro_mode: MacroMode,
    pub phase_names: Vec<String>,
    pub frames: u64,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_jaccard: f64,
    pub per_phase: Vec<PhaseMetrics>,
    pub per_video: Vec<VideoScore>,
    pub video_accuracy_mean: f64,
    pub video_accuracy_std: f64,
    pub spi_error: Option<f64>,
}

fn check_coverage(track: &AnnotationTrack, preds: &[Prediction]) -> Result<()> {
    let gap = |message: String| Error::Track {
        video_id: track.video_id().to_string(),
        message,
    };
    if preds.len() != track.len() {
        return Err(gap(format!(
            "{} predictions for {} annotated seconds",
            preds.len(),
            track.len()
        )));
    }
    for (t, p) in preds.iter().enumerate() {
        if p.t != t || p.video_id != track.video_id() {
            return Err(gap(format!(
                "prediction {t} is for {} at t={}",
                p.video_id, p.t
            )));
        }
    }
    Ok(())
}

/// Aggregates per-second predictions against annotations. `predictions[k]`
/// covers `tracks[k]`; SPI error is pooled over frames when targets are given
/// and every prediction carries an estimate.
pub fn per_video_report(
    tracks: &[AnnotationTrack],
    predictions: &[Vec<Prediction>],
    spi_targets: Option<&[SpiTrack]>,
    taxonomy: &PhaseTaxonomy,
    split: &str,
    mode: MacroMode,
) -> Result<EvalReport> {
    if tracks.is_empty() {
        return Err(Error::Empty("no videos to evaluate".into()));
    }
    if tracks.len() != predictions.len() {
        return Err(Error::Length(format!(
            "{} tracks, {} prediction lists",
            tracks.len(),
            predictions.len()
        )));
    }
    let p = taxonomy.len();
    let mut pooled = ConfusionMatrix::new(p);
    let mut per_video = Vec::with_capacity(tracks.len());
    let mut video_macros = Vec::new();
    for (track, preds) in tracks.iter().zip(predictions) {
        check_coverage(track, preds)?;
        let pred: Vec<usize> = preds.iter().map(Prediction::phase).collect();
        let cm = confusion(track.labels(), &pred, p)?;
        let m = metrics(&cm)?;
        per_video.push(VideoScore {
            video_id: track.video_id().to_string(),
            frames: cm.total(),
            accuracy: m.accuracy,
        });
        video_macros.push((m.macro_precision, m.macro_recall, m.macro_jaccard));
        pooled.merge(&cm);
    }
    let m = metrics(&pooled)?;
    let (macro_precision, macro_recall, macro_jaccard) = match mode {
        MacroMode::Pooled => (m.macro_precision, m.macro_recall, m.macro_jaccard),
        MacroMode::PerVideo => {
            let n = video_macros.len() as f64;
            let sum = video_macros
                .iter()
                .fold((0.0, 0.0, 0.0), |a, v| (a.0 + v.0, a.1 + v.1, a.2 + v.2));
            (sum.0 / n, sum.1 / n, sum.2 / n)
        }
    };
    let accs: Vec<f64> = per_video.iter().map(|v| v.accuracy).collect();
    let (video_accuracy_mean, video_accuracy_std) = mean_std(&accs);

    let spi_error = match spi_targets {
        Some(targets) => {
            if targets.len() != tracks.len() {
                return Err(Error::Length(format!(
                    "{} SPI tracks for {} videos",
                    targets.len(),
                    tracks.len()
                )));
            }
            let mut est = Vec::new();
            let mut tgt = Vec::new();
            let mut complete = true;
            for (preds, target) in predictions.iter().zip(targets) {
                if target.values.len() != preds.len() {
                    return Err(Error::Length(format!(
                        "SPI targets of {} do not cover predictions",
                        target.video_id
                    )));
                }
                for (pr, &v) in preds.iter().zip(&target.values) {
                    match pr.spi_hat {
                        Some(s) => est.push(s as f64),
                        None => complete = false,
                    }
                    tgt.push(v);
                }
            }
            if complete {
                Some(spi_output_error(&est, &tgt)?)
            } else {
                None
            }
        }
        None => None,
    };

    Ok(EvalReport {
        split: split.to_string(),
        macro_mode: mode,
        phase_names: taxonomy.names().to_vec(),
        frames: pooled.total(),
        accuracy: m.accuracy,
        macro_precision,
        macro_recall,
        macro_jaccard,
        per_phase: m.per_phase,
        per_video,
        video_accuracy_mean,
        video_accuracy_std,
        spi_error,
    })
}

impl EvalReport {
    /// Long format: `section,key,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut row = |section: &str, key: &str, metric: &str, value: String| {
            w.write_record([section, key, metric, &value])
                .expect("in-memory write");
        };
        row("section", "key", "metric", "value".into());
        row("meta", "split", "name", self.split.clone());
        row("meta", "macro", "mode", self.macro_mode.as_str().into());
        row("overall", "all", "frames", self.frames.to_string());
        row("overall", "all", "accuracy", self.accuracy.to_string());
        row(
            "overall",
            "all",
            "macro_precision",
            self.macro_precision.to_string(),
        );
        row(
            "overall",
            "all",
            "macro_recall",
            self.macro_recall.to_string(),
        );
        row(
            "overall",
            "all",
            "macro_jaccard",
            self.macro_jaccard.to_string(),
        );
        row(
            "overall",
            "all",
            "video_accuracy_mean",
            self.video_accuracy_mean.to_string(),
        );
        row(
            "overall",
            "all",
            "video_accuracy_std",
            self.video_accuracy_std.to_string(),
        );
        if let Some(e) = self.spi_error {
            row("overall", "all", "spi_error", e.to_string());
        }
        for (name, m) in self.phase_names.iter().zip(&self.per_phase) {
            row("phase", name, "support", m.support.to_string());
            for (metric, v) in [
                ("precision", m.precision),
                ("recall", m.recall),
                ("jaccard", m.jaccard),
            ] {
                if let Some(v) = v {
                    row("phase", name, metric, v.to_string());
                }
            }
        }
        for v in &self.per_video {
            row("video", &v.video_id, "frames", v.frames.to_string());
            row("video", &v.video_id, "accuracy", v.accuracy.to_string());
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut report = EvalReport {
            split: String::new(),
            macro_mode: MacroMode::Pooled,
            phase_names: Vec::new(),
            frames: 0,
            accuracy: f64::NAN,
            macro_precision: f64::NAN,
            macro_recall: f64::NAN,
            macro_jaccard: f64::NAN,
            per_phase: Vec::new(),
            per_video: Vec::new(),
            video_accuracy_mean: f64::NAN,
            video_accuracy_std: f64::NAN,
            spi_error: None,
        };
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |m: String| Error::Annotation {
                source_name: "report".into(),
                row: i + 1,
                message: m,
            };
            if rec.len() != 4 {
                return Err(bad(format!("expected 4 fields, got {}", rec.len())));
            }
            let (section, key, metric, value) = (&rec[0], &rec[1], &rec[2], &rec[3]);
            let num = || {
                value
                    .parse::<f64>()
                    .map_err(|_| bad(format!("invalid number {value:?}")))
            };
            let int = || {
                value
                    .parse::<u64>()
                    .map_err(|_| bad(format!("invalid count {value:?}")))
            };
            match (section, metric) {
                ("meta", "name") => report.split = value.to_string(),
                ("meta", "mode") => {
                    report.macro_mode = match value {
                        "pooled" => MacroMode::Pooled,
                        "per_video" => MacroMode::PerVideo,
                        other => return Err(bad(format!("unknown macro mode {other:?}"))),
                    }
                }
                ("overall", "frames") => report.frames = int()?,
                ("overall", "accuracy") => report.accuracy = num()?,
                ("overall", "macro_precision") => report.macro_precision = num()?,
                ("overall", "macro_recall") => report.macro_recall = num()?,
                ("overall", "macro_jaccard") => report.macro_jaccard = num()?,
                ("overall", "video_accuracy_mean") => report.video_accuracy_mean = num()?,
                ("overall", "video_accuracy_std") => report.video_accuracy_std = num()?,
                ("overall", "spi_error") => report.spi_error = Some(num()?),
                ("phase", "support") => {
                    report.phase_names.push(key.to_string());
                    report.per_phase.push(PhaseMetrics {
                        support: int()?,
                        precision: None,
                        recall: None,
                        jaccard: None,
                    });
                }
                ("phase", m @ ("precision" | "recall" | "jaccard")) => {
                    let last = report
                        .per_phase
                        .last_mut()
                        .filter(|_| report.phase_names.last().map(String::as_str) == Some(key))
                        .ok_or_else(|| bad(format!("{m} for {key:?} before its support row")))?;
                    let v = Some(num()?);
                    match m {
                        "precision" => last.precision = v,
                        "recall" => last.recall = v,
                        _ => last.jaccard = v,
                    }
                }
                ("video", "frames") => report.per_video.push(VideoScore {
                    video_id: key.to_string(),
                    frames: int()?,
                    accuracy: f64::NAN,
                }),
                ("video", "accuracy") => {
                    let last = report
                        .per_video
                        .last_mut()
                        .filter(|v| v.video_id == key)
                        .ok_or_else(|| {
                            bad(format!("accuracy for {key:?} before its frames row"))
                        })?;
                    last.accuracy = num()?;
                }
                _ => return Err(bad(format!("unknown entry {section}/{metric}"))),
            }
        }
        Ok(report)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "split: {} ({} frames, {} videos)",
            self.split,
            self.frames,
            self.per_video.len()
        )?;
        writeln!(f, "accuracy:  {:.2}%", self.accuracy)?;
        writeln!(
            f,
            "per-video: {:.2} +/- {:.2}%",
            self.video_accuracy_mean, self.video_accuracy_std
        )?;
        writeln!(
            f,
            "macro ({}): precision {:.2}%  recall {:.2}%  jaccard {:.2}%",
            self.macro_mode.as_str(),
            self.macro_precision,
            self.macro_recall,
            self.macro_jaccard
        )?;
        match self.spi_error {
            Some(e) => writeln!(f, "SPI error: {e:.2}%")?,
            None => writeln!(f, "SPI error: -")?,
        }
        let width = self
            .phase_names
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(5)
            .max(5);
        writeln!(
            f,
            "{:<width$}  {:>8}  {:>9}  {:>7}  {:>7}",
            "phase", "support", "precision", "recall", "jaccard"
        )?;
        for (name, m) in self.phase_names.iter().zip(&self.per_phase) {
            writeln!(
                f,
                "{:<width$}  {:>8}  {:>9}  {:>7}  {:>7}",
                name,
                m.support,
                opt(m.precision),
                opt(m.recall),
                opt(m.jaccard)
            )?;
        }
        Ok(())
    }
}
