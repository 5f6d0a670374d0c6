//! Phase annotation tracks: parsing, validation, statistics, splits, and a
//! seeded synthetic corpus generator.

mod manifest;
mod splits;
mod stats;
mod synth;

pub use manifest::{read_manifest, write_manifest, ManifestEntry};
pub use splits::{make_splits, Round, SplitPlan};
pub use stats::{dataset_stats, DatasetStats, PhaseStats};
pub use synth::{synth_generate, SynthSpec, SynthVideo};

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::PhaseTaxonomy;

/// Contiguous run of one phase, `start..end` in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhaseBlock {
    pub phase: usize,
    pub start: usize,
    pub end: usize,
}

impl PhaseBlock {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Per-second phase labels of one recording.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotationTrack {
    video_id: String,
    labels: Vec<usize>,
    blocks: Vec<PhaseBlock>,
}

/// Splits `labels` into runs and checks that phases strictly increase from
/// block to block, so no phase repeats. On failure returns the index of
/// the offending label.
fn blocks_of(labels: &[usize]) -> std::result::Result<Vec<PhaseBlock>, (usize, String)> {
    let mut blocks: Vec<PhaseBlock> = Vec::new();
    for (t, &phase) in labels.iter().enumerate() {
        match blocks.last_mut() {
            Some(b) if b.phase == phase => b.end = t + 1,
            Some(b) if phase < b.phase => {
                let prev = b.phase;
                return Err((
                    t,
                    format!("phase {phase} after phase {prev} breaks block order"),
                ));
            }
            _ => blocks.push(PhaseBlock {
                phase,
                start: t,
                end: t + 1,
            }),
        }
    }
    Ok(blocks)
}

impl AnnotationTrack {
    /// Validates `labels` against a taxonomy of `phases` entries.
    pub fn new(video_id: impl Into<String>, labels: Vec<usize>, phases: usize) -> Result<Self> {
        let video_id = video_id.into();
        let fail = |message: String| Error::Track {
            video_id: video_id.clone(),
            message,
        };
        if labels.is_empty() {
            return Err(fail("track has no frames".into()));
        }
        if let Some((t, &p)) = labels.iter().enumerate().find(|(_, &p)| p >= phases) {
            return Err(fail(format!("label {p} at t={t} outside {phases} phases")));
        }
        let blocks = blocks_of(&labels).map_err(|(t, m)| fail(format!("t={t}: {m}")))?;
        Ok(AnnotationTrack {
            video_id,
            labels,
            blocks,
        })
    }

    /// Track from consecutive `(phase, length)` blocks.
    pub fn from_blocks(
        video_id: impl Into<String>,
        blocks: &[(usize, usize)],
        phases: usize,
    ) -> Result<Self> {
        let labels = blocks
            .iter()
            .flat_map(|&(p, n)| std::iter::repeat_n(p, n))
            .collect();
        Self::new(video_id, labels, phases)
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Duration `T` in seconds.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn blocks(&self) -> &[PhaseBlock] {
        &self.blocks
    }

    /// Phases that occur, in order.
    pub fn present_phases(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.phase).collect()
    }

    pub fn block(&self, phase: usize) -> Option<&PhaseBlock> {
        self.blocks.iter().find(|b| b.phase == phase)
    }

    pub fn is_complete(&self, phases: usize) -> bool {
        self.blocks.len() == phases
    }
}

fn annotation_error(source: &str, row: usize, message: impl Into<String>) -> Error {
    Error::Annotation {
        source_name: source.to_string(),
        row,
        message: message.into(),
    }
}

/// Parses `video_id,t,phase_name` rows (an optional header is skipped).
/// Reported rows count data rows from 1.
pub fn parse_annotations(
    input: impl Read,
    source: &str,
    taxonomy: &PhaseTaxonomy,
) -> Result<AnnotationTrack> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let mut video_id: Option<String> = None;
    let mut labels = Vec::new();
    let mut row = 0usize;
    let mut seen: Vec<bool> = vec![false; taxonomy.len()];
    let mut current: Option<usize> = None;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if i == 0 && record.get(0) == Some("video_id") && record.get(1) == Some("t") {
            continue;
        }
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        row += 1;
        if record.len() != 3 {
            return Err(annotation_error(
                source,
                row,
                format!("expected 3 fields, got {}", record.len()),
            ));
        }
        let id = &record[0];
        match &video_id {
            None => video_id = Some(id.to_string()),
            Some(v) if v != id => {
                return Err(annotation_error(
                    source,
                    row,
                    format!("video id {id:?} differs from {v:?}"),
                ));
            }
            _ => {}
        }
        let t: usize = record[1]
            .parse()
            .map_err(|_| annotation_error(source, row, format!("invalid time {:?}", &record[1])))?;
        if t != labels.len() {
            return Err(annotation_error(
                source,
                row,
                format!("gap: expected t={}, found t={t}", labels.len()),
            ));
        }
        let phase = taxonomy.index_of(&record[2]).ok_or_else(|| {
            annotation_error(source, row, format!("unknown phase {:?}", &record[2]))
        })?;
        if current != Some(phase) {
            if let Some(prev) = current {
                if phase < prev || seen[phase] {
                    return Err(annotation_error(
                        source,
                        row,
                        format!(
                            "{:?} block after {:?} is out of order",
                            taxonomy.name(phase),
                            taxonomy.name(prev)
                        ),
                    ));
                }
            }
            seen[phase] = true;
            current = Some(phase);
        }
        labels.push(phase);
    }
    let video_id = video_id.ok_or_else(|| annotation_error(source, 0, "no annotation rows"))?;
    AnnotationTrack::new(video_id, labels, taxonomy.len())
}

pub fn parse_annotation_file(
    path: impl AsRef<Path>,
    taxonomy: &PhaseTaxonomy,
) -> Result<AnnotationTrack> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(file, &path.display().to_string(), taxonomy)
}

/// Writes `track` with a `video_id,t,phase` header.
pub fn write_annotations(
    out: impl Write,
    track: &AnnotationTrack,
    taxonomy: &PhaseTaxonomy,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["video_id", "t", "phase"])?;
    for (t, &p) in track.labels().iter().enumerate() {
        w.write_record([track.video_id(), &t.to_string(), taxonomy.name(p)])?;
    }
    w.flush().map_err(|e| Error::io("<annotations>", e))
}

pub fn write_annotation_file(
    path: impl AsRef<Path>,
    track: &AnnotationTrack,
    taxonomy: &PhaseTaxonomy,
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_annotations(std::io::BufWriter::new(file), track, taxonomy)
}

/// Files with `extension` in `dir`, sorted by name.
pub fn list_files(dir: impl AsRef<Path>, extension: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == extension) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Parses every `*.csv` in `dir`, in file-name order.
pub fn load_annotation_dir(
    dir: impl AsRef<Path>,
    taxonomy: &PhaseTaxonomy,
) -> Result<Vec<AnnotationTrack>> {
    let dir = dir.as_ref();
    let files = list_files(dir, "csv")?;
    if files.is_empty() {
        return Err(Error::Empty(format!(
            "no annotations found in {}",
            dir.display()
        )));
    }
    files
        .iter()
        .map(|f| parse_annotation_file(f, taxonomy))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<AnnotationTrack> {
        parse_annotations(text.as_bytes(), "mem", &PhaseTaxonomy::acl27())
    }

    #[test]
    fn three_rows_one_phase() {
        let t = parse("v,0,Preparation\nv,1,Preparation\nv,2,Preparation\n").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.present_phases(), vec![0]);
    }

    #[test]
    fn gap_reports_row() {
        let err = parse("v,0,Preparation\nv,2,Preparation\n").unwrap_err();
        assert!(matches!(err, Error::Annotation { row: 2, .. }), "{err}");
    }

    #[test]
    fn out_of_order_and_unknown() {
        let err = parse("v,0,Diagnosis\nv,1,Preparation\n").unwrap_err();
        assert!(
            matches!(err, Error::Annotation { row: 2, ref message, .. } if message.contains("order"))
        );
        let err = parse("v,0,Diagnosis\nv,1,Preparation\nv,2,Diagnosis\n").unwrap_err();
        assert!(matches!(err, Error::Annotation { row: 2, .. }));
        let err = parse("video_id,t,phase\nv,0,Closing\n").unwrap_err();
        assert!(
            matches!(err, Error::Annotation { row: 1, ref message, .. } if message.contains("unknown"))
        );
        let err = parse("v,0,Diagnosis\nw,1,Diagnosis\n").unwrap_err();
        assert!(matches!(err, Error::Annotation { row: 2, .. }));
        assert!(parse("").is_err());
    }

    #[test]
    fn repeated_block_is_rejected() {
        let err = parse("v,0,Preparation\nv,1,Diagnosis\nv,2,Preparation\n").unwrap_err();
        assert!(matches!(err, Error::Annotation { row: 3, .. }));
        assert!(AnnotationTrack::new("x", vec![0, 1, 0], 5).is_err());
        assert!(AnnotationTrack::new("x", vec![1, 1, 3], 5).is_ok());
    }

    #[test]
    fn serialize_round_trip() {
        let tax = PhaseTaxonomy::acl27();
        let track = AnnotationTrack::from_blocks("vid", &[(1, 3), (2, 2), (4, 1)], 5).unwrap();
        let mut buf = Vec::new();
        write_annotations(&mut buf, &track, &tax).unwrap();
        let back = parse_annotations(&buf[..], "buf", &tax).unwrap();
        assert_eq!(back, track);
        assert_eq!(
            back.block(2),
            Some(&PhaseBlock {
                phase: 2,
                start: 3,
                end: 5
            })
        );
    }
}
