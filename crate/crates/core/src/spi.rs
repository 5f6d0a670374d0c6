//! Surgical Progress Index: targets, transition tables, and output error.
//!
//! A complete recording has SPI `t / T`. For recordings missing phases at
//! the start or end, the average duration fraction `f_i = b_i − b_{i−1}` of
//! each phase (from complete recordings) fills the gap: the track starts at
//! the summed fractions of the missing leading phases and covers the span
//! left over by all missing phases.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotations::AnnotationTrack;
use crate::error::{Error, Result};
use crate::model::PhaseTaxonomy;

/// How missing phases adjust the progress target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpiMode {
    /// `offset + (t/T)·span`; stays within [0, 1].
    #[default]
    Scaled,
    /// `t/T + Σ f_i` over every missing phase; may exceed 1.
    Literal,
}

/// Average cumulative progress at the end of each phase.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionTable {
    taxonomy: PhaseTaxonomy,
    /// `b_1 ..= b_P`; `b_0 = 0` is implicit.
    boundaries: Vec<f64>,
}

impl TransitionTable {
    /// Boundaries must increase strictly and end at 1 (within 1e-9).
    pub fn new(taxonomy: PhaseTaxonomy, boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.len() != taxonomy.len() {
            return Err(Error::PhaseSet(format!(
                "{} boundaries for {} phases",
                boundaries.len(),
                taxonomy.len()
            )));
        }
        let mut prev = 0.0;
        for (i, &b) in boundaries.iter().enumerate() {
            if !b.is_finite() || b <= prev {
                return Err(Error::PhaseSet(format!(
                    "boundary {} = {b} does not increase past {prev}",
                    i + 1
                )));
            }
            prev = b;
        }
        if (prev - 1.0).abs() > 1e-9 {
            return Err(Error::PhaseSet(format!(
                "last boundary is {prev}, expected 1"
            )));
        }
        Ok(TransitionTable {
            taxonomy,
            boundaries,
        })
    }

    pub fn taxonomy(&self) -> &PhaseTaxonomy {
        &self.taxonomy
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Per-phase duration fractions `f_i`.
    pub fn fractions(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.boundaries
            .iter()
            .map(|&b| {
                let f = b - prev;
                prev = b;
                f
            })
            .collect()
    }

    /// Header of phase names, then one row of boundaries.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.taxonomy.names())
            .expect("in-memory write");
        w.write_record(self.boundaries.iter().map(|b| b.to_string()))
            .expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let names: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let taxonomy = PhaseTaxonomy::new(names)?;
        let row = r
            .records()
            .next()
            .ok_or_else(|| Error::Empty("transition table has no boundary row".into()))??;
        let boundaries = row
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::PhaseSet(format!("invalid boundary {v:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(taxonomy, boundaries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// Per-second progress targets of one recording.
#[derive(Clone, Debug, PartialEq)]
pub struct SpiTrack {
    pub video_id: String,
    pub values: Vec<f64>,
}

/// `t / T`.
pub fn spi_complete(t: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::OutOfRange("recording length is zero".into()));
    }
    if t > total {
        return Err(Error::OutOfRange(format!("t={t} beyond length {total}")));
    }
    Ok(t as f64 / total as f64)
}

/// Table of mean phase-end fractions over complete tracks.
pub fn transition_table(
    tracks: &[AnnotationTrack],
    taxonomy: &PhaseTaxonomy,
) -> Result<TransitionTable> {
    if tracks.is_empty() {
        return Err(Error::Empty(
            "no complete tracks for a transition table".into(),
        ));
    }
    let p = taxonomy.len();
    let mut sums = vec![0.0f64; p];
    for track in tracks {
        if !track.is_complete(p) {
            return Err(Error::Track {
                video_id: track.video_id().to_string(),
                message: "missing phases; only complete tracks define transitions".into(),
            });
        }
        let total = track.len() as f64;
        for b in track.blocks() {
            sums[b.phase] += b.end as f64 / total;
        }
    }
    let n = tracks.len() as f64;
    let mut boundaries: Vec<f64> = sums.into_iter().map(|s| s / n).collect();
    boundaries[p - 1] = 1.0;
    TransitionTable::new(taxonomy.clone(), boundaries)
}

/// Progress at `t` of a `total`-second recording containing only `present`
/// (a contiguous, increasing run of phase indices).
pub fn spi_adjusted(
    t: usize,
    total: usize,
    present: &[usize],
    table: &TransitionTable,
    mode: SpiMode,
) -> Result<f64> {
    let base = spi_complete(t, total)?;
    let p = table.taxonomy().len();
    let (&first, &last) = match (present.first(), present.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::PhaseSet("no phases present".into())),
    };
    if last >= p {
        return Err(Error::PhaseSet(format!("unknown phase index {last}")));
    }
    if present.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::PhaseSet(format!(
            "present phases {present:?} are not contiguous"
        )));
    }
    let f = table.fractions();
    let leading: f64 = f[..first].iter().sum();
    let trailing: f64 = f[last + 1..].iter().sum();
    Ok(match mode {
        SpiMode::Scaled => leading + base * (1.0 - leading - trailing),
        SpiMode::Literal => base + leading + trailing,
    })
}

/// Targets for every second of `track`.
pub fn build_spi_targets(
    track: &AnnotationTrack,
    table: &TransitionTable,
    mode: SpiMode,
) -> Result<SpiTrack> {
    let total = track.len();
    let present = track.present_phases();
    let complete = track.is_complete(table.taxonomy().len());
    let values = (0..total)
        .map(|t| {
            if complete {
                spi_complete(t, total)
            } else {
                spi_adjusted(t, total, &present, table, mode)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpiTrack {
        video_id: track.video_id().to_string(),
        values,
    })
}

/// `100 · mean |pred − target|`.
pub fn spi_output_error(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Length(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("no SPI values to compare".into()));
    }
    let sum: f64 = pred.iter().zip(target).map(|(a, b)| (a - b).abs()).sum();
    Ok(100.0 * sum / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acl_table() -> TransitionTable {
        TransitionTable::new(
            PhaseTaxonomy::acl27(),
            vec![0.073, 0.309, 0.534, 0.765, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn complete_endpoints() {
        assert_eq!(spi_complete(0, 600).unwrap(), 0.0);
        assert_eq!(spi_complete(600, 600).unwrap(), 1.0);
        assert_eq!(spi_complete(300, 600).unwrap(), 0.5);
        assert!(spi_complete(0, 0).is_err());
    }

    #[test]
    fn uniform_track_gives_fifths() {
        let t = AnnotationTrack::from_blocks("u", &[(0, 2), (1, 2), (2, 2), (3, 2), (4, 2)], 5)
            .unwrap();
        let table = transition_table(&[t], &PhaseTaxonomy::acl27()).unwrap();
        assert_eq!(table.boundaries(), &[0.2, 0.4, 0.6, 0.8, 1.0]);
    }

    #[test]
    fn mean_of_two_boundaries() {
        let tax = PhaseTaxonomy::new(["a", "b"]).unwrap();
        let a = AnnotationTrack::from_blocks("a", &[(0, 1), (1, 9)], 2).unwrap();
        let b = AnnotationTrack::from_blocks("b", &[(0, 2), (1, 8)], 2).unwrap();
        let table = transition_table(&[a, b], &tax).unwrap();
        assert!((table.boundaries()[0] - 0.15).abs() < 1e-12);
        let partial = AnnotationTrack::from_blocks("c", &[(0, 2)], 2).unwrap();
        assert!(transition_table(&[partial], &tax).is_err());
    }

    #[test]
    fn missing_first_phase() {
        let table = acl_table();
        let present = [1, 2, 3, 4];
        let at = |t| spi_adjusted(t, 1000, &present, &table, SpiMode::Scaled).unwrap();
        assert!((at(0) - 0.073).abs() < 1e-12);
        assert!((at(1000) - 1.0).abs() < 1e-12);
        assert!((at(500) - 0.5365).abs() < 1e-12);
        let literal = spi_adjusted(1000, 1000, &present, &table, SpiMode::Literal).unwrap();
        assert!((literal - 1.073).abs() < 1e-12);
    }

    #[test]
    fn missing_last_phase_ends_at_its_boundary() {
        let table = acl_table();
        let track =
            AnnotationTrack::from_blocks("v", &[(0, 10), (1, 10), (2, 10), (3, 10)], 5).unwrap();
        let s = build_spi_targets(&track, &table, SpiMode::Scaled).unwrap();
        assert_eq!(s.values[0], 0.0);
        let endpoint =
            spi_adjusted(40, 40, &track.present_phases(), &table, SpiMode::Scaled).unwrap();
        assert!((endpoint - 0.765).abs() < 1e-12);
        assert!(s.values.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn complete_targets_are_fractions() {
        let track = AnnotationTrack::from_blocks("v", &[(0, 2), (1, 2), (2, 2), (3, 2), (4, 2)], 5)
            .unwrap();
        let s = build_spi_targets(&track, &acl_table(), SpiMode::Scaled).unwrap();
        let expected: Vec<f64> = (0..10).map(|t| t as f64 / 10.0).collect();
        assert_eq!(s.values, expected);
    }

    #[test]
    fn invalid_present_sets() {
        let table = acl_table();
        assert!(spi_adjusted(0, 10, &[0, 2], &table, SpiMode::Scaled).is_err());
        assert!(spi_adjusted(0, 10, &[], &table, SpiMode::Scaled).is_err());
        assert!(spi_adjusted(0, 10, &[5], &table, SpiMode::Scaled).is_err());
    }

    #[test]
    fn output_error() {
        assert_eq!(spi_output_error(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0);
        let e = spi_output_error(&[0.1, 0.6], &[0.2, 0.7]).unwrap();
        assert!((e - 10.0).abs() < 1e-9);
        assert!(spi_output_error(&[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = acl_table();
        let text = t.to_csv();
        assert!(text.starts_with("Preparation,Diagnosis"));
        assert_eq!(TransitionTable::from_csv(&text).unwrap(), t);
        assert!(
            TransitionTable::new(PhaseTaxonomy::acl27(), vec![0.1, 0.1, 0.5, 0.7, 1.0]).is_err()
        );
    }
}
