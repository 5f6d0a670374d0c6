use std::fmt;

use super::AnnotationTrack;
use crate::error::{Error, Result};
use crate::model::PhaseTaxonomy;

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseStats {
    pub name: String,
    /// Seconds summed over all videos.
    pub total_seconds: usize,
    /// Videos in which the phase occurs.
    pub videos: usize,
    /// `total_seconds / videos`, or 0 when the phase never occurs.
    pub average_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStats {
    pub phases: Vec<PhaseStats>,
    pub videos: usize,
    pub total_seconds: usize,
}

pub fn dataset_stats(tracks: &[AnnotationTrack], taxonomy: &PhaseTaxonomy) -> Result<DatasetStats> {
    if tracks.is_empty() {
        return Err(Error::Empty("no annotation tracks".into()));
    }
    let mut totals = vec![0usize; taxonomy.len()];
    let mut counts = vec![0usize; taxonomy.len()];
    for track in tracks {
        for b in track.blocks() {
            if b.phase >= taxonomy.len() {
                return Err(Error::PhaseSet(format!(
                    "{} uses phase {} outside the taxonomy",
                    track.video_id(),
                    b.phase
                )));
            }
            totals[b.phase] += b.len();
            counts[b.phase] += 1;
        }
    }
    let phases = taxonomy
        .names()
        .iter()
        .enumerate()
        .map(|(i, name)| PhaseStats {
            name: name.clone(),
            total_seconds: totals[i],
            videos: counts[i],
            average_seconds: if counts[i] == 0 {
                0.0
            } else {
                totals[i] as f64 / counts[i] as f64
            },
        })
        .collect();
    Ok(DatasetStats {
        phases,
        videos: tracks.len(),
        total_seconds: tracks.iter().map(AnnotationTrack::len).sum(),
    })
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .phases
            .iter()
            .map(|p| p.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        writeln!(
            f,
            "{:<width$}  {:>14}  {:>8}  {:>12}",
            "Phase", "Duration (s)", "# Videos", "Average (s)"
        )?;
        for p in &self.phases {
            writeln!(
                f,
                "{:<width$}  {:>14}  {:>8}  {:>12.1}",
                p.name, p.total_seconds, p.videos, p.average_seconds
            )?;
        }
        writeln!(f, "{} videos, {} s total", self.videos, self.total_seconds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_diagnosis_video() {
        let tax = PhaseTaxonomy::acl27();
        let t = AnnotationTrack::from_blocks("a", &[(1, 10)], 5).unwrap();
        let s = dataset_stats(&[t], &tax).unwrap();
        assert_eq!(s.phases[1].total_seconds, 10);
        assert_eq!(s.phases[1].videos, 1);
        assert_eq!(s.phases[1].average_seconds, 10.0);
        assert_eq!((s.phases[0].total_seconds, s.phases[0].videos), (0, 0));
    }

    #[test]
    fn mean_over_containing_videos() {
        let tax = PhaseTaxonomy::acl27();
        let a = AnnotationTrack::from_blocks("a", &[(0, 100), (1, 5)], 5).unwrap();
        let b = AnnotationTrack::from_blocks("b", &[(0, 200)], 5).unwrap();
        let s = dataset_stats(&[a, b], &tax).unwrap();
        assert_eq!(s.phases[0].average_seconds, 150.0);
        assert_eq!(s.phases[0].videos, 2);
        assert_eq!(s.total_seconds, 305);
        assert!(s.to_string().contains("Femoral Tunnel Creation"));
        assert!(dataset_stats(&[], &tax).is_err());
    }
}
