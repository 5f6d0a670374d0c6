//! Corpus manifest: `video_id,T_k,present_phases` with phases joined by `;`.

use std::fs;
use std::path::Path;

use super::AnnotationTrack;
use crate::error::{Error, Result};
use crate::model::PhaseTaxonomy;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub frames: usize,
    pub present_phases: Vec<String>,
}

impl ManifestEntry {
    pub fn of(track: &AnnotationTrack, taxonomy: &PhaseTaxonomy) -> Self {
        ManifestEntry {
            video_id: track.video_id().to_string(),
            frames: track.len(),
            present_phases: track
                .present_phases()
                .into_iter()
                .map(|p| taxonomy.name(p).to_string())
                .collect(),
        }
    }
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["video_id", "T_k", "present_phases"])?;
    for e in entries {
        w.write_record([
            &e.video_id,
            &e.frames.to_string(),
            &e.present_phases.join(";"),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |m: String| Error::Annotation {
            source_name: path.display().to_string(),
            row: i + 1,
            message: m,
        };
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", rec.len())));
        }
        let frames = rec[1]
            .parse()
            .map_err(|_| bad(format!("invalid T_k {:?}", &rec[1])))?;
        let present_phases = rec[2]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        out.push(ManifestEntry {
            video_id: rec[0].to_string(),
            frames,
            present_phases,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let tax = PhaseTaxonomy::acl27();
        let t = AnnotationTrack::from_blocks("a", &[(1, 3), (2, 4)], 5).unwrap();
        let e = ManifestEntry::of(&t, &tax);
        assert_eq!(
            e.present_phases,
            vec!["Diagnosis", "Femoral Tunnel Creation"]
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.csv");
        write_manifest(&p, std::slice::from_ref(&e)).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), vec![e]);
    }
}
