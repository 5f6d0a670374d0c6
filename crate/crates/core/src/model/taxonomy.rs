use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered phase names of a procedure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct PhaseTaxonomy {
    names: Vec<String>,
}

impl PhaseTaxonomy {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::PhaseSet(format!(
                "need at least 2 phases, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.trim().is_empty() {
                return Err(Error::PhaseSet("empty phase name".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::PhaseSet(format!("duplicate phase {n:?}")));
            }
        }
        Ok(PhaseTaxonomy { names })
    }

    /// Five-phase arthroscopic ACL reconstruction workflow.
    pub fn acl27() -> Self {
        Self::new([
            "Preparation",
            "Diagnosis",
            "Femoral Tunnel Creation",
            "Tibial Tunnel Creation",
            "ACL Reconstruction",
        ])
        .expect("static taxonomy")
    }

    /// Seven-phase laparoscopic cholecystectomy workflow.
    pub fn cholec80() -> Self {
        Self::new([
            "Preparation",
            "CalotTriangleDissection",
            "ClippingCutting",
            "GallbladderDissection",
            "GallbladderPackaging",
            "CleaningCoagulation",
            "GallbladderRetraction",
        ])
        .expect("static taxonomy")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for PhaseTaxonomy {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<PhaseTaxonomy> for Vec<String> {
    fn from(t: PhaseTaxonomy) -> Self {
        t.names
    }
}
