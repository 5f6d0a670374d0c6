use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotations::{SplitPlan, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::MacroMode;
use crate::model::{ModelConfig, PhaseTaxonomy};
use crate::spi::SpiMode;
use crate::training::{LossConfig, OptimConfig};

/// Locations of an annotated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of per-video annotation CSV files.
    pub annotations: PathBuf,
    /// Directory holding `<video_id>.prfv` feature files.
    pub features: PathBuf,
    /// Phase names, one per line, in workflow order. Defaults to the ACL
    /// five-phase taxonomy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<PathBuf>,
}

/// One run, as recorded in a TOML file. Every random choice derives from
/// `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub output: PathBuf,
    #[serde(default)]
    pub spi_mode: SpiMode,
    #[serde(default)]
    pub macro_mode: MacroMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default = "default_split")]
    pub split: SplitPlan,
}

fn default_split() -> SplitPlan {
    SplitPlan::CrossValidation { k: 5, seed: 0 }
}

impl RunConfig {
    /// Parses `text`; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text)
            .map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.output = base.join(&cfg.output);
        if let Some(data) = cfg.data.as_mut() {
            data.annotations = base.join(&data.annotations);
            data.features = base.join(&data.features);
            data.taxonomy = data.taxonomy.as_ref().map(|t| base.join(t));
        }
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    /// Reads and checks a config file. Referenced inputs must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = RunConfig::parse(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(data) = &cfg.data {
            let inputs = [
                Some(&data.annotations),
                Some(&data.features),
                data.taxonomy.as_ref(),
            ];
            for p in inputs.into_iter().flatten() {
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "referenced path {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(cfg)
    }

    /// Replaces the root seed everywhere it is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.split = self.split.clone().with_seed(seed);
        if let Some(s) = self.synth.as_mut() {
            s.seed = seed;
        }
    }

    pub fn apply(&mut self, ablation: &Ablation) {
        if let Some(on) = ablation.spi {
            self.model.spi_head = on;
            self.loss.spi_enabled = on;
        }
        if let Some(on) = ablation.stfeat {
            self.model.refiner_enabled = on;
        }
    }

    pub fn data(&self) -> Result<&DataConfig> {
        self.data
            .as_ref()
            .ok_or_else(|| Error::Config("missing [data] section".into()))
    }

    pub fn taxonomy(&self) -> Result<PhaseTaxonomy> {
        match self.data.as_ref().and_then(|d| d.taxonomy.as_ref()) {
            Some(path) => read_taxonomy(path),
            None => Ok(PhaseTaxonomy::acl27()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// One phase name per non-empty line.
pub fn read_taxonomy(path: &Path) -> Result<PhaseTaxonomy> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    PhaseTaxonomy::new(names)
}

/// Feature switches given as `spi=on|off,stfeat=on|off`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    pub spi: Option<bool>,
    pub stfeat: Option<bool>,
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut out = Ablation::default();
        for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| format!("expected key=on|off, got `{item}`"))?;
            let on = match value {
                "on" => true,
                "off" => false,
                _ => return Err(format!("`{key}` must be on or off, got `{value}`")),
            };
            let slot = match key {
                "spi" => &mut out.spi,
                "stfeat" => &mut out.stfeat,
                _ => return Err(format!("unknown ablation switch `{key}`")),
            };
            if slot.replace(on).is_some() {
                return Err(format!("`{key}` given twice"));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = RunConfig::parse("output = \"out\"\nseed = 4\n", Path::new("/base")).unwrap();
        assert_eq!(cfg.output, PathBuf::from("/base/out"));
        assert_eq!(cfg.model, ModelConfig::default());
        assert_eq!(cfg.split, SplitPlan::CrossValidation { k: 5, seed: 4 });
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let text = "output = \"out\"\n\n[model]\nd_model = 16\nwidth = 3\n";
        let msg = RunConfig::parse(text, Path::new("."))
            .unwrap_err()
            .to_string();
        assert!(msg.contains("width"), "{msg}");
        assert!(msg.contains("line 5"), "{msg}");
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::parse(
            "output = \"/o\"\n[split]\nmode = \"fixed\"\ntrain = 3\n",
            Path::new("/"),
        )
        .unwrap();
        cfg.synth = Some(SynthSpec::acl27(4, 0));
        cfg.set_seed(9);
        let back = RunConfig::parse(&cfg.to_toml(), Path::new("/")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn ablation_switches() {
        let a: Ablation = "spi=off,stfeat=on".parse().unwrap();
        assert_eq!(
            a,
            Ablation {
                spi: Some(false),
                stfeat: Some(true)
            }
        );
        assert!("spi=maybe".parse::<Ablation>().is_err());
        assert!("depth=on".parse::<Ablation>().is_err());
        assert!("spi=on,spi=off".parse::<Ablation>().is_err());
        let mut cfg = RunConfig::parse("output = \"o\"", Path::new(".")).unwrap();
        cfg.apply(&"spi=off,stfeat=off".parse().unwrap());
        assert!(!cfg.model.spi_head && !cfg.loss.spi_enabled && !cfg.model.refiner_enabled);
    }
}
