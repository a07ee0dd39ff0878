//! Run configuration: every tunable in one TOML document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{DatasetConfig, SynthSpec};
use crate::error::{Error, Result};
use crate::geom::CameraIntrinsics;
use crate::loss::LossWeights;
use crate::pose_opt::{OptimConfig, PerturbConfig};
use crate::renderer::RenderConfig;
use crate::scene_init::SceneBuildConfig;

/// Environment variable naming the directory that holds external datasets.
pub const DATA_ROOT_ENV: &str = "SPLATLOC_DATA_ROOT";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 picks one per core.
    pub threads: usize,
    pub render: RenderConfig,
    pub loss: LossWeights,
    pub optim: OptimConfig,
    pub perturb: PerturbConfig,
    pub scene: SceneBuildConfig,
    pub dataset: DatasetConfig,
    pub synth: SynthSpec,
    /// Replaces the dataset's own intrinsics when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraIntrinsics>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        self.perturb.validate()?;
        self.scene.validate()?;
        self.dataset.validate()?;
        self.synth.validate()?;
        if let Some(k) = &self.camera {
            k.validate()?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// The resolved configuration as `#`-prefixed TOML lines.
    pub fn header(&self) -> String {
        self.to_toml()
            .lines()
            .map(|l| format!("# {l}\n"))
            .collect()
    }
}

/// Dataset root from [`DATA_ROOT_ENV`], if set and non-empty.
pub fn data_root() -> Option<PathBuf> {
    std::env::var_os(DATA_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renderer::Precision;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(cfg.header().lines().all(|l| l.starts_with('#')));
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::from_toml("seed = 5\n[render]\nprecision = \"f32\"\n[optim]\nmax_iters = 300\n").unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.render.precision, Precision::F32);
        assert_eq!(cfg.optim.max_iters, 300);
        assert_eq!(cfg.loss, LossWeights::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml("sede = 1\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[optim]\nlr = 0.1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("[optim]\nmin_iters = 900\n").is_err());
        assert!(RunConfig::from_toml("[perturb]\nmax_trans_m = -1.0\n").is_err());
    }

    #[test]
    fn camera_override_parses() {
        let cfg = RunConfig::from_toml(
            "[camera]\nfx = 500.0\nfy = 500.0\ncx = 319.5\ncy = 239.5\nwidth = 640\nheight = 480\nnear = 0.1\nfar = 10.0\n",
        )
        .unwrap();
        assert_eq!(cfg.camera.unwrap().width, 640);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
