use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ctxcorr::numerics::{ActivationKind, QuadratureConfig};

use crate::error::{HarnessError, Result};

/// Selector settings carried by the run configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    pub coarse_m: usize,
    pub angle_threshold: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            coarse_m: 32,
            angle_threshold: 1.0,
        }
    }
}

/// Full run configuration. Unknown JSON keys are rejected; missing keys take
/// the defaults below.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub seed: u64,
    pub d: usize,
    pub hidden: usize,
    pub layers: usize,
    pub activation: ActivationKind,
    pub n_instances: usize,
    /// Context tokens fed per instance in scatter runs: 1 = single-context
    /// reports, > 1 = incremental (new token against an existing set).
    pub n_contexts: usize,
    /// Noise magnitudes for the corrupted candidate copies; the candidate
    /// pool is the gold context plus one copy per level.
    pub context_noise_levels: Vec<f64>,
    pub weight_std: f64,
    pub quadrature: QuadratureConfig,
    pub selector: SelectorConfig,
    pub output_dir: PathBuf,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            seed: 2026_0810,
            d: 16,
            hidden: 16,
            layers: 1,
            activation: ActivationKind::Relu,
            n_instances: 1000,
            n_contexts: 1,
            context_noise_levels: vec![0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0],
            weight_std: 1.0,
            quadrature: QuadratureConfig::default(),
            selector: SelectorConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl EnsembleConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let cfg: EnsembleConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(HarnessError::Config(msg.to_string()));
        if self.d < 1 || self.hidden < 1 || self.layers < 1 {
            return bad("d, hidden and layers must be at least 1");
        }
        if self.n_instances < 1 {
            return bad("n_instances must be at least 1");
        }
        if !(self.weight_std > 0.0) {
            return bad("weight_std must be positive");
        }
        if self.context_noise_levels.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return bad("context noise levels must be finite and non-negative");
        }
        let candidates = 1 + self.context_noise_levels.len();
        if self.n_contexts > candidates {
            return bad("n_contexts exceeds the candidate pool (gold + noise levels)");
        }
        if self.selector.coarse_m < 1 {
            return bad("selector.coarse_m must be at least 1");
        }
        if !self.selector.angle_threshold.is_finite() {
            return bad("selector.angle_threshold must be finite");
        }
        self.quadrature
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.context_noise_levels.is_empty() {
            return bad("at least one context noise level is required");
        }
        Ok(())
    }

    pub fn candidate_count(&self) -> usize {
        1 + self.context_noise_levels.len()
    }
}
