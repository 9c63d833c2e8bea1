//! Experiment configuration, readable from TOML.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::array::ArrayConfig;
use crate::error::{Error, Result};
use crate::stage3::FramePlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Fig8,
    Fig9,
    Fig10,
    Fig11,
    Fig12,
    Fig13,
    Pipeline,
}

impl ExperimentId {
    pub const FIGURES: [ExperimentId; 10] = [
        ExperimentId::Fig4,
        ExperimentId::Fig5,
        ExperimentId::Fig6,
        ExperimentId::Fig7,
        ExperimentId::Fig8,
        ExperimentId::Fig9,
        ExperimentId::Fig10,
        ExperimentId::Fig11,
        ExperimentId::Fig12,
        ExperimentId::Fig13,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ExperimentId::Fig4 => "fig4",
            ExperimentId::Fig5 => "fig5",
            ExperimentId::Fig6 => "fig6",
            ExperimentId::Fig7 => "fig7",
            ExperimentId::Fig8 => "fig8",
            ExperimentId::Fig9 => "fig9",
            ExperimentId::Fig10 => "fig10",
            ExperimentId::Fig11 => "fig11",
            ExperimentId::Fig12 => "fig12",
            ExperimentId::Fig13 => "fig13",
            ExperimentId::Pipeline => "pipeline",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::FIGURES
            .into_iter()
            .chain([ExperimentId::Pipeline])
            .find(|id| id.tag() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown experiment id `{s}`")))
    }
}

/// DL transmit schemes compared in the DL figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    FdZf,
    HbfOpt,
    HbfNull,
}

impl Variant {
    pub fn tag(self) -> &'static str {
        match self {
            Variant::FdZf => "fd_zf",
            Variant::HbfOpt => "hbf_opt",
            Variant::HbfNull => "hbf_null",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneParams {
    pub k: usize,
    pub l: usize,
    pub grid_slices: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self { k: 8, l: 4, grid_slices: 180 }
    }
}

/// Every knob of an experiment. Missing TOML keys take the defaults below.
///
/// SNR is `P / sigma^2` per link with `P = power`; the received-power factor
/// in the SE expressions is also `power`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: ExperimentId,
    pub arrays: ArrayConfig,
    pub scene_params: SceneParams,
    /// Angles forced into every scene (close pairs of the single-realization figures).
    pub pinned_angles_deg: Vec<f64>,
    /// Scenes are redrawn until all targets are at least this far apart.
    pub min_separation_deg: f64,
    pub snr_grid_db: Vec<f64>,
    /// SNR for sweeps over something else (pilot length, K, overlap).
    pub fixed_snr_db: f64,
    pub pilot_length: usize,
    pub pilot_length_grid: Vec<usize>,
    pub k_grid: Vec<usize>,
    pub frame: FramePlan,
    pub overlap_ratio_grid: Vec<f64>,
    pub delta_max_deg: f64,
    pub delta_max_grid: Vec<f64>,
    pub search_step_deg: f64,
    pub track_step_deg: f64,
    pub sync_len: usize,
    pub power: f64,
    pub trials: usize,
    pub seed: u64,
    pub variant_set: Vec<Variant>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment_id: ExperimentId::Pipeline,
            arrays: ArrayConfig::default(),
            scene_params: SceneParams::default(),
            pinned_angles_deg: Vec::new(),
            min_separation_deg: 0.0,
            snr_grid_db: vec![10.0],
            fixed_snr_db: 10.0,
            pilot_length: 100,
            pilot_length_grid: vec![100],
            k_grid: vec![8],
            frame: FramePlan::default(),
            overlap_ratio_grid: vec![0.3],
            delta_max_deg: 1.0,
            delta_max_grid: vec![1.0],
            search_step_deg: 0.1,
            track_step_deg: 0.01,
            sync_len: 16,
            power: 1.0,
            trials: 1,
            seed: 1,
            variant_set: vec![Variant::FdZf, Variant::HbfOpt, Variant::HbfNull],
        }
    }
}

fn p_k(cfg: &ExperimentConfig) -> usize {
    cfg.k_grid.iter().copied().max().unwrap_or(0).max(cfg.scene_params.k)
}

fn range(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step).round() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

impl ExperimentConfig {
    /// Shared defaults, overridden where a figure changes the setup.
    pub fn for_experiment(id: ExperimentId) -> Self {
        let base = Self { experiment_id: id, ..Self::default() };
        match id {
            ExperimentId::Fig4 => Self {
                pinned_angles_deg: vec![-26.0, -24.0, 25.0, 27.0],
                snr_grid_db: vec![10.0],
                ..base
            },
            ExperimentId::Fig5 => Self { pinned_angles_deg: vec![-38.0, -37.0], snr_grid_db: vec![0.0], ..base },
            ExperimentId::Fig6 => Self {
                snr_grid_db: range(-10.0, 20.0, 5.0),
                pilot_length_grid: vec![25, 50, 100, 150, 200],
                trials: 200,
                ..base
            },
            ExperimentId::Fig7 => Self { snr_grid_db: range(0.0, 20.0, 5.0), trials: 200, ..base },
            // a beam per target needs targets wider apart than the 3 dB beamwidth
            ExperimentId::Fig8 => Self { min_separation_deg: 5.0, ..base },
            ExperimentId::Fig9 => Self { k_grid: (8..=15).collect(), fixed_snr_db: 20.0, trials: 200, ..base },
            ExperimentId::Fig10 => Self { snr_grid_db: range(0.0, 20.0, 5.0), trials: 200, ..base },
            ExperimentId::Fig11 => Self {
                overlap_ratio_grid: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0],
                fixed_snr_db: 20.0,
                trials: 200,
                ..base
            },
            ExperimentId::Fig12 => Self { fixed_snr_db: -20.0, ..base },
            ExperimentId::Fig13 => Self {
                snr_grid_db: range(-30.0, 0.0, 5.0),
                delta_max_grid: vec![1.0, 2.0],
                trials: 200,
                ..base
            },
            ExperimentId::Pipeline => base,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.snr_grid_db.is_empty()
            || self.pilot_length_grid.is_empty()
            || self.k_grid.is_empty()
            || self.overlap_ratio_grid.is_empty()
            || self.delta_max_grid.is_empty()
        {
            return bad("sweep grids must be non-empty");
        }
        if !(self.power > 0.0) {
            return bad("power must be positive");
        }
        if !(self.min_separation_deg >= 0.0 && self.min_separation_deg * p_k(self) as f64 <= 180.0) {
            return bad("min_separation_deg must be non-negative and leave room for every target");
        }
        if !(self.search_step_deg > 0.0 && self.track_step_deg > 0.0) {
            return bad("angle steps must be positive");
        }
        let p = &self.scene_params;
        if p.l == 0 || p.l > p.k || p.k > p.grid_slices {
            return bad("scene needs 1 <= L <= K <= grid_slices");
        }
        let k_max = self.k_grid.iter().copied().max().unwrap_or(p.k).max(p.k);
        self.arrays.validate(k_max, p.l)?;
        self.frame.validate()?;
        if self.overlap_ratio_grid.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("overlap ratios must lie in [0, 1]");
        }
        if self.variant_set.is_empty() {
            return bad("variant_set must be non-empty");
        }
        if self.pilot_length == 0 || self.pilot_length_grid.contains(&0) {
            return bad("pilot lengths must be positive");
        }
        if self.sync_len > self.frame.t_ul {
            return bad("sync_len exceeds the UL block");
        }
        Ok(())
    }

    pub fn fixed_snr_noise(&self) -> crate::array::NoiseConfig {
        crate::array::NoiseConfig::from_snr_db(self.fixed_snr_db, self.power)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_setup() {
        let c = ExperimentConfig::default();
        assert_eq!((c.arrays.n_tx, c.arrays.n_rf, c.arrays.n_rx), (64, 16, 10));
        assert_eq!((c.scene_params.k, c.scene_params.l), (8, 4));
        assert_eq!(c.pilot_length, 100);
        assert_eq!(c.frame.t_radar, 140);
        assert_eq!(c.delta_max_deg, 1.0);
        for id in ExperimentId::FIGURES {
            ExperimentConfig::for_experiment(id).validate().unwrap();
        }
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = ExperimentConfig::for_experiment(ExperimentId::Fig13);
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
        let partial = ExperimentConfig::from_toml_str("experiment_id = \"fig7\"\ntrials = 3\n").unwrap();
        assert_eq!(partial.trials, 3);
        assert!(ExperimentConfig::from_toml_str("trials = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("bogus_key = 1").is_err());
    }

    #[test]
    fn ids_parse() {
        assert_eq!("fig11".parse::<ExperimentId>().unwrap(), ExperimentId::Fig11);
        assert!("fig3".parse::<ExperimentId>().is_err());
    }
}
