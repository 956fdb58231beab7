//! Typed views of the `sim.*`, `nsct.*`, `net.*` and `train.*` config keys.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use crate::config::Config;
use crate::ct::geometry::DEFAULT_FOV_CM;
use crate::ct::Geometry;
use crate::error::{Error, Result};
use crate::net::optim::{CLIP_THRESHOLD, LR_END, LR_START};
use crate::net::Topology;
use crate::nsct::DecompositionSpec;

pub const DEFAULT_MU_WATER: f64 = 0.2;

/// Phantom simulation and acquisition settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub size: usize,
    pub n_phantoms: usize,
    pub geometry: Geometry,
    pub i0_routine: f64,
    /// Quarter dose is `i0_routine * dose_fraction`.
    pub dose_fraction: f64,
    pub mu_water: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let size: usize = cfg.get_or("sim.size", 64)?;
        let views: usize = cfg.get_or("sim.views", 180)?;
        let beam = cfg.get_str("sim.beam").unwrap_or("fan");
        let mut geometry = match beam {
            "parallel" => Geometry::parallel(size, views),
            "fan" => Geometry::fan(
                size,
                views,
                cfg.get_or("sim.source_to_iso", 4.0)?,
                cfg.get_or("sim.source_to_detector", 8.0)?,
            ),
            other => return Err(Error::Config(format!("sim.beam must be fan or parallel, got `{other}`"))),
        };
        geometry.fov_cm = cfg.get_or("sim.fov_cm", DEFAULT_FOV_CM)?;
        geometry.validate()?;
        let sim = SimConfig {
            size,
            n_phantoms: cfg.get_or("sim.phantoms", 4)?,
            geometry,
            i0_routine: cfg.get_or("sim.i0_routine", 2e5)?,
            dose_fraction: cfg.get_or("sim.dose_fraction", 0.25)?,
            mu_water: cfg.get_or("sim.mu_water", DEFAULT_MU_WATER)?,
            seed: cfg.get_or("sim.seed", 1)?,
        };
        if sim.size < 8 {
            return Err(Error::Config("sim.size must be at least 8".into()));
        }
        if !(sim.i0_routine > 0.0) || !(sim.dose_fraction > 0.0 && sim.dose_fraction <= 1.0) {
            return Err(Error::Config("sim.i0_routine must be positive and sim.dose_fraction in (0, 1]".into()));
        }
        if !(sim.mu_water > 0.0) {
            return Err(Error::Config("sim.mu_water must be positive".into()));
        }
        if matches!(geometry.beam, crate::ct::Beam::Fan { .. }) && (geometry.view_range - TAU).abs() > 1e-12 {
            return Err(Error::Config("fan-beam scans cover a full rotation".into()));
        }
        Ok(sim)
    }

    pub fn i0_quarter(&self) -> f64 {
        self.i0_routine * self.dose_fraction
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMode {
    /// Learn `T(routine) - T(quarter)`; output `T(x) + f(T(x))`.
    Residual,
    /// Learn `T(routine)` itself.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LowbandMode {
    /// The lowpass band is learned like any other.
    Learned,
    /// The lowpass band is excluded from the loss and copied from the input
    /// at inference.
    Bypass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputNorm {
    /// Network input is `coeff_scale * T(x)`.
    None,
    /// Each input band is divided by its own RMS over the full image.
    BandRms,
}

impl FromStr for InputNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(InputNorm::None),
            "band_rms" => Ok(InputNorm::BandRms),
            _ => Err(Error::Config(format!("input normalization must be none or band_rms, got `{s}`"))),
        }
    }
}

impl fmt::Display for InputNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputNorm::None => "none",
            InputNorm::BandRms => "band_rms",
        })
    }
}

impl FromStr for TargetMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residual" => Ok(TargetMode::Residual),
            "direct" => Ok(TargetMode::Direct),
            _ => Err(Error::Config(format!("target mode must be residual or direct, got `{s}`"))),
        }
    }
}

impl fmt::Display for TargetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetMode::Residual => "residual",
            TargetMode::Direct => "direct",
        })
    }
}

impl FromStr for LowbandMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(LowbandMode::Learned),
            "bypass" => Ok(LowbandMode::Bypass),
            _ => Err(Error::Config(format!("lowband mode must be learned or bypass, got `{s}`"))),
        }
    }
}

impl fmt::Display for LowbandMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LowbandMode::Learned => "learned",
            LowbandMode::Bypass => "bypass",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub decomposition: DecompositionSpec,
    pub topology: Topology,
    pub total_iterations: usize,
    pub mini_batch: usize,
    pub patch_size: usize,
    pub patch_stride: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub clip_threshold: f64,
    pub momentum: f64,
    pub seed: u64,
    pub target_mode: TargetMode,
    pub lowband_mode: LowbandMode,
    /// Multiplies HU coefficients of labels and network outputs.
    pub coeff_scale: f64,
    pub input_norm: InputNorm,
    pub log_every: usize,
    /// Manifest indices; `None` means all but the last entry.
    pub train_slices: Option<Vec<usize>>,
    /// Manifest indices; `None` means the last entry.
    pub val_slices: Option<Vec<usize>>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            decomposition: DecompositionSpec::default(),
            topology: Topology::default(),
            total_iterations: 500,
            mini_batch: 10,
            patch_size: 55,
            patch_stride: 20,
            lr_start: LR_START,
            lr_end: LR_END,
            clip_threshold: CLIP_THRESHOLD,
            momentum: 0.0,
            seed: 1,
            target_mode: TargetMode::Residual,
            lowband_mode: LowbandMode::Learned,
            coeff_scale: 0.2,
            input_norm: InputNorm::BandRms,
            log_every: 50,
            train_slices: None,
            val_slices: None,
        }
    }
}

fn parse_mode<T: FromStr<Err = Error>>(cfg: &Config, key: &str, default: T) -> Result<T> {
    match cfg.get_str(key) {
        Some(s) => s.parse(),
        None => Ok(default),
    }
}

impl TrainingConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let d = TrainingConfig::default();
        let decomposition = match cfg.get_list::<usize>("nsct.directions")? {
            Some(dirs) => DecompositionSpec::new(dirs)?,
            None => d.decomposition.clone(),
        };
        let bands = decomposition.band_count();
        let mut topo_cfg = cfg.clone();
        for key in ["net.in_channels", "net.out_channels"] {
            if topo_cfg.get_str(key).is_none() {
                topo_cfg.set(key, bands);
            }
        }
        let t = TrainingConfig {
            decomposition,
            topology: Topology::from_config(&topo_cfg)?,
            total_iterations: cfg.get_or("train.iterations", d.total_iterations)?,
            mini_batch: cfg.get_or("train.mini_batch", d.mini_batch)?,
            patch_size: cfg.get_or("train.patch_size", d.patch_size)?,
            patch_stride: cfg.get_or("train.patch_stride", d.patch_stride)?,
            lr_start: cfg.get_or("train.lr_start", d.lr_start)?,
            lr_end: cfg.get_or("train.lr_end", d.lr_end)?,
            clip_threshold: cfg.get_or("train.clip", d.clip_threshold)?,
            momentum: cfg.get_or("train.momentum", d.momentum)?,
            seed: cfg.get_or("train.seed", d.seed)?,
            target_mode: parse_mode(cfg, "train.target", d.target_mode)?,
            lowband_mode: parse_mode(cfg, "train.lowband", d.lowband_mode)?,
            coeff_scale: cfg.get_or("train.coeff_scale", d.coeff_scale)?,
            input_norm: parse_mode(cfg, "train.input_norm", d.input_norm)?,
            log_every: cfg.get_or("train.log_every", d.log_every)?,
            train_slices: cfg.get_list("train.train_slices")?,
            val_slices: cfg.get_list("train.val_slices")?,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.mini_batch < 1 {
            return bad("train.mini_batch must be at least 1");
        }
        if self.patch_size < 8 {
            return bad("train.patch_size must be at least 8");
        }
        if self.patch_stride < 1 {
            return bad("train.patch_stride must be at least 1");
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end) {
            return bad("learning rates must satisfy 0 < lr_end <= lr_start");
        }
        if !(self.clip_threshold > 0.0) {
            return bad("train.clip must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("train.momentum must lie in [0, 1)");
        }
        if !(self.coeff_scale > 0.0 && self.coeff_scale.is_finite()) {
            return bad("train.coeff_scale must be positive");
        }
        if self.log_every < 1 {
            return bad("train.log_every must be at least 1");
        }
        let bands = self.decomposition.band_count();
        if self.topology.in_channels != bands || self.topology.out_channels != bands {
            return Err(Error::Config(format!(
                "network maps {} to {} channels but the decomposition has {bands} bands",
                self.topology.in_channels, self.topology.out_channels
            )));
        }
        if let (Some(t), Some(v)) = (&self.train_slices, &self.val_slices) {
            if let Some(s) = t.iter().find(|s| v.contains(s)) {
                return Err(Error::Config(format!("slice {s} is in both the training and validation split")));
            }
        }
        Ok(())
    }

    /// Resolves the train/validation split for a manifest of `n` entries.
    pub fn split(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if n == 0 {
            return Err(Error::Config("dataset is empty".into()));
        }
        let val = self.val_slices.clone().unwrap_or_else(|| vec![n - 1]);
        let train = self
            .train_slices
            .clone()
            .unwrap_or_else(|| (0..n).filter(|i| !val.contains(i)).collect());
        if let Some(&i) = train.iter().chain(&val).find(|&&i| i >= n) {
            return Err(Error::Config(format!("slice index {i} is outside a {n}-entry dataset")));
        }
        if train.is_empty() {
            return Err(Error::Config("no training slices".into()));
        }
        if let Some(s) = train.iter().find(|s| val.contains(s)) {
            return Err(Error::Config(format!("slice {s} is in both the training and validation split")));
        }
        Ok((train, val))
    }

    /// Channels excluded from the loss.
    pub fn excluded_channels(&self) -> Vec<usize> {
        match self.lowband_mode {
            LowbandMode::Learned => Vec::new(),
            LowbandMode::Bypass => vec![0],
        }
    }

    pub fn to_config(&self) -> Config {
        let mut c = self.topology.to_config();
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        c.set("nsct.directions", join(&self.decomposition.directions_per_level));
        c.set("train.iterations", self.total_iterations);
        c.set("train.mini_batch", self.mini_batch);
        c.set("train.patch_size", self.patch_size);
        c.set("train.patch_stride", self.patch_stride);
        c.set("train.lr_start", format!("{:?}", self.lr_start));
        c.set("train.lr_end", format!("{:?}", self.lr_end));
        c.set("train.clip", format!("{:?}", self.clip_threshold));
        c.set("train.momentum", format!("{:?}", self.momentum));
        c.set("train.seed", self.seed);
        c.set("train.target", self.target_mode);
        c.set("train.lowband", self.lowband_mode);
        c.set("train.coeff_scale", format!("{:?}", self.coeff_scale));
        c.set("train.input_norm", self.input_norm);
        c.set("train.log_every", self.log_every);
        if let Some(t) = &self.train_slices {
            c.set("train.train_slices", join(t));
        }
        if let Some(v) = &self.val_slices {
            c.set("train.val_slices", join(v));
        }
        c
    }
}
