//! Coefficient-domain training pairs and the SGD training loop.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use super::dataset::DatasetManifest;
use super::inference::{denoise, network_input};
use super::settings::{TargetMode, TrainingConfig};
use crate::error::{Error, Result};
use crate::image::{patch_positions, Image, MultiImage};
use crate::metrics::{self, reference_range};
use crate::net::{
    clip_gradients, lr_schedule, masked_mse_loss, save_checkpoint, wavresnet_backward,
    wavresnet_forward, Mode, NetworkParams, Sgd, Tensor4,
};
use crate::nsct::{nsct_forward, FilterBank};
use crate::rng;

/// Scaled coefficient stacks of the training slices plus every aligned
/// patch position.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub patch_size: usize,
    /// Network input built from `T(quarter)` per slice.
    pub inputs: Vec<MultiImage>,
    /// Residual: `coeff_scale * (T(routine) - T(quarter))`;
    /// direct: `coeff_scale * T(routine)`.
    pub labels: Vec<MultiImage>,
    /// `(slice, row, col)` of every patch.
    pub positions: Vec<(usize, usize, usize)>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.inputs.first().map_or(0, MultiImage::channels)
    }

    /// Input and label of patch `i`, channel-major.
    pub fn pair(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        let (s, r, c) = self.positions[i];
        let n = self.channels() * self.patch_size * self.patch_size;
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        self.inputs[s].copy_window(r, c, self.patch_size, &mut x);
        self.labels[s].copy_window(r, c, self.patch_size, &mut y);
        (x, y)
    }

    /// Stacks the listed patches into input and label tensors.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor4, Tensor4)> {
        let ch = self.channels();
        let p = self.patch_size;
        let mut xs = Vec::with_capacity(indices.len() * ch * p * p);
        let mut ys = Vec::with_capacity(xs.capacity());
        for &i in indices {
            let (x, y) = self.pair(i);
            xs.extend_from_slice(&x);
            ys.extend_from_slice(&y);
        }
        Ok((
            Tensor4::from_vec(indices.len(), ch, p, p, xs)?,
            Tensor4::from_vec(indices.len(), ch, p, p, ys)?,
        ))
    }
}

/// Transforms each listed pair at full size, then records the patch grid.
pub fn build_training_set(
    manifest: &DatasetManifest,
    slices: &[usize],
    cfg: &TrainingConfig,
    bank: &FilterBank,
) -> Result<TrainingSet> {
    if slices.is_empty() {
        return Err(Error::Config("no training slices".into()));
    }
    let mut set = TrainingSet {
        patch_size: cfg.patch_size,
        inputs: Vec::new(),
        labels: Vec::new(),
        positions: Vec::new(),
    };
    for (k, &i) in slices.iter().enumerate() {
        let (routine, quarter) = manifest.load_pair(i)?;
        let (input, label) = training_pair(&routine, &quarter, cfg, bank)?;
        for (r, c) in patch_positions(input.height(), input.width(), cfg.patch_size, cfg.patch_stride)? {
            set.positions.push((k, r, c));
        }
        set.inputs.push(input);
        set.labels.push(label);
    }
    Ok(set)
}

/// Full-image network input and label for one pair.
pub fn training_pair(
    routine: &Image,
    quarter: &Image,
    cfg: &TrainingConfig,
    bank: &FilterBank,
) -> Result<(MultiImage, MultiImage)> {
    routine.same_dims(quarter)?;
    let x = nsct_forward(quarter, &cfg.decomposition, bank)?;
    let r = nsct_forward(routine, &cfg.decomposition, bank)?;
    let y = match cfg.target_mode {
        TargetMode::Residual => r.sub(&x)?,
        TargetMode::Direct => r,
    };
    Ok((network_input(&x, cfg), y.scale(cfg.coeff_scale).to_multi()))
}

/// Uniform sampling without replacement within an epoch; each epoch is a
/// fresh seeded permutation.
#[derive(Debug, Clone)]
pub struct PatchSampler {
    seed: u64,
    len: usize,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl PatchSampler {
    pub fn new(len: usize, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config("training set has no patches".into()));
        }
        let mut s = PatchSampler {
            seed,
            len,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.len).collect();
        self.order.shuffle(&mut rng::stream(self.seed, 0x7061_7463_6800 + self.epoch));
        self.cursor = 0;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.cursor == self.len {
                self.epoch += 1;
                self.reshuffle();
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceEntry {
    pub iteration: usize,
    pub lr: f64,
    /// Mean mini-batch loss since the previous entry.
    pub train_loss: f64,
    pub val_psnr_db: f64,
    pub val_nrmse: f64,
}

pub const CONVERGENCE_CSV_HEADER: &str = "iteration,lr,train_loss,val_psnr_db,val_nrmse";

pub fn convergence_to_csv(log: &[ConvergenceEntry]) -> String {
    let mut out = String::from(CONVERGENCE_CSV_HEADER);
    out.push('\n');
    for e in log {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{},{}",
            e.iteration, e.lr, e.train_loss, e.val_psnr_db, e.val_nrmse
        );
    }
    out
}

/// Validation slices with the fixed PSNR peak.
#[derive(Debug, Clone)]
pub struct Validation {
    /// `(quarter, routine)` per slice.
    pub slices: Vec<(Image, Image)>,
    pub peak: f64,
}

impl Validation {
    pub fn load(manifest: &DatasetManifest, slices: &[usize]) -> Result<Self> {
        let slices = slices
            .iter()
            .map(|&i| manifest.load_pair(i).map(|(r, q)| (q, r)))
            .collect::<Result<Vec<_>>>()?;
        let peak = reference_range(slices.iter().map(|(_, r)| r));
        Ok(Validation { slices, peak })
    }

    /// Mean PSNR and NRMSE of `f(quarter)` against routine.
    pub fn score(&self, f: impl Fn(&Image) -> Result<Image>) -> Result<(f64, f64)> {
        if self.slices.is_empty() {
            return Ok((f64::NAN, f64::NAN));
        }
        let (mut p, mut e) = (0.0, 0.0);
        for (q, r) in &self.slices {
            let out = f(q)?;
            p += metrics::psnr(&out, r, self.peak)?;
            e += metrics::nrmse(&out, r)?;
        }
        let n = self.slices.len() as f64;
        Ok((p / n, e / n))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_params: NetworkParams,
    pub best_params: NetworkParams,
    pub log: Vec<ConvergenceEntry>,
    /// Validation PSNR/NRMSE of the undenoised quarter-dose slices.
    pub baseline: (f64, f64),
}

impl TrainOutcome {
    pub fn final_entry(&self) -> Option<&ConvergenceEntry> {
        self.log.last()
    }
}

/// Runs `cfg.total_iterations` SGD steps from a He-initialized network.
/// With `out_dir` set, writes `convergence.csv`, `final.wrn1` and
/// `best.wrn1` there.
pub fn train(
    cfg: &TrainingConfig,
    manifest: &DatasetManifest,
    bank: &FilterBank,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_slices, val_slices) = cfg.split(manifest.len())?;
    let set = build_training_set(manifest, &train_slices, cfg, bank)?;
    let validation = Validation::load(manifest, &val_slices)?;
    let params = NetworkParams::he_init(&cfg.topology, cfg.seed)?;
    train_from(cfg, params, &set, &validation, bank, out_dir)
}

/// Training loop over a prepared set, starting from `params`.
pub fn train_from(
    cfg: &TrainingConfig,
    mut params: NetworkParams,
    set: &TrainingSet,
    validation: &Validation,
    bank: &FilterBank,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let excluded = cfg.excluded_channels();
    let mut sampler = PatchSampler::new(set.len(), cfg.seed)?;
    let mut opt = Sgd::new(cfg.momentum)?;
    let baseline = validation.score(|q| Ok(q.clone()))?;
    let mut log = Vec::new();
    let mut best: Option<(f64, NetworkParams)> = None;
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;

    for step in 0..cfg.total_iterations {
        let iteration = step + 1;
        let lr = lr_schedule(step, cfg.total_iterations, cfg.lr_start, cfg.lr_end);
        let (x, y) = set.batch(&sampler.next_batch(cfg.mini_batch))?;
        let (pred, cache) = wavresnet_forward(&params, &x, Mode::Train)?;
        let (loss, grad) = masked_mse_loss(&pred, &y, &excluded)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iteration,
                message: format!("training loss became {loss}"),
            });
        }
        let (mut grads, _) = wavresnet_backward(&params, &cache, &grad)?;
        clip_gradients(&mut grads, cfg.clip_threshold)?;
        opt.step(&mut params, &grads, lr)?;
        params.update_running_stats(&cache)?;
        if !params.is_finite() {
            return Err(Error::Divergence {
                iteration,
                message: "parameters became non-finite".into(),
            });
        }
        loss_sum += loss;
        loss_count += 1;

        if iteration % cfg.log_every == 0 || iteration == cfg.total_iterations {
            let (val_psnr_db, val_nrmse) = validation.score(|q| denoise(q, &params, cfg, bank))?;
            log.push(ConvergenceEntry {
                iteration,
                lr,
                train_loss: loss_sum / loss_count as f64,
                val_psnr_db,
                val_nrmse,
            });
            loss_sum = 0.0;
            loss_count = 0;
            if best.as_ref().is_none_or(|(b, _)| val_psnr_db > *b) {
                best = Some((val_psnr_db, params.clone()));
            }
        }
    }

    let best_params = best.map_or_else(|| params.clone(), |(_, p)| p);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("convergence.csv");
        std::fs::write(&csv, convergence_to_csv(&log)).map_err(|e| Error::io(&csv, e))?;
        save_checkpoint(dir.join("final.wrn1"), &params)?;
        save_checkpoint(dir.join("best.wrn1"), &best_params)?;
    }
    Ok(TrainOutcome {
        final_params: params,
        best_params,
        log,
        baseline,
    })
}
