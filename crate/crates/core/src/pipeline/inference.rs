//! Whole-image denoising and the method comparison harness.

use std::path::Path;

use super::dataset::DatasetManifest;
use super::settings::{InputNorm, LowbandMode, TargetMode, TrainingConfig};
use crate::ct::mu_to_hu;
use crate::error::{Error, Result};
use crate::image::{window_hu, Image, MultiImage};
use crate::mbir::{admm_tv_reconstruct, TvParams};
use crate::metrics::{evaluate_dataset, reference_range, reports_to_csv, MetricReport};
use crate::net::{check_topology, wavresnet_infer, NetworkParams, Tensor4};
use crate::nsct::{nsct_forward, nsct_inverse, CoeffStack, FilterBank};

/// Smallest image side accepted by [`denoise`].
pub const MIN_DENOISE_SIZE: usize = 8;

/// Display window of exported difference images, in HU.
pub const DIFF_WINDOW: (f64, f64) = (-70.0, 70.0);

/// Network input for the coefficients `x` of one full image.
pub fn network_input(x: &CoeffStack, cfg: &TrainingConfig) -> MultiImage {
    match cfg.input_norm {
        InputNorm::None => x.scale(cfg.coeff_scale).to_multi(),
        InputNorm::BandRms => {
            let bands: Vec<Image> = x
                .bands
                .iter()
                .map(|b| {
                    let rms = (b.dot(b) / b.len() as f64).sqrt();
                    if rms > 0.0 { b.scale(1.0 / rms) } else { b.clone() }
                })
                .collect();
            MultiImage::from_images(&bands).expect("bands share dimensions")
        }
    }
}

/// Runs the network on the full transform of `image` (HU) and recomposes.
///
/// Residual mode adds the prediction to the input coefficients. Direct
/// mode uses the prediction as is, except that with the lowpass band
/// bypassed the input's lowpass is kept.
pub fn denoise(image: &Image, params: &NetworkParams, cfg: &TrainingConfig, bank: &FilterBank) -> Result<Image> {
    check_topology(params, &cfg.topology)?;
    let (h, w) = image.dims();
    if h < MIN_DENOISE_SIZE || w < MIN_DENOISE_SIZE {
        return Err(Error::Dimension(format!(
            "denoise needs at least {MIN_DENOISE_SIZE}x{MIN_DENOISE_SIZE} pixels, got {h}x{w}"
        )));
    }
    let x = nsct_forward(image, &cfg.decomposition, bank)?;
    let input = network_input(&x, cfg);
    let bands = input.channels();
    let t = Tensor4::from_vec(1, bands, h, w, input.data().to_vec())?;
    let f = wavresnet_infer(params, &t)?;
    let scaled = x.scale(cfg.coeff_scale).to_multi();
    let base = Tensor4::from_vec(1, bands, h, w, scaled.data().to_vec())?;
    let mut out = match cfg.target_mode {
        TargetMode::Residual => f.add(&base)?,
        TargetMode::Direct => f,
    };
    if cfg.target_mode == TargetMode::Direct && cfg.lowband_mode == LowbandMode::Bypass {
        out.plane_mut(0, 0).copy_from_slice(base.plane(0, 0));
    }
    let bands_out = (0..bands)
        .map(|c| Image::from_vec(h, w, out.plane(0, c).to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let stack = CoeffStack::new(bands_out, cfg.decomposition.clone())?;
    Ok(nsct_inverse(&stack, bank)?.scale(1.0 / cfg.coeff_scale))
}

/// A trained network entered into [`compare_methods`].
#[derive(Debug, Clone, Copy)]
pub struct NetworkMethod<'a> {
    pub name: &'a str,
    pub params: &'a NetworkParams,
    pub config: &'a TrainingConfig,
}

/// Output of [`compare_methods`]: one report per method, in the order
/// `noisy`, `mbir_tv`, then the networks as given.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub reports: Vec<MetricReport>,
    /// `images[m][s]` is method `m` on validation slice `s`.
    pub images: Vec<Vec<Image>>,
}

/// Scores every method against the routine-dose image of each listed
/// slice. With `out_dir` set, writes `report.csv` and windowed
/// `diff_<method>_<slice>.pgm` images of `method - routine`.
pub fn compare_methods(
    manifest: &DatasetManifest,
    slices: &[usize],
    networks: &[NetworkMethod<'_>],
    mbir: &TvParams,
    bank: &FilterBank,
    out_dir: Option<&Path>,
) -> Result<Comparison> {
    if slices.is_empty() {
        return Err(Error::Config("no validation slices to compare".into()));
    }
    let mut routine = Vec::new();
    let mut outputs: Vec<(String, Vec<Image>)> = vec![
        ("noisy".into(), Vec::new()),
        ("mbir_tv".into(), Vec::new()),
    ];
    outputs.extend(networks.iter().map(|n| (n.name.to_string(), Vec::new())));
    for &i in slices {
        let (r, q) = manifest.load_pair(i)?;
        let (sino, _) = manifest.load_quarter_sinogram(i)?;
        let mu_water = manifest.mu_water(i)?;
        let (mu, _) = admm_tv_reconstruct(&sino, r.height(), mbir, None)?;
        if mu.dims() != r.dims() {
            return Err(Error::Dimension(format!("pair {i}: sinogram and images disagree in size")));
        }
        outputs[1].1.push(mu.map(|m| mu_to_hu(m, mu_water)));
        for (k, n) in networks.iter().enumerate() {
            outputs[2 + k].1.push(denoise(&q, n.params, n.config, bank)?);
        }
        outputs[0].1.push(q);
        routine.push(r);
    }
    let peak = reference_range(&routine);
    let mut reports = Vec::with_capacity(outputs.len());
    for (name, imgs) in &outputs {
        let pairs: Vec<(Image, Image)> = imgs.iter().cloned().zip(routine.iter().cloned()).collect();
        reports.push(evaluate_dataset(name, &pairs, Some(peak), Some(peak))?);
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, imgs) in &outputs {
            for ((s, im), r) in slices.iter().zip(imgs).zip(&routine) {
                window_hu(&im.sub(r)?, DIFF_WINDOW.0, DIFF_WINDOW.1)?
                    .save_pgm(dir.join(format!("diff_{name}_{s:03}.pgm")))?;
            }
        }
        let csv = dir.join("report.csv");
        std::fs::write(&csv, reports_to_csv(&reports)).map_err(|e| Error::io(&csv, e))?;
    }
    Ok(Comparison {
        reports,
        images: outputs.into_iter().map(|(_, v)| v).collect(),
    })
}
