//! Filtered backprojection for parallel and flat-detector fan beams.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlannerScalar};

use super::geometry::{Beam, Geometry, Sinogram};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Apodization {
    /// Plain ramp.
    None,
    /// Ramp times a Hann window reaching zero at Nyquist.
    #[default]
    Hann,
}

/// Discrete ramp filter (band-limited spatial kernel, applied through the
/// FFT with zero padding to avoid circular wrap).
pub struct RampFilter {
    len: usize,
    n_det: usize,
    response: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl RampFilter {
    /// `spacing_cm` is the detector pitch in physical units.
    pub fn new(n_det: usize, spacing_cm: f64, apodization: Apodization) -> Self {
        let len = (2 * n_det).next_power_of_two();
        // Scalar planner: identical results regardless of CPU SIMD support.
        let mut planner = FftPlannerScalar::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        let mut kernel = vec![Complex64::new(0.0, 0.0); len];
        let d2 = spacing_cm * spacing_cm;
        for (i, k) in kernel.iter_mut().enumerate() {
            let n = if i <= len / 2 { i as i64 } else { i as i64 - len as i64 };
            let v = if n == 0 {
                1.0 / (4.0 * d2)
            } else if n % 2 != 0 {
                -1.0 / (PI * PI * (n * n) as f64 * d2)
            } else {
                0.0
            };
            // Discrete convolution integral: multiply by the pitch.
            k.re = v * spacing_cm;
        }
        fwd.process(&mut kernel);
        let response = kernel
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let f = if i <= len / 2 { i } else { len - i } as f64 / len as f64;
                let w = match apodization {
                    Apodization::None => 1.0,
                    Apodization::Hann => 0.5 * (1.0 + (TAU * f).cos()),
                };
                h.re * w
            })
            .collect();
        RampFilter {
            len,
            n_det,
            response,
            fwd,
            inv,
        }
    }

    pub fn apply(&self, row: &[f64], out: &mut [f64]) {
        debug_assert_eq!(row.len(), self.n_det);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        for (b, &v) in buf.iter_mut().zip(row) {
            b.re = v;
        }
        self.fwd.process(&mut buf);
        for (b, &h) in buf.iter_mut().zip(&self.response) {
            *b *= h;
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / self.len as f64;
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.re * scale;
        }
    }
}

#[inline]
fn interp(row: &[f64], idx: f64) -> f64 {
    if idx < 0.0 {
        return 0.0;
    }
    let i0 = idx.floor() as usize;
    if i0 + 1 >= row.len() {
        return if i0 + 1 == row.len() && idx == i0 as f64 { row[i0] } else { 0.0 };
    }
    let f = idx - i0 as f64;
    row[i0] * (1.0 - f) + row[i0 + 1] * f
}

pub fn fbp_reconstruct(sino: &Sinogram, size: usize) -> Result<Image> {
    fbp_reconstruct_with(sino, size, Apodization::default())
}

pub fn fbp_reconstruct_with(sino: &Sinogram, size: usize, apodization: Apodization) -> Result<Image> {
    let g: &Geometry = &sino.geometry;
    g.validate()?;
    if g.n_views < 2 {
        return Err(Error::Reconstruction(format!(
            "FBP needs at least 2 views, got {}",
            g.n_views
        )));
    }
    if size < 2 {
        return Err(Error::Dimension("output must be at least 2x2".into()));
    }
    if sino.data.dims() != (g.n_views, g.n_detectors) {
        return Err(Error::Dimension("sinogram does not match its geometry".into()));
    }
    let nd = g.n_detectors;
    let center = (nd as f64 - 1.0) / 2.0;
    let cm = g.fov_cm / 2.0;
    let pw = 2.0 / size as f64;
    let mut out = Image::zeros(size, size);

    match g.beam {
        Beam::Parallel => {
            let filter = RampFilter::new(nd, g.detector_spacing * cm, apodization);
            let mut q = vec![0.0; nd];
            let weight = PI / g.n_views as f64;
            for v in 0..g.n_views {
                filter.apply(&sino.data.data()[v * nd..(v + 1) * nd], &mut q);
                let (s, c) = g.view_angle(v).sin_cos();
                let img = out.data_mut();
                for r in 0..size {
                    let y = 1.0 - (r as f64 + 0.5) * pw;
                    for col in 0..size {
                        let x = -1.0 + (col as f64 + 0.5) * pw;
                        let u = x * c + y * s;
                        img[r * size + col] += weight * interp(&q, u / g.detector_spacing + center);
                    }
                }
            }
        }
        Beam::Fan {
            source_to_iso: r_src,
            source_to_detector: r_det,
        } => {
            if (g.view_range - TAU).abs() > 1e-9 {
                return Err(Error::Reconstruction(
                    "fan-beam FBP requires a full 2*pi rotation".into(),
                ));
            }
            // Rebin detector coordinates to a virtual detector through the
            // isocenter.
            let ds = g.detector_spacing * r_src / r_det;
            let filter = RampFilter::new(nd, ds * cm, apodization);
            let mut weighted = vec![0.0; nd];
            let mut q = vec![0.0; nd];
            let dbeta = g.view_range / g.n_views as f64;
            for v in 0..g.n_views {
                let row = &sino.data.data()[v * nd..(v + 1) * nd];
                for (d, w) in weighted.iter_mut().enumerate() {
                    let s = (d as f64 - center) * ds;
                    *w = row[d] * r_src / (r_src * r_src + s * s).sqrt();
                }
                filter.apply(&weighted, &mut q);
                let (sb, cb) = g.view_angle(v).sin_cos();
                let img = out.data_mut();
                for r in 0..size {
                    let y = 1.0 - (r as f64 + 0.5) * pw;
                    for col in 0..size {
                        let x = -1.0 + (col as f64 + 0.5) * pw;
                        // Distance from the source along the central ray.
                        let l = r_src + (-x * sb + y * cb);
                        let u = x * cb + y * sb;
                        let s = u * r_src / l;
                        let mag = r_src / l;
                        img[r * size + col] +=
                            0.5 * dbeta * mag * mag * interp(&q, s / ds + center);
                    }
                }
            }
        }
    }
    Ok(out)
}
