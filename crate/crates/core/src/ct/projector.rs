//! Ray-driven projector and its exact adjoint.
//!
//! Each ray is sampled at points spaced half a pixel apart; the image is
//! bilinearly interpolated at every sample. The backprojector walks the same
//! samples and scatters with the same weights, so the pair is adjoint to
//! rounding error.

use std::f64::consts::SQRT_2;

use super::geometry::{Beam, Geometry, Sinogram};
use crate::error::{Error, Result};
use crate::image::Image;

struct RayTracer {
    n: usize,
    pw: f64,
    step: f64,
    n_samples: usize,
    /// Physical length (cm) of one sample step.
    step_cm: f64,
}

impl RayTracer {
    fn new(size: usize, geom: &Geometry) -> Self {
        let pw = 2.0 / size as f64;
        let step = pw / 2.0;
        let half = (SQRT_2 / step).ceil() as usize;
        RayTracer {
            n: size,
            pw,
            step,
            n_samples: 2 * half + 1,
            step_cm: step * geom.fov_cm / 2.0,
        }
    }

    /// Calls `visit(pixel_index, weight)` for every bilinear tap of every
    /// sample along the ray `origin + t * dir`, `t` centered on `t_mid`.
    #[inline]
    fn trace(&self, origin: (f64, f64), dir: (f64, f64), t_mid: f64, mut visit: impl FnMut(usize, f64)) {
        let n = self.n as isize;
        let half = (self.n_samples / 2) as f64;
        // Restrict to samples near the image square; the per-sample test
        // below still decides which ones contribute.
        let bound = 1.0 + self.pw;
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for (o, d) in [(origin.0, dir.0), (origin.1, dir.1)] {
            if d.abs() < 1e-12 {
                if o.abs() >= bound {
                    return;
                }
            } else {
                let (a, b) = ((-bound - o) / d, (bound - o) / d);
                lo = lo.max(a.min(b));
                hi = hi.min(a.max(b));
            }
        }
        if lo > hi {
            return;
        }
        let k_lo = (((lo - t_mid) / self.step + half).floor() - 1.0).max(0.0) as usize;
        let k_hi = (((hi - t_mid) / self.step + half).ceil() + 1.0).min(self.n_samples as f64) as usize;
        for k in k_lo..k_hi {
            let t = t_mid + (k as f64 - half) * self.step;
            let x = origin.0 + t * dir.0;
            let y = origin.1 + t * dir.1;
            let cf = (x + 1.0) / self.pw - 0.5;
            let rf = (1.0 - y) / self.pw - 0.5;
            if cf <= -1.0 || rf <= -1.0 || cf >= n as f64 || rf >= n as f64 {
                continue;
            }
            let c0 = cf.floor();
            let r0 = rf.floor();
            let fx = cf - c0;
            let fy = rf - r0;
            let (c0, r0) = (c0 as isize, r0 as isize);
            let w = self.step_cm;
            if r0 >= 0 && c0 >= 0 && r0 + 1 < n && c0 + 1 < n {
                let i = (r0 * n + c0) as usize;
                let nu = self.n;
                visit(i, (1.0 - fy) * (1.0 - fx) * w);
                visit(i + 1, (1.0 - fy) * fx * w);
                visit(i + nu, fy * (1.0 - fx) * w);
                visit(i + nu + 1, fy * fx * w);
                continue;
            }
            let taps = [
                (r0, c0, (1.0 - fy) * (1.0 - fx)),
                (r0, c0 + 1, (1.0 - fy) * fx),
                (r0 + 1, c0, fy * (1.0 - fx)),
                (r0 + 1, c0 + 1, fy * fx),
            ];
            for (r, c, w) in taps {
                if r >= 0 && r < n && c >= 0 && c < n {
                    visit((r * n + c) as usize, w * self.step_cm);
                }
            }
        }
    }

    /// Origin, unit direction and mid-parameter of ray (view, det).
    #[inline]
    fn ray(&self, geom: &Geometry, view: usize, det: usize) -> ((f64, f64), (f64, f64), f64) {
        let theta = geom.view_angle(view);
        let (s, c) = theta.sin_cos();
        // Detector axis e_u = (cos, sin); rays travel along r = (-sin, cos).
        let u = geom.detector_offset(det);
        match geom.beam {
            Beam::Parallel => ((u * c, u * s), (-s, c), 0.0),
            Beam::Fan {
                source_to_iso,
                source_to_detector,
            } => {
                let src = (source_to_iso * s, -source_to_iso * c);
                let dx = source_to_detector * -s + u * c;
                let dy = source_to_detector * c + u * s;
                let len = (dx * dx + dy * dy).sqrt();
                (src, (dx / len, dy / len), source_to_iso)
            }
        }
    }
}

fn check(size: usize, geom: &Geometry) -> Result<()> {
    geom.validate()?;
    if size < 2 {
        return Err(Error::Dimension("image must be at least 2x2".into()));
    }
    Ok(())
}

pub fn forward_project(image: &Image, geom: &Geometry) -> Result<Sinogram> {
    if image.height() != image.width() {
        return Err(Error::Dimension(format!(
            "projector needs a square image, got {}x{}",
            image.height(),
            image.width()
        )));
    }
    check(image.height(), geom)?;
    let tracer = RayTracer::new(image.height(), geom);
    let px = image.data();
    let mut sino = Sinogram::zeros(*geom);
    let out = sino.data.data_mut();
    for v in 0..geom.n_views {
        for d in 0..geom.n_detectors {
            let (o, dir, t) = tracer.ray(geom, v, d);
            let mut acc = 0.0;
            tracer.trace(o, dir, t, |i, w| acc += w * px[i]);
            out[v * geom.n_detectors + d] = acc;
        }
    }
    Ok(sino)
}

/// Exact adjoint of [`forward_project`] onto a `size`x`size` grid.
pub fn backproject(sino: &Sinogram, size: usize) -> Result<Image> {
    let geom = &sino.geometry;
    check(size, geom)?;
    if sino.data.dims() != (geom.n_views, geom.n_detectors) {
        return Err(Error::Dimension("sinogram does not match its geometry".into()));
    }
    let tracer = RayTracer::new(size, geom);
    let mut out = Image::zeros(size, size);
    let img = out.data_mut();
    let s = sino.data.data();
    for v in 0..geom.n_views {
        for d in 0..geom.n_detectors {
            let val = s[v * geom.n_detectors + d];
            if val == 0.0 {
                continue;
            }
            let (o, dir, t) = tracer.ray(geom, v, d);
            tracer.trace(o, dir, t, |i, w| img[i] += w * val);
        }
    }
    Ok(out)
}
