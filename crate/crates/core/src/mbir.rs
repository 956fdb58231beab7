//! Least-squares + total-variation reconstruction by ADMM, with the TV
//! proximal step solved by Chambolle's dual projection.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::Config;
use crate::ct::{backproject, fbp_reconstruct, forward_project, Sinogram};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::nrmse;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvParams {
    pub lambda: f64,
    pub rho: f64,
    pub outer_iters: usize,
    pub cg_iters: usize,
    pub chambolle_iters: usize,
    pub chambolle_step: f64,
    /// Relative objective change below which ADMM stops early; 0 disables.
    pub tolerance: f64,
}

impl Default for TvParams {
    fn default() -> Self {
        TvParams {
            lambda: 0.02,
            rho: 1.0,
            outer_iters: 30,
            cg_iters: 10,
            chambolle_iters: 50,
            chambolle_step: 0.125,
            tolerance: 0.0,
        }
    }
}

impl TvParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Parameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Parameter(format!("rho must be > 0, got {}", self.rho)));
        }
        if !(self.chambolle_step > 0.0 && self.chambolle_step <= 0.25) {
            return Err(Error::Parameter(format!(
                "chambolle_step must lie in (0, 1/4], got {}",
                self.chambolle_step
            )));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Parameter("tolerance must be >= 0".into()));
        }
        Ok(())
    }

    /// Reads `mbir.*` keys, falling back to the defaults.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let d = TvParams::default();
        let p = TvParams {
            lambda: cfg.get_or("mbir.lambda", d.lambda)?,
            rho: cfg.get_or("mbir.rho", d.rho)?,
            outer_iters: cfg.get_or("mbir.outer_iters", d.outer_iters)?,
            cg_iters: cfg.get_or("mbir.cg_iters", d.cg_iters)?,
            chambolle_iters: cfg.get_or("mbir.chambolle_iters", d.chambolle_iters)?,
            chambolle_step: cfg.get_or("mbir.chambolle_step", d.chambolle_step)?,
            tolerance: cfg.get_or("mbir.tolerance", d.tolerance)?,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Forward differences with a replicated last row/column (zero difference
/// at the far edge).
fn gradient(u: &Image) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = u.dims();
    let d = u.data();
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                gx[i] = d[i + 1] - d[i];
            }
            if r + 1 < h {
                gy[i] = d[i + w] - d[i];
            }
        }
    }
    (gx, gy)
}

/// Negative adjoint of [`gradient`].
fn divergence(px: &[f64], py: &[f64], h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |r, c| {
        let i = r * w + c;
        let dx = if c + 1 < w { px[i] } else { 0.0 } - if c > 0 { px[i - 1] } else { 0.0 };
        let dy = if r + 1 < h { py[i] } else { 0.0 } - if r > 0 { py[i - w] } else { 0.0 };
        dx + dy
    })
}

/// Isotropic total variation.
pub fn tv_value(image: &Image) -> f64 {
    let (gx, gy) = gradient(image);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).sum()
}

/// Approximates `argmin_u 1/2 |u - v|^2 + weight TV(u)`.
pub fn tv_prox_chambolle(v: &Image, weight: f64, params: &TvParams) -> Result<Image> {
    if !(weight >= 0.0) {
        return Err(Error::Parameter(format!("prox weight must be >= 0, got {weight}")));
    }
    if !(params.chambolle_step > 0.0 && params.chambolle_step <= 0.25) {
        return Err(Error::Parameter("chambolle_step must lie in (0, 1/4]".into()));
    }
    if weight == 0.0 {
        return Ok(v.clone());
    }
    let (h, w) = v.dims();
    let tau = params.chambolle_step;
    let mut px = vec![0.0; h * w];
    let mut py = vec![0.0; h * w];
    let v_scaled = v.scale(1.0 / weight);
    for _ in 0..params.chambolle_iters {
        let t = divergence(&px, &py, h, w).sub(&v_scaled)?;
        let (gx, gy) = gradient(&t);
        for i in 0..h * w {
            let norm = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
            let denom = 1.0 + tau * norm;
            px[i] = (px[i] + tau * gx[i]) / denom;
            py[i] = (py[i] + tau * gy[i]) / denom;
        }
    }
    v.sub(&divergence(&px, &py, h, w).scale(weight))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveEntry {
    pub iteration: usize,
    pub data_term: f64,
    pub tv_term: f64,
    pub total: f64,
}

pub const OBJECTIVE_CSV_HEADER: &str = "iteration,data_term,tv_term,total";

pub fn objective_to_csv(log: &[ObjectiveEntry]) -> String {
    let mut s = String::from(OBJECTIVE_CSV_HEADER);
    s.push('\n');
    for e in log {
        let _ = writeln!(s, "{},{:?},{:?},{:?}", e.iteration, e.data_term, e.tv_term, e.total);
    }
    s
}

pub fn save_objective_csv(path: impl AsRef<Path>, log: &[ObjectiveEntry]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, objective_to_csv(log)).map_err(|e| Error::io(path, e))
}

/// `(A^T A + rho I) x`.
fn normal_op(x: &Image, sino: &Sinogram, rho: f64) -> Result<Image> {
    let ax = forward_project(x, &sino.geometry)?;
    let mut out = backproject(&ax, x.height())?;
    out.axpy(rho, x)?;
    Ok(out)
}

/// Runs `iters` conjugate-gradient steps on `(A^T A + rho I) x = rhs`,
/// starting from `x`.
fn conjugate_gradient(x: &mut Image, rhs: &Image, sino: &Sinogram, rho: f64, iters: usize) -> Result<()> {
    let mut r = rhs.sub(&normal_op(x, sino, rho)?)?;
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    for _ in 0..iters {
        if rr == 0.0 {
            break;
        }
        let ap = normal_op(&p, sino, rho)?;
        let alpha = rr / p.dot(&ap);
        x.axpy(alpha, &p)?;
        r.axpy(-alpha, &ap)?;
        let rr_new = r.dot(&r);
        p = r.add(&p.scale(rr_new / rr))?;
        rr = rr_new;
    }
    Ok(())
}

fn objective(x: &Image, sino: &Sinogram, lambda: f64, iteration: usize) -> Result<ObjectiveEntry> {
    let res = forward_project(x, &sino.geometry)?.data.sub(&sino.data)?;
    let data_term = 0.5 * res.dot(&res);
    let tv_term = lambda * tv_value(x);
    Ok(ObjectiveEntry {
        iteration,
        data_term,
        tv_term,
        total: data_term + tv_term,
    })
}

/// ADMM for `1/2 |Ax - b|^2 + lambda TV(x)` with the split `x = z`.
/// Returns the TV-side iterate `z`; the log holds the objective at `z`
/// after each outer iteration (iteration 0 is the starting point).
pub fn admm_tv_reconstruct(
    sino: &Sinogram,
    size: usize,
    params: &TvParams,
    x0: Option<&Image>,
) -> Result<(Image, Vec<ObjectiveEntry>)> {
    params.validate()?;
    let g = &sino.geometry;
    if sino.data.dims() != (g.n_views, g.n_detectors) {
        return Err(Error::Dimension("sinogram does not match its geometry".into()));
    }
    let mut x = match x0 {
        Some(x) => {
            if x.dims() != (size, size) {
                return Err(Error::Dimension(format!(
                    "initial image is {}x{}, expected {size}x{size}",
                    x.height(),
                    x.width()
                )));
            }
            x.clone()
        }
        None => fbp_reconstruct(sino, size)?,
    };
    let atb = backproject(sino, size)?;
    let mut z = x.clone();
    let mut u = Image::zeros(size, size);
    let mut log = vec![objective(&z, sino, params.lambda, 0)?];
    for it in 1..=params.outer_iters {
        let mut rhs = z.sub(&u)?.scale(params.rho);
        rhs.axpy(1.0, &atb)?;
        conjugate_gradient(&mut x, &rhs, sino, params.rho, params.cg_iters)?;
        z = tv_prox_chambolle(&x.add(&u)?, params.lambda / params.rho, params)?;
        u.axpy(1.0, &x.sub(&z)?)?;
        let e = objective(&z, sino, params.lambda, it)?;
        if !e.total.is_finite() || !z.is_finite() {
            return Err(Error::Divergence {
                iteration: it,
                message: "objective is not finite".into(),
            });
        }
        let prev = log.last().unwrap().total;
        log.push(e);
        if params.tolerance > 0.0 && (prev - e.total).abs() <= params.tolerance * prev.abs() {
            break;
        }
    }
    Ok((z, log))
}

/// Reconstructs with each `lambda` in turn (other settings from `params`)
/// and returns `(lambda, nrmse against reference)` pairs.
pub fn lambda_grid_search(
    sino: &Sinogram,
    reference: &Image,
    lambdas: &[f64],
    params: &TvParams,
) -> Result<Vec<(f64, f64)>> {
    if reference.height() != reference.width() {
        return Err(Error::Dimension("reference must be square".into()));
    }
    let x0 = fbp_reconstruct(sino, reference.height())?;
    lambdas
        .iter()
        .map(|&lambda| {
            let p = TvParams { lambda, ..*params };
            let (z, _) = admm_tv_reconstruct(sino, reference.height(), &p, Some(&x0))?;
            Ok((lambda, nrmse(&z, reference)?))
        })
        .collect()
}

/// Log-spaced grid `lo * (hi/lo)^(k/(n-1))`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64))
            .collect(),
    }
}
