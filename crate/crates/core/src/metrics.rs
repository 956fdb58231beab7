//! Image-quality metrics: PSNR, NRMSE, SSIM and dataset averages.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn mse(test: &Image, reference: &Image) -> Result<f64> {
    test.same_dims(reference)?;
    let sum: f64 = test
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / test.len() as f64)
}

/// `10 log10(peak^2 / MSE)`; identical images give `+inf`.
pub fn psnr(test: &Image, reference: &Image, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::Parameter(format!("PSNR peak must be positive, got {peak}")));
    }
    let m = mse(test, reference)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// `||test - reference||_2 / ||reference||_2`.
pub fn nrmse(test: &Image, reference: &Image) -> Result<f64> {
    test.same_dims(reference)?;
    let num: f64 = test
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den = reference.dot(reference);
    if den == 0.0 {
        return Err(Error::Domain("NRMSE reference has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w: Vec<f64> = (0..SSIM_WINDOW * SSIM_WINDOW)
        .map(|i| {
            let dy = (i / SSIM_WINDOW) as f64 - half;
            let dx = (i % SSIM_WINDOW) as f64 - half;
            (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mean local SSIM over every position where the 11x11 Gaussian window
/// (sigma 1.5) fits inside the image.
pub fn ssim(test: &Image, reference: &Image, dynamic_range: f64) -> Result<f64> {
    test.same_dims(reference)?;
    if !(dynamic_range > 0.0) {
        return Err(Error::Parameter("SSIM dynamic range must be positive".into()));
    }
    let (h, w) = test.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let win = gaussian_window();
    let (x, y) = (test.data(), reference.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=h - SSIM_WINDOW {
        for c in 0..=w - SSIM_WINDOW {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                let row = (r + i) * w + c;
                for j in 0..SSIM_WINDOW {
                    let k = win[i * SSIM_WINDOW + j];
                    let (a, b) = (x[row + j], y[row + j]);
                    mx += k * a;
                    my += k * b;
                    sxx += k * a * a;
                    syy += k * b * b;
                    sxy += k * a * b;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceMetrics {
    pub psnr_db: f64,
    pub nrmse: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub slices: Vec<SliceMetrics>,
    pub average: SliceMetrics,
}

impl MetricReport {
    pub fn from_slices(method: impl Into<String>, slices: Vec<SliceMetrics>) -> Self {
        let n = slices.len().max(1) as f64;
        let mean = |f: fn(&SliceMetrics) -> f64| slices.iter().map(f).sum::<f64>() / n;
        let average = SliceMetrics {
            psnr_db: mean(|s| s.psnr_db),
            nrmse: mean(|s| s.nrmse),
            ssim: mean(|s| s.ssim),
        };
        MetricReport {
            method: method.into(),
            slices,
            average,
        }
    }

    pub fn slice_count(&self) -> usize {
        self.slices.len()
    }
}

/// Reference-set peak: `max - min` over every reference image.
pub fn reference_range<'a>(references: impl IntoIterator<Item = &'a Image>) -> f64 {
    let (lo, hi) = references
        .into_iter()
        .map(Image::min_max)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (c, d)| {
            (a.min(c), b.max(d))
        });
    hi - lo
}

/// Per-slice metrics plus arithmetic means. `peak` and `range` default to
/// the reference set's `max - min`.
pub fn evaluate_dataset(
    method: &str,
    pairs: &[(Image, Image)],
    peak: Option<f64>,
    range: Option<f64>,
) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Parameter("no slices to evaluate".into()));
    }
    let default = reference_range(pairs.iter().map(|(_, r)| r));
    let peak = peak.unwrap_or(default);
    let range = range.unwrap_or(default);
    let slices = pairs
        .iter()
        .map(|(t, r)| {
            Ok(SliceMetrics {
                psnr_db: psnr(t, r, peak)?,
                nrmse: nrmse(t, r)?,
                ssim: ssim(t, r, range)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_slices(method, slices))
}

pub const REPORT_CSV_HEADER: &str = "slice,method,psnr_db,nrmse,ssim";

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

/// CSV: header, per-slice rows for every report, then one `average` row per
/// report.
pub fn reports_to_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for rep in reports {
        for (i, s) in rep.slices.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{}",
                rep.method,
                fmt_metric(s.psnr_db),
                fmt_metric(s.nrmse),
                fmt_metric(s.ssim)
            );
        }
    }
    for rep in reports {
        let a = &rep.average;
        let _ = writeln!(
            out,
            "average,{},{},{},{}",
            rep.method,
            fmt_metric(a.psnr_db),
            fmt_metric(a.nrmse),
            fmt_metric(a.ssim)
        );
    }
    out
}

/// Human-readable summary, one row per method.
pub fn reports_to_table(reports: &[MetricReport]) -> String {
    let mut out = format!(
        "{:<16} {:>10} {:>10} {:>8} {:>7}\n",
        "method", "PSNR [dB]", "NRMSE", "SSIM", "slices"
    );
    for rep in reports {
        let a = &rep.average;
        let _ = writeln!(
            out,
            "{:<16} {:>10.3} {:>10.5} {:>8.4} {:>7}",
            rep.method,
            a.psnr_db,
            a.nrmse,
            a.ssim,
            rep.slice_count()
        );
    }
    out
}
