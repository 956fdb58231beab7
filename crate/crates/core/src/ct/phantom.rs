use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;

/// Ellipse in normalized coordinates: the image square spans `[-1, 1]` in
/// both `x` (left to right) and `y` (bottom to top).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center_x: f64,
    pub center_y: f64,
    /// Semi-axis along the (rotated) x direction.
    pub a: f64,
    /// Semi-axis along the (rotated) y direction.
    pub b: f64,
    /// Counter-clockwise rotation, radians.
    pub rotation: f64,
    /// Attenuation added inside the ellipse, 1/cm.
    pub attenuation_delta: f64,
}

impl Ellipse {
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.rotation.sin_cos();
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        let xr = dx * c + dy * s;
        let yr = -dx * s + dy * c;
        (xr / self.a).powi(2) + (yr / self.b).powi(2) <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Phantom {
    pub ellipses: Vec<Ellipse>,
}

impl Phantom {
    pub fn new(ellipses: Vec<Ellipse>) -> Result<Self> {
        for e in &ellipses {
            if !(e.a > 0.0 && e.b > 0.0) {
                return Err(Error::Parameter("ellipse semi-axes must be positive".into()));
            }
        }
        let p = Phantom { ellipses };
        let min = p.min_on_grid(128);
        if min < -1e-9 {
            return Err(Error::Domain(format!(
                "phantom has negative total attenuation ({min})"
            )));
        }
        Ok(p)
    }

    /// Modified Shepp-Logan head phantom (higher-contrast variant), values
    /// scaled by `scale`.
    pub fn shepp_logan(scale: f64) -> Self {
        const TABLE: [(f64, f64, f64, f64, f64, f64); 10] = [
            (0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
            (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
            (0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
            (-0.22, 0.0, 0.16, 0.41, 18.0, -0.2),
            (0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
            (0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
            (0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
            (-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
            (0.0, -0.605, 0.023, 0.023, 0.0, 0.1),
            (0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
        ];
        Phantom {
            ellipses: TABLE
                .iter()
                .map(|&(cx, cy, a, b, deg, v)| Ellipse {
                    center_x: cx,
                    center_y: cy,
                    a,
                    b,
                    rotation: deg.to_radians(),
                    attenuation_delta: v * scale,
                })
                .collect(),
        }
    }

    /// [`Phantom::random`] drawn from the deterministic stream of `seed`.
    pub fn seeded(seed: u64, mu_water: f64) -> Self {
        Self::random(&mut crate::rng::stream(seed, 0), mu_water)
    }

    /// Randomized body-like phantom: a water ellipse with soft-tissue
    /// inclusions, optional low-density (lung) regions, dense (bone) spots
    /// and small fine-detail features. Values in 1/cm given water `mu_water`.
    pub fn random<R: Rng>(rng: &mut R, mu_water: f64) -> Self {
        loop {
            let mut ellipses = Vec::new();
            let bx = rng.random_range(0.70..0.86);
            let by = rng.random_range(0.56..0.72);
            let body = Ellipse {
                center_x: rng.random_range(-0.04..0.04),
                center_y: rng.random_range(-0.04..0.04),
                a: bx,
                b: by,
                rotation: rng.random_range(-0.25..0.25),
                attenuation_delta: mu_water,
            };
            ellipses.push(body);
            let inside = |rng: &mut R, margin: f64| {
                let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let r: f64 = rng.random_range(0.0..1.0f64).sqrt() * (1.0 - margin);
                (
                    body.center_x + r * bx * t.cos(),
                    body.center_y + r * by * t.sin(),
                )
            };
            let add = |rng: &mut R, axes: (f64, f64), delta: f64, margin: f64, out: &mut Vec<Ellipse>| {
                let (cx, cy) = inside(rng, margin);
                out.push(Ellipse {
                    center_x: cx,
                    center_y: cy,
                    a: rng.random_range(axes.0..axes.1),
                    b: rng.random_range(axes.0..axes.1),
                    rotation: rng.random_range(0.0..std::f64::consts::PI),
                    attenuation_delta: delta,
                });
            };
            for _ in 0..rng.random_range(0..=2) {
                add(rng, (0.10, 0.22), -0.75 * mu_water, 0.55, &mut ellipses);
            }
            for _ in 0..rng.random_range(4..=7) {
                let d = mu_water * rng.random_range(-0.08..0.08);
                add(rng, (0.08, 0.28), d, 0.4, &mut ellipses);
            }
            for _ in 0..rng.random_range(1..=2) {
                let d = mu_water * rng.random_range(0.6..1.0);
                add(rng, (0.04, 0.11), d, 0.35, &mut ellipses);
            }
            for _ in 0..rng.random_range(3..=6) {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let d = sign * mu_water * rng.random_range(0.05..0.2);
                add(rng, (0.015, 0.045), d, 0.3, &mut ellipses);
            }
            let p = Phantom { ellipses };
            if p.min_on_grid(128) >= 0.0 {
                return p;
            }
        }
    }

    /// Analytic attenuation at a point.
    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        self.ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.attenuation_delta)
            .sum()
    }

    fn min_on_grid(&self, n: usize) -> f64 {
        let mut min = f64::INFINITY;
        for r in 0..n {
            for c in 0..n {
                let (x, y) = pixel_center(n, r, c);
                min = min.min(self.value_at(x, y));
            }
        }
        min
    }
}

/// Normalized coordinates of the center of pixel `(row, col)` in an
/// `n`x`n` image. Row 0 is the top (`y` near 1).
#[inline]
pub fn pixel_center(n: usize, row: usize, col: usize) -> (f64, f64) {
    let pw = 2.0 / n as f64;
    (
        -1.0 + (col as f64 + 0.5) * pw,
        1.0 - (row as f64 + 0.5) * pw,
    )
}

pub fn rasterize_phantom(phantom: &Phantom, size: usize) -> Result<Image> {
    if size < 8 {
        return Err(Error::Parameter(format!(
            "phantom raster size must be at least 8, got {size}"
        )));
    }
    Ok(Image::from_fn(size, size, |r, c| {
        let (x, y) = pixel_center(size, r, c);
        phantom.value_at(x, y)
    }))
}

/// Attenuation (1/cm) to Hounsfield units.
pub fn mu_to_hu(mu: f64, mu_water: f64) -> f64 {
    1000.0 * (mu - mu_water) / mu_water
}

pub fn hu_to_mu(hu: f64, mu_water: f64) -> f64 {
    mu_water * (1.0 + hu / 1000.0)
}
