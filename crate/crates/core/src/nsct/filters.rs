//! Sparse 2D FIR kernels with periodic convolution, and the default
//! contourlet filter bank.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::image::Image;

/// Sparse 2D kernel: taps `(dy, dx, weight)` relative to the origin.
/// Taps are kept sorted and merged so that equal kernels compare equal.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    taps: Vec<(i32, i32, f64)>,
}

impl Kernel {
    pub fn delta() -> Self {
        Kernel {
            taps: vec![(0, 0, 1.0)],
        }
    }

    pub fn from_taps(taps: impl IntoIterator<Item = (i32, i32, f64)>) -> Self {
        let mut map: BTreeMap<(i32, i32), f64> = BTreeMap::new();
        for (dy, dx, w) in taps {
            *map.entry((dy, dx)).or_insert(0.0) += w;
        }
        Kernel {
            taps: map
                .into_iter()
                .filter(|&(_, w)| w != 0.0)
                .map(|((dy, dx), w)| (dy, dx, w))
                .collect(),
        }
    }

    /// Separable `row (x) col` from two centered odd-length 1D filters.
    pub fn separable(vertical: &[f64], horizontal: &[f64]) -> Self {
        let cv = (vertical.len() / 2) as i32;
        let ch = (horizontal.len() / 2) as i32;
        Kernel::from_taps(vertical.iter().enumerate().flat_map(|(i, &a)| {
            horizontal
                .iter()
                .enumerate()
                .map(move |(j, &b)| (i as i32 - cv, j as i32 - ch, a * b))
        }))
    }

    pub fn taps(&self) -> &[(i32, i32, f64)] {
        &self.taps
    }

    pub fn is_delta(&self) -> bool {
        self.taps == [(0, 0, 1.0)]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().map(|t| t.2).sum()
    }

    pub fn scale(&self, s: f64) -> Kernel {
        Kernel::from_taps(self.taps.iter().map(|&(y, x, w)| (y, x, w * s)))
    }

    pub fn add(&self, other: &Kernel) -> Kernel {
        Kernel::from_taps(self.taps.iter().chain(&other.taps).copied())
    }

    pub fn sub(&self, other: &Kernel) -> Kernel {
        self.add(&other.scale(-1.0))
    }

    /// Kernel composition (full linear convolution of the tap sets).
    pub fn compose(&self, other: &Kernel) -> Kernel {
        Kernel::from_taps(self.taps.iter().flat_map(|&(y1, x1, w1)| {
            other
                .taps
                .iter()
                .map(move |&(y2, x2, w2)| (y1 + y2, x1 + x2, w1 * w2))
        }))
    }

    /// Resampling by an integer matrix: tap `n` moves to `m * n`
    /// (`m` row-major over `(dy, dx)`). The frequency response becomes
    /// `H(m^T w)`.
    pub fn resample(&self, m: [[i32; 2]; 2]) -> Kernel {
        Kernel::from_taps(
            self.taps
                .iter()
                .map(|&(y, x, w)| (m[0][0] * y + m[0][1] * x, m[1][0] * y + m[1][1] * x, w)),
        )
    }

    /// A-trous dilation: `factor - 1` zeros between taps.
    pub fn dilate(&self, factor: i32) -> Kernel {
        self.resample([[factor, 0], [0, factor]])
    }

    /// Extent (rows, cols) of the smallest box containing every tap.
    pub fn span(&self) -> (usize, usize) {
        let (mut y0, mut y1, mut x0, mut x1) = (0, 0, 0, 0);
        for &(y, x, _) in &self.taps {
            y0 = y0.min(y);
            y1 = y1.max(y);
            x0 = x0.min(x);
            x1 = x1.max(x);
        }
        ((y1 - y0 + 1) as usize, (x1 - x0 + 1) as usize)
    }

    /// Periodic convolution: `out(r, c) = sum w * in(r - dy, c - dx)`.
    pub fn apply(&self, input: &Image) -> Image {
        let (h, w) = input.dims();
        let mut out = Image::zeros(h, w);
        self.apply_into(input, &mut out, false);
        out
    }

    /// Like [`apply`](Self::apply) but adds into `out` when `accumulate`.
    pub fn apply_into(&self, input: &Image, out: &mut Image, accumulate: bool) {
        let (h, w) = input.dims();
        debug_assert_eq!(out.dims(), (h, w));
        let src = input.data();
        let dst = out.data_mut();
        if !accumulate {
            dst.iter_mut().for_each(|v| *v = 0.0);
        }
        let (hi, wi) = (h as i64, w as i64);
        for &(dy, dx, wt) in &self.taps {
            let sy = (dy as i64).rem_euclid(hi) as usize;
            let sx = (dx as i64).rem_euclid(wi) as usize;
            for r in 0..h {
                // Source row for output row r is (r - dy) mod h.
                let rr = (r + h - sy) % h;
                let srow = &src[rr * w..(rr + 1) * w];
                let drow = &mut dst[r * w..(r + 1) * w];
                // Columns split into the non-wrapping and wrapping ranges.
                let (head, tail) = drow.split_at_mut(sx);
                for (d, s) in tail.iter_mut().zip(&srow[..w - sx]) {
                    *d += wt * s;
                }
                for (d, s) in head.iter_mut().zip(&srow[w - sx..]) {
                    *d += wt * s;
                }
            }
        }
    }

    /// Frequency response at `(wy, wx)` radians.
    pub fn response(&self, wy: f64, wx: f64) -> f64 {
        // Real part: every shipped kernel is point-symmetric.
        self.taps
            .iter()
            .map(|&(y, x, w)| w * (wy * y as f64 + wx * x as f64).cos())
            .sum()
    }
}

/// Two-channel filter pairs for the pyramid and the directional stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub pyramid_lowpass_analysis: Kernel,
    pub pyramid_highpass_analysis: Kernel,
    pub pyramid_lowpass_synthesis: Kernel,
    pub pyramid_highpass_synthesis: Kernel,
    /// Fan pair: channel 0 passes `|wx| < |wy|` (horizontal structures),
    /// channel 1 the complementary fan.
    pub fan_analysis: [Kernel; 2],
    pub fan_synthesis: [Kernel; 2],
    checksum: u32,
}

const DEFAULT_BANK: &str = include_str!("../../filters/maxflat.bank");
/// CRC-32 of `filters/maxflat.bank`.
pub const DEFAULT_BANK_CRC32: u32 = 0x0a9b_ed7c;

fn parse_taps(value: &str) -> Result<Vec<f64>> {
    let (nums, den) = value
        .split_once('/')
        .ok_or_else(|| Error::Config(format!("expected `taps / divisor`, got `{value}`")))?;
    let den: f64 = den
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad divisor in `{value}`")))?;
    let taps = nums
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map(|v| v / den)
                .map_err(|_| Error::Config(format!("bad tap `{t}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if taps.len() % 2 == 0 {
        return Err(Error::Config("filter prototypes must have odd length".into()));
    }
    Ok(taps)
}

/// Chebyshev expansion of a symmetric 1D filter: `H(w) = sum_k c_k cos(k w)`.
fn cosine_series(taps: &[f64]) -> Vec<f64> {
    let c = taps.len() / 2;
    (0..=c)
        .map(|k| if k == 0 { taps[c] } else { taps[c + k] + taps[c - k] })
        .collect()
}

impl FilterBank {
    /// Parses a bank description (see `filters/maxflat.bank`).
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad filter line `{line}`")))?;
            entries.insert(k.trim().to_string(), parse_taps(v)?);
        }
        let get = |k: &str| {
            entries
                .get(k)
                .ok_or_else(|| Error::Config(format!("filter bank is missing `{k}`")))
        };
        let h0 = get("pyramid.h0")?;
        let g0 = get("pyramid.g0")?;
        let fan = get("fan.halfband")?;

        let lo_a = Kernel::separable(h0, h0);
        let lo_s = Kernel::separable(g0, g0);
        let product = lo_s.compose(&lo_a);
        let hi_a = Kernel::delta().sub(&product);

        // Substitute cos(w) -> t = (cos wx - cos wy) / 2 in the cosine
        // series of the half-band prototype, using T_{k+1} = 2 t T_k - T_{k-1}.
        let t = Kernel::from_taps([(0, -1, 0.25), (0, 1, 0.25), (-1, 0, -0.25), (1, 0, -0.25)]);
        let coeffs = cosine_series(fan);
        let mut prev = Kernel::delta();
        let mut cur = t.clone();
        let mut fan0 = prev.scale(coeffs[0]);
        for (k, &ck) in coeffs.iter().enumerate().skip(1) {
            if k > 1 {
                let next = t.compose(&cur).scale(2.0).sub(&prev);
                prev = cur;
                cur = next;
            }
            fan0 = fan0.add(&cur.scale(ck));
        }
        let fan1 = Kernel::delta().sub(&fan0);

        let mut bank = FilterBank {
            pyramid_lowpass_analysis: lo_a,
            pyramid_highpass_analysis: hi_a,
            pyramid_lowpass_synthesis: lo_s,
            pyramid_highpass_synthesis: Kernel::delta(),
            fan_analysis: [fan0, fan1],
            fan_synthesis: [Kernel::delta(), Kernel::delta()],
            checksum: 0,
        };
        bank.checksum = bank.coefficient_crc();
        Ok(bank)
    }

    pub fn maxflat() -> Self {
        debug_assert_eq!(crc32fast::hash(DEFAULT_BANK.as_bytes()), DEFAULT_BANK_CRC32);
        Self::parse(DEFAULT_BANK).expect("shipped filter bank parses")
    }

    /// CRC-32 over every kernel's taps; identifies the bank in coefficient
    /// file sidecars.
    pub fn checksum(&self) -> u32 {
        self.checksum
    }

    fn coefficient_crc(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        let kernels = [
            &self.pyramid_lowpass_analysis,
            &self.pyramid_highpass_analysis,
            &self.pyramid_lowpass_synthesis,
            &self.pyramid_highpass_synthesis,
            &self.fan_analysis[0],
            &self.fan_analysis[1],
            &self.fan_synthesis[0],
            &self.fan_synthesis[1],
        ];
        for k in kernels {
            h.update(&(k.taps.len() as u32).to_le_bytes());
            for &(y, x, w) in &k.taps {
                h.update(&y.to_le_bytes());
                h.update(&x.to_le_bytes());
                h.update(&w.to_le_bytes());
            }
        }
        h.finalize()
    }
}

impl Default for FilterBank {
    fn default() -> Self {
        Self::maxflat()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn shipped_file_checksum() {
        assert_eq!(crc32fast::hash(DEFAULT_BANK.as_bytes()), DEFAULT_BANK_CRC32);
    }

    #[test]
    fn pyramid_pair_is_complementary() {
        let b = FilterBank::maxflat();
        let lhs = b
            .pyramid_lowpass_synthesis
            .compose(&b.pyramid_lowpass_analysis)
            .add(&b.pyramid_highpass_synthesis.compose(&b.pyramid_highpass_analysis));
        assert_eq!(lhs, Kernel::delta());
        assert_eq!(b.pyramid_lowpass_analysis.sum(), 1.0);
        assert_eq!(b.pyramid_lowpass_synthesis.sum(), 1.0);
        assert_eq!(b.pyramid_highpass_analysis.sum(), 0.0);
        assert_eq!(b.pyramid_highpass_analysis.span(), (7, 7));
    }

    #[test]
    fn highpass_has_two_vanishing_moments() {
        let k = FilterBank::maxflat().pyramid_highpass_analysis;
        let m = |py: i32, px: i32| -> f64 {
            k.taps()
                .iter()
                .map(|&(y, x, w)| w * (y as f64).powi(py) * (x as f64).powi(px))
                .sum()
        };
        for (py, px) in [(0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (3, 0), (2, 1)] {
            assert_eq!(m(py, px), 0.0, "moment ({py},{px})");
        }
    }

    #[test]
    fn fan_pair_orientation() {
        let b = FilterBank::maxflat();
        let [f0, f1] = &b.fan_analysis;
        assert_eq!(f0.add(f1), Kernel::delta());
        // Vertical frequencies (horizontal structures) pass channel 0.
        assert!((f0.response(PI, 0.0) - 1.0).abs() < 1e-12);
        assert!(f0.response(0.0, PI).abs() < 1e-12);
        assert!((f1.response(0.0, PI) - 1.0).abs() < 1e-12);
        // Half-band: responses on the fan boundary are one half.
        assert!((f0.response(1.0, 1.0) - 0.5).abs() < 1e-12);
        assert_eq!(f0.span(), (7, 7));
    }

    #[test]
    fn periodic_convolution_matches_direct_sum() {
        let img = Image::from_fn(9, 7, |r, c| ((r * 7 + c) as f64).sin());
        let k = Kernel::from_taps([(0, 0, 0.5), (-2, 1, 0.25), (3, -4, -1.5), (10, 9, 2.0)]);
        let out = k.apply(&img);
        for r in 0..9i64 {
            for c in 0..7i64 {
                let mut e = 0.0;
                for &(dy, dx, w) in k.taps() {
                    e += w * img.get(
                        (r - dy as i64).rem_euclid(9) as usize,
                        (c - dx as i64).rem_euclid(7) as usize,
                    );
                }
                assert!((out.get(r as usize, c as usize) - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn resampling_maps_frequency_response() {
        let f = FilterBank::maxflat().fan_analysis[0].clone();
        let q = [[1, 1], [-1, 1]];
        let fq = f.resample(q);
        for &(wy, wx) in &[(0.3, -1.2), (2.0, 0.7), (-0.4, 0.1)] {
            // H(Q^T w) with Q^T = [[1, -1], [1, 1]].
            let expect = f.response(wy - wx, wy + wx);
            assert!((fq.response(wy, wx) - expect).abs() < 1e-12);
        }
    }
}
