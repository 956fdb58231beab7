//! Nonsubsampled contourlet transform.
//!
//! [`nsct_forward`] is the embedding applied to network inputs and labels,
//! [`nsct_inverse`] its left inverse, and [`residual_label`] the
//! coefficient-domain residual `T(routine) - T(quarter)`.
//!
//! Band order is fixed: `[lowpass, level 1 directions..., level 2 ...]`,
//! level 1 being the finest scale. With the default 4 levels and
//! `[4, 4, 4, 2]` directions this gives 15 bands.

pub mod dfb;
pub mod filters;
pub mod pyramid;

use std::path::Path;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::image::{self, Image, MultiImage};

pub use dfb::{nsdfb_analyze, nsdfb_synthesize};
pub use filters::{FilterBank, Kernel};
pub use pyramid::{nsp_analyze, nsp_synthesize};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecompositionSpec {
    /// Directional bands per pyramid level, finest first. A count of 1
    /// keeps the bandpass image undivided.
    pub directions_per_level: Vec<usize>,
}

impl Default for DecompositionSpec {
    fn default() -> Self {
        DecompositionSpec {
            directions_per_level: vec![4, 4, 4, 2],
        }
    }
}

impl DecompositionSpec {
    pub fn new(directions_per_level: Vec<usize>) -> Result<Self> {
        let s = DecompositionSpec {
            directions_per_level,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn levels(&self) -> usize {
        self.directions_per_level.len()
    }

    pub fn band_count(&self) -> usize {
        1 + self.directions_per_level.iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.directions_per_level.is_empty() {
            return Err(Error::Parameter("decomposition needs at least one level".into()));
        }
        for &d in &self.directions_per_level {
            if !matches!(d, 1 | 2 | 4 | 8) {
                return Err(Error::Parameter(format!(
                    "direction count must be 1, 2, 4 or 8, got {d}"
                )));
            }
        }
        Ok(())
    }

    /// `(level, direction)` of band `index`; `None` for the lowpass band.
    pub fn band_label(&self, index: usize) -> Option<(usize, usize)> {
        let mut i = index.checked_sub(1)?;
        for (level, &d) in self.directions_per_level.iter().enumerate() {
            if i < d {
                return Some((level + 1, i));
            }
            i -= d;
        }
        None
    }
}

/// Undecimated coefficient stack: every band has the source dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffStack {
    pub bands: Vec<Image>,
    pub spec: DecompositionSpec,
}

impl CoeffStack {
    pub fn zeros(height: usize, width: usize, spec: DecompositionSpec) -> Self {
        CoeffStack {
            bands: vec![Image::zeros(height, width); spec.band_count()],
            spec,
        }
    }

    pub fn new(bands: Vec<Image>, spec: DecompositionSpec) -> Result<Self> {
        spec.validate()?;
        if bands.len() != spec.band_count() {
            return Err(Error::Dimension(format!(
                "{} bands, decomposition expects {}",
                bands.len(),
                spec.band_count()
            )));
        }
        for b in &bands[1..] {
            bands[0].same_dims(b)?;
        }
        Ok(CoeffStack { bands, spec })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.bands[0].dims()
    }

    pub fn lowpass(&self) -> &Image {
        &self.bands[0]
    }

    pub fn to_multi(&self) -> MultiImage {
        MultiImage::from_images(&self.bands).expect("bands share dimensions")
    }

    pub fn from_multi(m: MultiImage, spec: DecompositionSpec) -> Result<Self> {
        CoeffStack::new(m.into_images(), spec)
    }

    fn zip_with(&self, other: &CoeffStack, f: impl Fn(&Image, &Image) -> Result<Image>) -> Result<CoeffStack> {
        if self.spec != other.spec {
            return Err(Error::Dimension("coefficient stacks use different decompositions".into()));
        }
        Ok(CoeffStack {
            bands: self
                .bands
                .iter()
                .zip(&other.bands)
                .map(|(a, b)| f(a, b))
                .collect::<Result<_>>()?,
            spec: self.spec.clone(),
        })
    }

    pub fn add(&self, other: &CoeffStack) -> Result<CoeffStack> {
        self.zip_with(other, Image::add)
    }

    pub fn sub(&self, other: &CoeffStack) -> Result<CoeffStack> {
        self.zip_with(other, Image::sub)
    }

    pub fn scale(&self, s: f64) -> CoeffStack {
        CoeffStack {
            bands: self.bands.iter().map(|b| b.scale(s)).collect(),
            spec: self.spec.clone(),
        }
    }
}

/// Forward transform `T`.
pub fn nsct_forward(image: &Image, spec: &DecompositionSpec, bank: &FilterBank) -> Result<CoeffStack> {
    spec.validate()?;
    let (low, bandpass) = nsp_analyze(image, spec.levels(), bank)?;
    let mut bands = Vec::with_capacity(spec.band_count());
    bands.push(low);
    for (j, (band, &dirs)) in bandpass.into_iter().zip(&spec.directions_per_level).enumerate() {
        if dirs == 1 {
            bands.push(band);
        } else {
            let dilation = pyramid::level_dilation(j);
            bands.extend(dfb::nsdfb_analyze_dilated(&band, dirs, bank, dilation)?);
        }
    }
    Ok(CoeffStack {
        bands,
        spec: spec.clone(),
    })
}

/// Synthesis `T†`: exact left inverse of [`nsct_forward`], defined for any
/// stack with the right layout.
pub fn nsct_inverse(stack: &CoeffStack, bank: &FilterBank) -> Result<Image> {
    let spec = &stack.spec;
    spec.validate()?;
    if stack.bands.len() != spec.band_count() {
        return Err(Error::Dimension(format!(
            "{} bands, decomposition expects {}",
            stack.bands.len(),
            spec.band_count()
        )));
    }
    let mut bandpass = Vec::with_capacity(spec.levels());
    let mut next = 1;
    for (j, &dirs) in spec.directions_per_level.iter().enumerate() {
        let chans = &stack.bands[next..next + dirs];
        next += dirs;
        if dirs == 1 {
            bandpass.push(chans[0].clone());
        } else {
            let dilation = pyramid::level_dilation(j);
            bandpass.push(dfb::nsdfb_synthesize_dilated(chans, bank, dilation)?);
        }
    }
    nsp_synthesize(&stack.bands[0], &bandpass, bank)
}

/// Residual label `T(routine) - T(quarter)`.
pub fn residual_label(
    routine: &Image,
    quarter: &Image,
    spec: &DecompositionSpec,
    bank: &FilterBank,
) -> Result<CoeffStack> {
    routine.same_dims(quarter)?;
    nsct_forward(routine, spec, bank)?.sub(&nsct_forward(quarter, spec, bank)?)
}

fn spec_sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".nsct");
    s.into()
}

/// Writes the stack as a multi-channel WIMG plus a `<path>.nsct` sidecar
/// holding the decomposition and filter checksum.
pub fn save_coeffs(path: impl AsRef<Path>, stack: &CoeffStack, bank: &FilterBank) -> Result<()> {
    let path = path.as_ref();
    image::save_wimg(path, &stack.to_multi())?;
    let mut cfg = Config::new();
    cfg.set("levels", stack.spec.levels());
    cfg.set(
        "directions",
        stack
            .spec
            .directions_per_level
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );
    cfg.set("bands", stack.spec.band_count());
    cfg.set("filter_crc32", format!("{:08x}", bank.checksum()));
    let side = spec_sidecar(path);
    std::fs::write(&side, cfg.to_string()).map_err(|e| Error::io(&side, e))
}

/// Loads a stack written by [`save_coeffs`], rejecting files produced with
/// a different filter bank.
pub fn load_coeffs(path: impl AsRef<Path>, bank: &FilterBank) -> Result<CoeffStack> {
    let path = path.as_ref();
    let cfg = Config::load(spec_sidecar(path))?;
    let dirs: Vec<usize> = cfg
        .get_list("directions")?
        .ok_or_else(|| Error::Config("coefficient sidecar lacks `directions`".into()))?;
    let spec = DecompositionSpec::new(dirs)?;
    let crc = cfg.get_str("filter_crc32").unwrap_or_default();
    if crc != format!("{:08x}", bank.checksum()) {
        return Err(Error::Config(format!(
            "coefficients were produced by filter bank {crc}, not {:08x}",
            bank.checksum()
        )));
    }
    CoeffStack::from_multi(image::load_wimg(path)?, spec)
}
