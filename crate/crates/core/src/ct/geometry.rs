use std::f64::consts::{PI, SQRT_2, TAU};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::image::{self, Image, MultiImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beam {
    Parallel,
    /// Flat equispaced detector. Distances are normalized (image half-width = 1).
    Fan {
        source_to_iso: f64,
        source_to_detector: f64,
    },
}

/// Acquisition geometry. Lengths are in normalized image units, where the
/// reconstructed square spans `[-1, 1]`; `fov_cm` is its physical width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub beam: Beam,
    pub n_views: usize,
    pub n_detectors: usize,
    /// Angular range covered by the views, radians. Views sit at
    /// `v * view_range / n_views`.
    pub view_range: f64,
    /// Detector pitch in normalized units (on the detector plane for fan beam).
    pub detector_spacing: f64,
    pub fov_cm: f64,
}

pub const DEFAULT_FOV_CM: f64 = 20.0;

impl Geometry {
    /// Parallel beam over 180 degrees with one detector per pixel width,
    /// covering the image diagonal.
    pub fn parallel(size: usize, n_views: usize) -> Self {
        let half = (size as f64 * SQRT_2 / 2.0).ceil() as usize + 1;
        Geometry {
            beam: Beam::Parallel,
            n_views,
            n_detectors: 2 * half + 1,
            view_range: PI,
            detector_spacing: 2.0 / size as f64,
            fov_cm: DEFAULT_FOV_CM,
        }
    }

    /// Full-rotation fan beam whose detector covers the image's circumscribed
    /// circle.
    pub fn fan(
        size: usize,
        n_views: usize,
        source_to_iso: f64,
        source_to_detector: f64,
    ) -> Self {
        let half_angle = (SQRT_2 / source_to_iso).asin();
        let half_width = source_to_detector * half_angle.tan();
        let spacing = 2.0 / size as f64 * source_to_detector / source_to_iso;
        let half = (half_width / spacing).ceil() as usize + 1;
        Geometry {
            beam: Beam::Fan {
                source_to_iso,
                source_to_detector,
            },
            n_views,
            n_detectors: 2 * half + 1,
            view_range: TAU,
            detector_spacing: spacing,
            fov_cm: DEFAULT_FOV_CM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_views < 1 {
            return Err(Error::Parameter("n_views must be at least 1".into()));
        }
        if self.n_detectors < 2 {
            return Err(Error::Parameter("n_detectors must be at least 2".into()));
        }
        if !(self.detector_spacing > 0.0 && self.view_range > 0.0 && self.fov_cm > 0.0) {
            return Err(Error::Parameter(
                "detector spacing, view range and field of view must be positive".into(),
            ));
        }
        if let Beam::Fan {
            source_to_iso,
            source_to_detector,
        } = self.beam
        {
            if !(source_to_iso > SQRT_2 && source_to_detector > source_to_iso) {
                return Err(Error::Parameter(format!(
                    "fan beam needs sqrt(2) < source_to_iso < source_to_detector, got {source_to_iso}, {source_to_detector}"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn view_angle(&self, view: usize) -> f64 {
        view as f64 * self.view_range / self.n_views as f64
    }

    /// Signed detector coordinate of detector `d`, centered on the array.
    #[inline]
    pub fn detector_offset(&self, d: usize) -> f64 {
        (d as f64 - (self.n_detectors as f64 - 1.0) / 2.0) * self.detector_spacing
    }

    pub fn to_config(&self) -> Config {
        let mut c = Config::new();
        match self.beam {
            Beam::Parallel => c.set("beam", "parallel"),
            Beam::Fan {
                source_to_iso,
                source_to_detector,
            } => {
                c.set("beam", "fan");
                c.set("source_to_iso", format_f64(source_to_iso));
                c.set("source_to_detector", format_f64(source_to_detector));
            }
        }
        c.set("n_views", self.n_views);
        c.set("n_detectors", self.n_detectors);
        c.set("view_range", format_f64(self.view_range));
        c.set("detector_spacing", format_f64(self.detector_spacing));
        c.set("fov_cm", format_f64(self.fov_cm));
        c
    }

    pub fn from_config(c: &Config) -> Result<Self> {
        let need = |k: &str| -> Result<f64> {
            c.get::<f64>(k)?
                .ok_or_else(|| Error::Config(format!("geometry is missing `{k}`")))
        };
        let beam = match c.get_str("beam").unwrap_or("parallel") {
            "parallel" => Beam::Parallel,
            "fan" => Beam::Fan {
                source_to_iso: need("source_to_iso")?,
                source_to_detector: need("source_to_detector")?,
            },
            other => return Err(Error::Config(format!("unknown beam `{other}`"))),
        };
        let g = Geometry {
            beam,
            n_views: need("n_views")? as usize,
            n_detectors: need("n_detectors")? as usize,
            view_range: need("view_range")?,
            detector_spacing: need("detector_spacing")?,
            fov_cm: c.get_or("fov_cm", DEFAULT_FOV_CM)?,
        };
        g.validate()?;
        Ok(g)
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Line integrals, `n_views` rows by `n_detectors` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub data: Image,
    pub geometry: Geometry,
}

impl Sinogram {
    pub fn zeros(geometry: Geometry) -> Self {
        Sinogram {
            data: Image::zeros(geometry.n_views, geometry.n_detectors),
            geometry,
        }
    }

    pub fn new(data: Image, geometry: Geometry) -> Result<Self> {
        geometry.validate()?;
        if data.dims() != (geometry.n_views, geometry.n_detectors) {
            return Err(Error::Dimension(format!(
                "sinogram is {}x{}, geometry expects {}x{}",
                data.height(),
                data.width(),
                geometry.n_views,
                geometry.n_detectors
            )));
        }
        Ok(Sinogram { data, geometry })
    }
}

/// Acquisition metadata stored next to a sinogram.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SinogramMeta {
    pub seed: Option<u64>,
    pub incident_photons: Option<f64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".geom");
    PathBuf::from(s)
}

/// Writes `<path>` (WIMG, one channel) and `<path>.geom` (key=value).
pub fn save_sinogram(path: impl AsRef<Path>, sino: &Sinogram, meta: &SinogramMeta) -> Result<()> {
    let path = path.as_ref();
    image::save_wimg(path, &MultiImage::from(sino.data.clone()))?;
    let mut text = String::from("# sinogram geometry\n");
    let mut cfg = sino.geometry.to_config();
    if let Some(seed) = meta.seed {
        cfg.set("seed", seed);
    }
    if let Some(i0) = meta.incident_photons {
        cfg.set("i0", format_f64(i0));
    }
    let _ = write!(text, "{cfg}");
    let side = sidecar_path(path);
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn load_sinogram(path: impl AsRef<Path>) -> Result<(Sinogram, SinogramMeta)> {
    let path = path.as_ref();
    let data = image::load_image(path)?;
    let cfg = Config::load(sidecar_path(path))?;
    let geometry = Geometry::from_config(&cfg)?;
    let meta = SinogramMeta {
        seed: cfg.get("seed")?,
        incident_photons: cfg.get("i0")?,
    };
    Ok((Sinogram::new(data, geometry)?, meta))
}
