//! Browser bindings: simulate a low-dose scan, look at its contourlet bands
//! and TV-denoise the reconstruction. Images cross the boundary as row-major
//! 8-bit grayscale buffers.

use wasm_bindgen::prelude::*;

use wavresnet::ct::{self, Phantom};
use wavresnet::image::window_hu;
use wavresnet::mbir::{tv_prox_chambolle, TvParams};
use wavresnet::metrics::{psnr, reference_range};
use wavresnet::nsct::{nsct_forward, CoeffStack, DecompositionSpec, FilterBank};
use wavresnet::Image;

const MU_WATER: f64 = 0.2;
const WINDOW: (f64, f64) = (-160.0, 240.0);

fn js_err(e: wavresnet::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn stretch(image: &Image) -> Vec<u8> {
    let (lo, hi) = image.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    image
        .data()
        .iter()
        .map(|v| ((v - lo) / span * 255.0).round() as u8)
        .collect()
}

fn to_hu(mu: &Image) -> Image {
    mu.map(|m| ct::mu_to_hu(m, MU_WATER))
}

/// One simulated acquisition and everything derived from it.
#[wasm_bindgen]
pub struct Scan {
    size: usize,
    truth: Image,
    sinogram: Image,
    fbp: Image,
    bands: Option<CoeffStack>,
}

#[wasm_bindgen]
impl Scan {
    /// Random body phantom (`seed`), or Shepp-Logan when `seed` is 0,
    /// projected with a parallel beam and reconstructed by FBP at
    /// `photons` incident photons per ray.
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, views: usize, photons: f64, seed: u64) -> Result<Scan, JsValue> {
        Scan::simulate(size, views, photons, seed).map_err(js_err)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sinogram_width(&self) -> usize {
        self.sinogram.width()
    }

    pub fn sinogram_height(&self) -> usize {
        self.sinogram.height()
    }

    pub fn truth_pixels(&self) -> Vec<u8> {
        window(&self.truth)
    }

    pub fn sinogram_pixels(&self) -> Vec<u8> {
        stretch(&self.sinogram)
    }

    pub fn fbp_pixels(&self) -> Vec<u8> {
        window(&self.fbp)
    }

    pub fn fbp_psnr(&self) -> f64 {
        self.psnr_of(&self.fbp)
    }

    /// Decomposes the FBP image with `directions` (comma separated, one
    /// entry per level) and returns the number of bands.
    pub fn decompose(&mut self, directions: &str) -> Result<usize, JsValue> {
        let levels = directions
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| JsValue::from_str("directions must be a comma separated list"))?;
        let spec = DecompositionSpec::new(levels).map_err(js_err)?;
        let stack = nsct_forward(&self.fbp, &spec, &FilterBank::maxflat()).map_err(js_err)?;
        let n = stack.bands.len();
        self.bands = Some(stack);
        Ok(n)
    }

    /// Band `index` of the last decomposition, contrast-stretched.
    pub fn band_pixels(&self, index: usize) -> Result<Vec<u8>, JsValue> {
        let stack = self.bands.as_ref().ok_or_else(|| JsValue::from_str("decompose first"))?;
        let band = stack
            .bands
            .get(index)
            .ok_or_else(|| JsValue::from_str("band index out of range"))?;
        Ok(stretch(band))
    }

    /// Level and direction of band `index` as `"level/direction"`; the
    /// lowpass band is `"lowpass"`.
    pub fn band_label(&self, index: usize) -> String {
        match self.bands.as_ref().and_then(|s| s.spec.band_label(index)) {
            Some((level, dir)) => format!("{level}/{dir}"),
            None => "lowpass".into(),
        }
    }

    /// TV proximal denoising of the FBP image with `weight` in HU.
    pub fn tv_denoise(&self, weight: f64, iterations: usize) -> Result<Denoised, JsValue> {
        let params = TvParams {
            chambolle_iters: iterations.max(1),
            ..TvParams::default()
        };
        let out = tv_prox_chambolle(&self.fbp, weight, &params).map_err(js_err)?;
        Ok(Denoised {
            psnr_db: self.psnr_of(&out),
            pixels: window(&out),
        })
    }
}

impl Scan {
    pub fn simulate(size: usize, views: usize, photons: f64, seed: u64) -> wavresnet::Result<Scan> {
        let phantom = match seed {
            0 => Phantom::shepp_logan(MU_WATER),
            s => Phantom::seeded(s, MU_WATER),
        };
        let mu = ct::rasterize_phantom(&phantom, size)?;
        let geom = ct::Geometry::parallel(size, views);
        let clean = ct::forward_project(&mu, &geom)?;
        let noisy = ct::inject_low_dose_noise(&clean, photons, seed ^ 0x5eed)?;
        let fbp = to_hu(&ct::fbp_reconstruct(&noisy, size)?);
        Ok(Scan {
            size,
            truth: to_hu(&mu),
            sinogram: noisy.data,
            fbp,
            bands: None,
        })
    }

    pub fn fbp(&self) -> &Image {
        &self.fbp
    }

    fn psnr_of(&self, image: &Image) -> f64 {
        psnr(image, &self.truth, reference_range([&self.truth])).unwrap_or(f64::NAN)
    }
}

#[wasm_bindgen]
pub struct Denoised {
    psnr_db: f64,
    pixels: Vec<u8>,
}

#[wasm_bindgen]
impl Denoised {
    pub fn psnr_db(&self) -> f64 {
        self.psnr_db
    }

    pub fn pixels(&self) -> Vec<u8> {
        self.pixels.clone()
    }
}

fn window(hu: &Image) -> Vec<u8> {
    window_hu(hu, WINDOW.0, WINDOW.1)
        .map(|g| g.data)
        .unwrap_or_default()
}
