//! Synthetic routine/quarter-dose pairs and the manifest that indexes them.
//!
//! Manifest lines are tab separated: `routine_path`, `quarter_path`, then
//! any number of `key=value` provenance fields. Paths are relative to the
//! manifest's directory. Lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::settings::SimConfig;
use crate::ct::{self, Phantom, Sinogram, SinogramMeta};
use crate::error::{Error, Result};
use crate::image::{load_image, save_image, Image};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const GEOMETRY_FILE: &str = "geometry.cfg";

/// Seed roles for [`split_seed`].
pub const ROLE_PHANTOM: u64 = 0;
pub const ROLE_ROUTINE_NOISE: u64 = 1;
pub const ROLE_QUARTER_NOISE: u64 = 2;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-pair, per-role seed: `splitmix64(splitmix64(master ^ splitmix64(pair)) ^ role)`.
/// Pairs never share a stream, so they can be synthesized in any order.
pub fn split_seed(master: u64, pair: u64, role: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(pair)) ^ role)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub routine: PathBuf,
    pub quarter: PathBuf,
    pub provenance: BTreeMap<String, String>,
}

impl ManifestEntry {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.provenance.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Directory that entry paths are relative to.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offset = 0u64;
        for (lineno, line) in text.lines().enumerate() {
            let start = offset;
            offset += line.len() as u64 + 1;
            let t = line.trim_end_matches('\r');
            if t.trim().is_empty() || t.starts_with('#') {
                continue;
            }
            let mut fields = t.split('\t');
            let (Some(routine), Some(quarter)) = (fields.next(), fields.next()) else {
                return Err(Error::format(start, format!("manifest line {} needs two paths", lineno + 1)));
            };
            if routine.is_empty() || quarter.is_empty() {
                return Err(Error::format(start, format!("manifest line {} has an empty path", lineno + 1)));
            }
            let mut provenance = BTreeMap::new();
            for f in fields {
                let Some((k, v)) = f.split_once('=') else {
                    return Err(Error::format(
                        start,
                        format!("manifest line {}: `{f}` is not key=value", lineno + 1),
                    ));
                };
                provenance.insert(k.trim().to_string(), v.trim().to_string());
            }
            entries.push(ManifestEntry {
                routine: routine.into(),
                quarter: quarter.into(),
                provenance,
            });
        }
        Ok(DatasetManifest {
            root: root.into(),
            entries,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# routine\tquarter\tprovenance\n");
        for e in &self.entries {
            let _ = write!(out, "{}\t{}", e.routine.display(), e.quarter.display());
            for (k, v) in &e.provenance {
                let _ = write!(out, "\t{k}={v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// `(routine, quarter)` images of entry `i`.
    pub fn load_pair(&self, i: usize) -> Result<(Image, Image)> {
        let e = self.entry(i)?;
        let routine = load_image(self.resolve(&e.routine))?;
        let quarter = load_image(self.resolve(&e.quarter))?;
        if routine.dims() != quarter.dims() {
            return Err(Error::Dimension(format!(
                "pair {i}: routine is {:?} but quarter is {:?}",
                routine.dims(),
                quarter.dims()
            )));
        }
        Ok((routine, quarter))
    }

    /// Noiseless FBP image of entry `i`, when recorded.
    pub fn load_clean(&self, i: usize) -> Result<Image> {
        let e = self.entry(i)?;
        let p = e
            .get("clean")
            .ok_or_else(|| Error::Config(format!("pair {i} records no clean image")))?;
        load_image(self.resolve(Path::new(p)))
    }

    /// Noisy quarter-dose sinogram of entry `i`, when recorded.
    pub fn load_quarter_sinogram(&self, i: usize) -> Result<(Sinogram, SinogramMeta)> {
        let e = self.entry(i)?;
        let p = e
            .get("quarter_sino")
            .ok_or_else(|| Error::Config(format!("pair {i} records no quarter-dose sinogram")))?;
        ct::load_sinogram(self.resolve(Path::new(p)))
    }

    /// Water attenuation used for the HU scale, default 0.2.
    pub fn mu_water(&self, i: usize) -> Result<f64> {
        match self.entry(i)?.get("mu_water") {
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("pair {i}: bad mu_water `{s}`"))),
            None => Ok(super::settings::DEFAULT_MU_WATER),
        }
    }

    fn entry(&self, i: usize) -> Result<&ManifestEntry> {
        self.entries
            .get(i)
            .ok_or_else(|| Error::Config(format!("manifest has no entry {i}")))
    }

    /// Every referenced image exists, parses, and pairs match in size.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Config("manifest lists no pairs".into()));
        }
        for i in 0..self.entries.len() {
            self.load_pair(i)?;
        }
        Ok(())
    }
}

fn fbp_hu(sino: &Sinogram, size: usize, mu_water: f64) -> Result<Image> {
    Ok(ct::fbp_reconstruct(sino, size)?.map(|m| ct::mu_to_hu(m, mu_water)))
}

/// Simulates `sim.n_phantoms` pairs into `out_dir` and writes the manifest.
///
/// Per pair `i`: a random phantom from `split_seed(seed, i, ROLE_PHANTOM)`
/// is rasterized and projected; the clean sinogram gets independent noise
/// realizations at routine and quarter dose; each is reconstructed by FBP
/// and stored in HU. The noiseless FBP and the quarter-dose sinogram are
/// kept for evaluation and the MBIR baseline.
pub fn synth_dataset(sim: &SimConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    sim.geometry.validate()?;
    if sim.n_phantoms == 0 {
        return Err(Error::Config("sim.phantoms must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let geom_path = out_dir.join(GEOMETRY_FILE);
    let geom_text = format!("# acquisition geometry\n{}", sim.geometry.to_config());
    std::fs::write(&geom_path, geom_text).map_err(|e| Error::io(&geom_path, e))?;

    let i0_quarter = sim.i0_quarter();
    let mut entries = Vec::with_capacity(sim.n_phantoms);
    for i in 0..sim.n_phantoms {
        let pair = i as u64;
        let phantom_seed = split_seed(sim.seed, pair, ROLE_PHANTOM);
        let routine_seed = split_seed(sim.seed, pair, ROLE_ROUTINE_NOISE);
        let quarter_seed = split_seed(sim.seed, pair, ROLE_QUARTER_NOISE);

        let phantom = Phantom::seeded(phantom_seed, sim.mu_water);
        let raster = ct::rasterize_phantom(&phantom, sim.size)?;
        let clean_sino = ct::forward_project(&raster, &sim.geometry)?;
        let routine_sino = ct::inject_low_dose_noise(&clean_sino, sim.i0_routine, routine_seed)?;
        let quarter_sino = ct::inject_low_dose_noise(&clean_sino, i0_quarter, quarter_seed)?;

        let name = |what: &str| format!("pair_{i:03}_{what}.wimg");
        save_image(out_dir.join(name("clean")), &fbp_hu(&clean_sino, sim.size, sim.mu_water)?)?;
        save_image(out_dir.join(name("routine")), &fbp_hu(&routine_sino, sim.size, sim.mu_water)?)?;
        save_image(out_dir.join(name("quarter")), &fbp_hu(&quarter_sino, sim.size, sim.mu_water)?)?;
        ct::save_sinogram(
            out_dir.join(name("quarter_sino")),
            &quarter_sino,
            &SinogramMeta {
                seed: Some(quarter_seed),
                incident_photons: Some(i0_quarter),
            },
        )?;

        let mut provenance = BTreeMap::new();
        provenance.insert("phantom_seed".into(), phantom_seed.to_string());
        provenance.insert("routine_seed".into(), routine_seed.to_string());
        provenance.insert("quarter_seed".into(), quarter_seed.to_string());
        provenance.insert("i0_routine".into(), format!("{:?}", sim.i0_routine));
        provenance.insert("i0_quarter".into(), format!("{:?}", i0_quarter));
        provenance.insert("mu_water".into(), format!("{:?}", sim.mu_water));
        provenance.insert("geometry".into(), GEOMETRY_FILE.into());
        provenance.insert("clean".into(), name("clean"));
        provenance.insert("quarter_sino".into(), name("quarter_sino"));
        entries.push(ManifestEntry {
            routine: name("routine").into(),
            quarter: name("quarter").into(),
            provenance,
        });
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
