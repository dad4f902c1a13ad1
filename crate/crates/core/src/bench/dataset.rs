//! Synthetic turbulent/event dataset generation and its manifest.
//!
//! Each clean image is center-cropped, rendered through the turbulence
//! simulator, and converted to an event stream from its latent frames.
//! Artifacts land in one directory per entry; `manifest.json` at the root
//! lists them with paths relative to the root and records a train/test split.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::scenes::{synthetic_scene, SCENE_SIZE};
use crate::config::Config;
use crate::error::{argument, validation, Error, Result};
use crate::evsim::{simulate_events, SimulatedEvents, ThresholdModel};
use crate::formation::Exposure;
use crate::image::Image;
use crate::io::{
    read_events, read_flow, read_image, write_events, write_file, write_flow, write_image,
};
use crate::rng::{splitmix64, Rng};
use crate::turbsim::{render_turbulent, RenderedTurbulence, TiltFlow, TurbulenceParams};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "turbev-manifest";
pub const MANIFEST_VERSION: u32 = 1;

const SPLIT_STREAM: u64 = 0x5B1;

/// The `dataset` config block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Side of the center crop taken from every clean image.
    pub image_size: usize,
    /// Procedural scenes to generate when no clean directory is given.
    pub synthetic_count: usize,
    /// Side of procedural scenes before cropping.
    pub scene_size: usize,
    pub train_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            image_size: 592,
            synthetic_count: 0,
            scene_size: SCENE_SIZE,
            train_fraction: 0.9,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size > u16::MAX as usize {
            return Err(argument(format!(
                "image_size out of range: {}",
                self.image_size
            )));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(argument(format!(
                "train_fraction must lie in [0, 1], got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub clean_path: String,
    pub turbulent_path: String,
    pub events_path: String,
    pub tilt_ref_path: String,
    /// SHA-256 of the canonical JSON of the entry's simulation parameters.
    pub params_hash: String,
    pub exposure_start_us: i64,
    pub exposure_end_us: i64,
    /// Time of the reference latent whose tilt is stored in `tilt_ref_path`.
    pub t_ref_us: i64,
}

impl ManifestEntry {
    pub fn exposure(&self) -> Result<Exposure> {
        Exposure::new(self.exposure_start_us, self.exposure_end_us)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub image_size: usize,
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Parses and checks the manifest; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<(DatasetManifest, PathBuf)> {
        let path = path.as_ref();
        let text = crate::io::read_to_string(path)?;
        let m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| validation(format!("manifest: {e}")))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate(&root)?;
        Ok((m, root))
    }

    pub fn validate(&self, root: &Path) -> Result<()> {
        if self.format != MANIFEST_FORMAT || self.version != MANIFEST_VERSION {
            return Err(validation(format!(
                "unsupported manifest {} v{}",
                self.format, self.version
            )));
        }
        let mut ids = BTreeSet::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(validation(format!("duplicate entry id {}", e.id)));
            }
            for p in [
                &e.clean_path,
                &e.turbulent_path,
                &e.events_path,
                &e.tilt_ref_path,
            ] {
                if !root.join(p).is_file() {
                    return Err(validation(format!("entry {}: missing file {p}", e.id)));
                }
            }
            e.exposure()?;
        }
        let train: BTreeSet<&str> = self.split.train.iter().map(String::as_str).collect();
        let test: BTreeSet<&str> = self.split.test.iter().map(String::as_str).collect();
        if train.len() != self.split.train.len() || test.len() != self.split.test.len() {
            return Err(validation("split lists contain duplicates"));
        }
        if !train.is_disjoint(&test) {
            return Err(validation("train and test splits overlap"));
        }
        let union: BTreeSet<&str> = train.union(&test).copied().collect();
        if union != ids {
            return Err(validation(
                "split does not cover exactly the manifest entries",
            ));
        }
        Ok(())
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

/// Simulation parameters of one entry, hashed into `params_hash`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryParams {
    pub turbulence: TurbulenceParams,
    pub event_sim: ThresholdModel,
}

impl EntryParams {
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("params serialize");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// One rendered scene with its events.
#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub clean: Image,
    pub rendered: RenderedTurbulence,
    pub events: SimulatedEvents,
    pub exposure: Exposure,
    pub params: EntryParams,
}

/// Seed of entry `index` under dataset seed `seed`.
pub fn entry_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(1)))
}

/// Renders turbulence from `turbulence.seed` and events from `event_sim.seed`.
pub fn synthesize(clean: &Image, params: EntryParams) -> Result<SyntheticCase> {
    let rendered = render_turbulent(
        clean,
        &params.turbulence,
        &Rng::new(params.turbulence.seed, 0),
    )?;
    let events = simulate_events(&rendered.latents, &params.event_sim)?;
    let exposure = Exposure::new(
        rendered.latents.exposure_start(),
        rendered.latents.exposure_end(),
    )?;
    Ok(SyntheticCase {
        clean: clean.clone(),
        rendered,
        events,
        exposure,
        params,
    })
}

/// Shuffles ids with a seeded stream and assigns `round((1 - f) n)` of them to test.
pub fn split_ids(ids: &[String], train_fraction: f64, seed: u64) -> Split {
    let mut order: Vec<String> = ids.to_vec();
    Rng::new(seed, SPLIT_STREAM).shuffle(&mut order);
    let n_test = ((1.0 - train_fraction) * ids.len() as f64).round() as usize;
    let test: BTreeSet<String> = order[..n_test.min(order.len())].iter().cloned().collect();
    Split {
        train: ids.iter().filter(|i| !test.contains(*i)).cloned().collect(),
        test: ids.iter().filter(|i| test.contains(*i)).cloned().collect(),
    }
}

/// Readable images (`.pfm`, `.pgm`) of a directory, keyed by file stem, in name order.
pub fn collect_clean_images(dir: impl AsRef<Path>) -> Result<Vec<(String, Image)>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("pfm") || e.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(argument(format!(
            "no .pfm/.pgm images in {}",
            dir.display()
        )));
    }
    let mut seen = BTreeSet::new();
    paths
        .iter()
        .map(|p| {
            let id = p
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| argument(format!("bad file name {}", p.display())))?
                .to_string();
            if !seen.insert(id.clone()) {
                return Err(argument(format!("two clean images share the id {id}")));
            }
            Ok((id, read_image(p)?))
        })
        .collect()
}

/// Procedural clean scenes named `scene00000`, `scene00001`, ...
pub fn synthetic_clean_images(cfg: &Config, seed: u64) -> Result<Vec<(String, Image)>> {
    (0..cfg.dataset.synthetic_count as u64)
        .into_par_iter()
        .map(|k| {
            let img = synthetic_scene(cfg.dataset.scene_size, entry_seed(seed, k) ^ 0xC1EA)?;
            Ok((format!("scene{k:05}"), img))
        })
        .collect()
}

/// Renders every clean image and writes artifacts plus `manifest.json` under `out_dir`.
pub fn gen_dataset(
    clean: &[(String, Image)],
    out_dir: impl AsRef<Path>,
    cfg: &Config,
    seed: u64,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    if clean.is_empty() {
        return Err(argument("no clean images to render"));
    }
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let size = cfg.dataset.image_size;

    let entries: Vec<ManifestEntry> = clean
        .par_iter()
        .enumerate()
        .map(|(k, (id, img))| {
            let s = entry_seed(seed, k as u64);
            let params = EntryParams {
                turbulence: TurbulenceParams {
                    seed: s,
                    ..cfg.turbulence
                },
                event_sim: ThresholdModel {
                    seed: s,
                    ..cfg.event_sim
                },
            };
            let cropped = img
                .center_crop(size, size)
                .map_err(|e| e.in_stage("crop"))?;
            let case = synthesize(&cropped, params)?;
            write_entry(out, id, &case)
        })
        .collect::<Result<_>>()?;

    let ids: Vec<String> = entries.iter().map(|e| e.id.clone()).collect();
    let manifest = DatasetManifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        seed,
        image_size: size,
        split: split_ids(&ids, cfg.dataset.train_fraction, seed),
        entries,
    };
    write_file(&out.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    manifest.validate(out)?;
    Ok(manifest)
}

fn write_entry(root: &Path, id: &str, case: &SyntheticCase) -> Result<ManifestEntry> {
    let dir = root.join(id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let rel = |name: &str| format!("{id}/{name}");
    let entry = ManifestEntry {
        id: id.to_string(),
        clean_path: rel("clean.pfm"),
        turbulent_path: rel("turbulent.pfm"),
        events_path: rel("events.evtb"),
        tilt_ref_path: rel("tilt_ref.pfm"),
        params_hash: case.params.hash(),
        exposure_start_us: case.exposure.start,
        exposure_end_us: case.exposure.end,
        t_ref_us: case.rendered.reference_time(),
    };
    write_image(&case.clean, root.join(&entry.clean_path))?;
    write_image(&case.rendered.turbulent, root.join(&entry.turbulent_path))?;
    write_events(&case.events.stream, root.join(&entry.events_path))?;
    write_flow(&case.rendered.tilt_ref, root.join(&entry.tilt_ref_path))?;
    Ok(entry)
}

/// Artifacts of one entry read back from disk.
pub struct LoadedEntry {
    pub clean: Image,
    pub turbulent: Image,
    pub events: crate::event::EventStream,
    pub tilt_ref: TiltFlow,
}

pub fn load_entry(root: &Path, entry: &ManifestEntry) -> Result<LoadedEntry> {
    Ok(LoadedEntry {
        clean: read_image(root.join(&entry.clean_path))?,
        turbulent: read_image(root.join(&entry.turbulent_path))?,
        events: read_events(root.join(&entry.events_path))?,
        tilt_ref: read_flow(root.join(&entry.tilt_ref_path))?,
    })
}
