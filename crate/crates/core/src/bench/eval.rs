//! Evaluation harness: restore the test split of a dataset and score it.
//!
//! The report is a deterministic function of manifest, artifacts and config;
//! wall-clock timings are returned separately so the report stays
//! byte-reproducible.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::dataset::{load_entry, DatasetManifest, ManifestEntry};
use crate::bench::metrics::{psnr, ssim, Psnr};
use crate::config::Config;
use crate::error::{argument, Result};
use crate::formation::{Contrast, Exposure};
use crate::restore::{restore_pipeline, RestoreSetup, StageTimings};

pub const REPORT_FORMAT: &str = "turbev-eval";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    #[default]
    Test,
    All,
}

/// The `eval` config block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Required mean PSNR improvement of restored over turbulent, dB.
    pub min_psnr_gain_db: f64,
    pub split: EvalSplit,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            min_psnr_gain_db: 2.0,
            split: EvalSplit::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryMetrics {
    pub id: String,
    pub psnr_turb: Psnr,
    pub psnr_restored: Psnr,
    pub ssim_turb: f64,
    pub ssim_restored: f64,
    pub epe: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

impl Aggregate {
    /// Population mean and standard deviation.
    pub fn of(values: &[f64]) -> Aggregate {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Aggregate {
            mean,
            std: var.sqrt(),
        }
    }
}

/// PSNR aggregate; any identical row makes the mean identical and the std undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsnrAggregate {
    pub mean: Psnr,
    pub std: Option<f64>,
}

impl PsnrAggregate {
    pub fn of(values: &[Psnr]) -> PsnrAggregate {
        if values.iter().any(|p| p.is_identical()) {
            return PsnrAggregate {
                mean: Psnr::Identical,
                std: None,
            };
        }
        let db: Vec<f64> = values.iter().map(|p| p.db()).collect();
        let a = Aggregate::of(&db);
        PsnrAggregate {
            mean: Psnr::Db(a.mean),
            std: Some(a.std),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub psnr_turb: PsnrAggregate,
    pub psnr_restored: PsnrAggregate,
    pub ssim_turb: Aggregate,
    pub ssim_restored: Aggregate,
    pub epe: Option<Aggregate>,
}

impl Aggregates {
    pub fn from_rows(rows: &[EntryMetrics]) -> Aggregates {
        let epe: Option<Vec<f64>> = rows.iter().map(|r| r.epe).collect();
        Aggregates {
            psnr_turb: PsnrAggregate::of(&rows.iter().map(|r| r.psnr_turb).collect::<Vec<_>>()),
            psnr_restored: PsnrAggregate::of(
                &rows.iter().map(|r| r.psnr_restored).collect::<Vec<_>>(),
            ),
            ssim_turb: Aggregate::of(&rows.iter().map(|r| r.ssim_turb).collect::<Vec<_>>()),
            ssim_restored: Aggregate::of(&rows.iter().map(|r| r.ssim_restored).collect::<Vec<_>>()),
            epe: epe.map(|v| Aggregate::of(&v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorCheck {
    pub min_psnr_gain_db: f64,
    /// Mean restored minus mean turbulent PSNR; absent when either mean is identical.
    pub psnr_gain_db: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub formation: crate::formation::FormationConfig,
    pub restore: crate::restore::RestoreConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub manifest_seed: u64,
    pub config: ConfigEcho,
    pub entries: Vec<EntryMetrics>,
    pub aggregates: Aggregates,
    pub floor: FloorCheck,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntryTiming {
    pub id: String,
    pub stages: StageTimings,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,psnr_turb,psnr_restored,ssim_turb,ssim_restored,epe\n");
        let p = |v: Psnr| match v {
            Psnr::Db(d) => format!("{d:.6}"),
            Psnr::Identical => "identical".into(),
        };
        for r in &self.entries {
            s.push_str(&format!(
                "{},{},{},{:.6},{:.6},{}\n",
                r.id,
                p(r.psnr_turb),
                p(r.psnr_restored),
                r.ssim_turb,
                r.ssim_restored,
                r.epe.map(|e| format!("{e:.6}")).unwrap_or_default()
            ));
        }
        s
    }
}

pub fn floor_check(aggregates: &Aggregates, min_gain: f64) -> FloorCheck {
    let (turb, restored) = (aggregates.psnr_turb.mean, aggregates.psnr_restored.mean);
    let gain = match (turb, restored) {
        (Psnr::Db(t), Psnr::Db(r)) => Some(r - t),
        _ => None,
    };
    // A perfect restoration passes any floor.
    let passed = restored.is_identical() || gain.is_some_and(|g| g >= min_gain);
    FloorCheck {
        min_psnr_gain_db: min_gain,
        psnr_gain_db: gain,
        passed,
    }
}

fn evaluate_entry(
    root: &Path,
    entry: &ManifestEntry,
    cfg: &Config,
) -> Result<(EntryMetrics, StageTimings)> {
    let data = load_entry(root, entry).map_err(|e| e.in_stage("load"))?;
    let exposure: Exposure = entry.exposure()?;
    let setup = RestoreSetup {
        exposure,
        contrast: Contrast::Scalar(cfg.formation.c),
        t_ref: entry.t_ref_us,
        formation: cfg.formation,
        restore: cfg.restore,
    };
    let report = restore_pipeline(&data.turbulent, &data.events, &setup)?;
    let metrics = EntryMetrics {
        id: entry.id.clone(),
        psnr_turb: psnr(&data.turbulent, &data.clean, 1.0)?,
        psnr_restored: psnr(&report.refined, &data.clean, 1.0)?,
        ssim_turb: ssim(&data.turbulent, &data.clean)?,
        ssim_restored: ssim(&report.refined, &data.clean)?,
        epe: Some(report.flow.endpoint_error(&data.tilt_ref.negated())?),
    };
    Ok((metrics, report.timings))
}

/// Restores the configured split and scores it against the clean images.
pub fn run_eval(
    manifest: &DatasetManifest,
    root: &Path,
    cfg: &Config,
) -> Result<(EvalReport, Vec<EntryTiming>)> {
    let ids: Vec<&String> = match cfg.eval.split {
        EvalSplit::Test => manifest.split.test.iter().collect(),
        EvalSplit::All => manifest.entries.iter().map(|e| &e.id).collect(),
    };
    if ids.is_empty() {
        return Err(argument("evaluation split is empty"));
    }
    let entries: Vec<&ManifestEntry> = ids
        .iter()
        .map(|id| {
            manifest
                .entry(id)
                .ok_or_else(|| argument(format!("split names unknown entry {id}")))
        })
        .collect::<Result<_>>()?;
    let results: Vec<(EntryMetrics, StageTimings)> = entries
        .par_iter()
        .map(|e| evaluate_entry(root, e, cfg))
        .collect::<Result<_>>()?;
    let (rows, timings): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let aggregates = Aggregates::from_rows(&rows);
    let floor = floor_check(&aggregates, cfg.eval.min_psnr_gain_db);
    let timings = rows
        .iter()
        .zip(timings)
        .map(|(r, stages)| EntryTiming {
            id: r.id.clone(),
            stages,
        })
        .collect();
    let report = EvalReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        manifest_seed: manifest.seed,
        config: ConfigEcho {
            formation: cfg.formation,
            restore: cfg.restore,
            eval: cfg.eval,
        },
        entries: rows,
        aggregates,
        floor,
    };
    Ok((report, timings))
}
