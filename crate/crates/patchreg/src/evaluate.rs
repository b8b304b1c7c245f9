//! Batch evaluation of a checkpoint on one manifest split.
//!
//! ED is fixed and ES moving; the ES mask is warped with `disp_forward` and
//! compared with the ED mask. Jacobians are taken over the ED myocardium.

use std::fs;
use std::path::{Path, PathBuf};

use patchreg_core::image::labels;
use patchreg_core::metrics::{evaluate_pair, warp_mask, JacobianStats, PairMetrics, Summary};
use patchreg_core::LabelMask;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::load_model;
use crate::error::{CliError, Result};
use crate::manifest::{load_manifest, load_pair, Split};
use crate::thread_pool;

pub const METRICS_HEADER: [&str; 5] = ["pair_id", "structure", "dice", "hd", "msd"];
pub const JACOBIAN_HEADER: [&str; 5] = ["pair_id", "jac_mean", "jac_std", "jac_min", "jac_neg_frac"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub pair_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureSummary {
    pub structure: String,
    pub label: u8,
    pub dice: Option<Summary>,
    pub hd: Option<Summary>,
    pub msd: Option<Summary>,
    /// Pairs where a boundary was empty, so distances are undefined.
    pub undefined_distances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianSummary {
    /// Across pairs, of the per-pair statistic.
    pub mean: Option<Summary>,
    pub std: Option<Summary>,
    pub min: Option<Summary>,
    pub neg_frac: Option<Summary>,
    /// All myocardium determinants of all pairs together.
    pub pooled: Option<Summary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub split: Split,
    pub evaluated: usize,
    pub skipped: Vec<Skipped>,
    pub structures: Vec<StructureSummary>,
    pub jacobian: JacobianSummary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairResult {
    pub pair_id: String,
    pub metrics: PairMetrics,
}

/// Output file names.
pub mod artifacts {
    pub const METRICS: &str = "metrics.csv";
    pub const JACOBIAN: &str = "jacobian.csv";
    pub const SUMMARY: &str = "summary.json";
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn evaluate(
    checkpoint: &Path,
    manifest: &Path,
    split: Split,
    out: &Path,
) -> Result<(EvalSummary, Vec<PairResult>)> {
    let model = load_model::<f32>(checkpoint)?;
    let records: Vec<_> = load_manifest(manifest)?
        .into_iter()
        .filter(|r| r.split == split)
        .collect();
    if records.is_empty() {
        return Err(CliError::Usage(format!(
            "manifest {} has no {split} pairs",
            manifest.display()
        )));
    }
    let mut skipped = Vec::new();
    let mut usable = Vec::new();
    for r in records {
        if r.has_masks() {
            usable.push(r);
        } else {
            let missing: Vec<_> = [("ed_mask", &r.ed_mask), ("es_mask", &r.es_mask)]
                .iter()
                .filter(|(_, m)| m.is_none())
                .map(|(n, _)| *n)
                .collect();
            let reason = format!("no {}", missing.join(" or "));
            eprintln!("skipping {}: {reason}", r.pair_id);
            skipped.push(Skipped {
                pair_id: r.pair_id,
                reason,
            });
        }
    }

    let size = model.config().image_size;
    let pool = thread_pool()?;
    let results = pool.install(|| {
        usable
            .par_iter()
            .map(|rec| -> Result<PairResult> {
                let pair = load_pair(rec, size)?;
                let (fix_mask, mov_mask) = (pair.fix_mask.expect("has masks"), pair.mov_mask.expect("has masks"));
                let reg = model.register(&pair.fix.cast(), &pair.mov.cast())?;
                let warped: LabelMask = warp_mask(&mov_mask, &reg.disp_forward)?;
                let metrics = evaluate_pair(
                    &fix_mask,
                    &warped,
                    &reg.disp_forward,
                    pair.spacing.unwrap_or((1.0, 1.0)),
                )?;
                Ok(PairResult {
                    pair_id: rec.pair_id.clone(),
                    metrics,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_tables(&results, out)?;
    let summary = summarize(checkpoint, manifest, split, &results, skipped);
    let path = out.join(artifacts::SUMMARY);
    let json = serde_json::to_string_pretty(&summary).expect("summary serialises");
    fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;
    Ok((summary, results))
}

fn write_tables(results: &[PairResult], out: &Path) -> Result<()> {
    let csv_err = |p: &Path| {
        let p = p.to_path_buf();
        move |e: csv::Error| CliError::Usage(format!("{}: {e}", p.display()))
    };
    let mpath = out.join(artifacts::METRICS);
    let mut m = csv::Writer::from_path(&mpath).map_err(csv_err(&mpath))?;
    m.write_record(METRICS_HEADER).map_err(csv_err(&mpath))?;
    let jpath = out.join(artifacts::JACOBIAN);
    let mut j = csv::Writer::from_path(&jpath).map_err(csv_err(&jpath))?;
    j.write_record(JACOBIAN_HEADER).map_err(csv_err(&jpath))?;
    for r in results {
        for s in &r.metrics.structures {
            m.write_record([
                r.pair_id.clone(),
                labels::name(s.label).to_string(),
                s.dice.to_string(),
                opt(s.distances.map(|d| d.hausdorff)),
                opt(s.distances.map(|d| d.mean)),
            ])
            .map_err(csv_err(&mpath))?;
        }
        let jac: Option<JacobianStats> = r.metrics.jacobian;
        j.write_record([
            r.pair_id.clone(),
            opt(jac.map(|s| s.mean)),
            opt(jac.map(|s| s.std)),
            opt(jac.map(|s| s.min)),
            opt(jac.map(|s| s.neg_frac)),
        ])
        .map_err(csv_err(&jpath))?;
    }
    m.flush().map_err(|e| CliError::io(&mpath, e))?;
    j.flush().map_err(|e| CliError::io(&jpath, e))
}

pub fn summarize(
    checkpoint: &Path,
    manifest: &Path,
    split: Split,
    results: &[PairResult],
    skipped: Vec<Skipped>,
) -> EvalSummary {
    let structures = labels::STRUCTURES
        .iter()
        .enumerate()
        .map(|(k, &label)| {
            let per: Vec<_> = results.iter().map(|r| r.metrics.structures[k]).collect();
            let dice: Vec<f64> = per.iter().map(|s| s.dice).collect();
            let hd: Vec<f64> = per.iter().filter_map(|s| s.distances.map(|d| d.hausdorff)).collect();
            let msd: Vec<f64> = per.iter().filter_map(|s| s.distances.map(|d| d.mean)).collect();
            StructureSummary {
                structure: labels::name(label).to_string(),
                label,
                dice: Summary::of(&dice),
                undefined_distances: per.len() - hd.len(),
                hd: Summary::of(&hd),
                msd: Summary::of(&msd),
            }
        })
        .collect();
    let stats: Vec<JacobianStats> = results.iter().filter_map(|r| r.metrics.jacobian).collect();
    let field = |f: fn(&JacobianStats) -> f64| Summary::of(&stats.iter().map(f).collect::<Vec<_>>());
    let pooled: Vec<f64> = results
        .iter()
        .flat_map(|r| r.metrics.jacobian_values.iter().copied())
        .collect();
    EvalSummary {
        checkpoint: checkpoint.to_path_buf(),
        manifest: manifest.to_path_buf(),
        split,
        evaluated: results.len(),
        skipped,
        structures,
        jacobian: JacobianSummary {
            mean: field(|s| s.mean),
            std: field(|s| s.std),
            min: field(|s| s.min),
            neg_frac: field(|s| s.neg_frac),
            pooled: Summary::of(&pooled),
        },
    }
}
