//! Writes a synthetic dataset: per pair a 16-bit ED (fixed) and ES (moving)
//! image, both masks and the ground-truth displacement, plus a manifest.
//!
//! The ground truth `gt_disp` satisfies `es = warp(ed, gt_disp)`, so it is
//! the field a registration's `disp_inverse` should recover.

use std::fs;
use std::path::{Path, PathBuf};

use patchreg_core::synth::synth_pair;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Result};
use crate::field_io::{write_field, Dtype};
use crate::manifest::{write_manifest, PairRecord, Split};
use crate::pgm;

pub const MANIFEST: &str = "manifest.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub n_pairs: usize,
    pub size: usize,
    pub max_disp: f64,
    pub seed: u64,
    /// `None` splits roughly 70/15/15 into train/val/test.
    pub split: Option<Split>,
}

/// Split of pair `k` of `n` under the automatic scheme: the last ~15% are
/// test, the ~15% before them val.
pub fn auto_split(k: usize, n: usize) -> Split {
    let held = n * 15 / 100;
    if k >= n - held {
        Split::Test
    } else if k >= n - 2 * held {
        Split::Val
    } else {
        Split::Train
    }
}

pub fn gt_path(dir: &Path, pair_id: &str) -> PathBuf {
    dir.join(format!("{pair_id}_gt.prgf"))
}

pub fn synth(opts: &SynthOptions, out: &Path) -> Result<Vec<PairRecord>> {
    if opts.n_pairs == 0 {
        return Err(CliError::Usage("need at least one pair".into()));
    }
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut seeds = ChaCha8Rng::seed_from_u64(opts.seed);
    let width = opts.n_pairs.to_string().len().max(3);
    let mut records = Vec::with_capacity(opts.n_pairs);
    for k in 0..opts.n_pairs {
        let pair = synth_pair::<f64>(seeds.next_u64(), opts.size, opts.max_disp).map_err(|e| match e {
            patchreg_core::Error::Contract(m) => CliError::Usage(m),
            e => e.into(),
        })?;
        let id = format!("synth_{k:0width$}");
        let file = |suffix: &str| out.join(format!("{id}_{suffix}.pgm"));
        let rec = PairRecord {
            pair_id: id.clone(),
            ed_image: file("ed"),
            es_image: file("es"),
            ed_mask: Some(file("ed_mask")),
            es_mask: Some(file("es_mask")),
            split: opts.split.unwrap_or_else(|| auto_split(k, opts.n_pairs)),
            spacing_mm: None,
        };
        pgm::write_pgm16(&pair.fix, &rec.ed_image)?;
        pgm::write_pgm16(&pair.mov, &rec.es_image)?;
        pgm::write_mask(&pair.fix_mask, rec.ed_mask.as_deref().expect("set"))?;
        pgm::write_mask(&pair.mov_mask, rec.es_mask.as_deref().expect("set"))?;
        write_field(&pair.gt_disp, Dtype::F64, &gt_path(out, &id))?;
        records.push(rec);
    }
    write_manifest(&records, out, &out.join(MANIFEST))?;
    Ok(records)
}
