//! Pair manifests: CSV with header
//! `pair_id,ed_image,es_image,ed_mask,es_mask,split,spacing_mm`.
//!
//! Relative paths resolve against the manifest's directory. Mask and spacing
//! fields may be empty (unlabelled pairs, unknown spacing).

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use patchreg_core::image::{resize_image, resize_mask};
use patchreg_core::{Image, LabelMask};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::pgm;

pub const HEADER: [&str; 7] = [
    "pair_id",
    "ed_image",
    "es_image",
    "ed_mask",
    "es_mask",
    "split",
    "spacing_mm",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairRecord {
    pub pair_id: String,
    pub ed_image: PathBuf,
    pub es_image: PathBuf,
    pub ed_mask: Option<PathBuf>,
    pub es_mask: Option<PathBuf>,
    pub split: Split,
    /// Isotropic pixel spacing of the stored images, in millimetres.
    pub spacing_mm: Option<f64>,
}

impl PairRecord {
    pub fn has_masks(&self) -> bool {
        self.ed_mask.is_some() && self.es_mask.is_some()
    }
}

fn resolve(base: &Path, s: &str) -> PathBuf {
    let p = Path::new(s);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Parses manifest text. Every offending row is collected into the error.
pub fn parse_manifest(text: &str, base: &Path, check_files: bool) -> std::result::Result<Vec<PairRecord>, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| format!("header: {e}"))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(format!(
            "header must be `{}`, found `{}`",
            HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        ));
    }
    let mut out = Vec::new();
    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    for (k, row) in rdr.records().enumerate() {
        // Line 1 is the header.
        let line = k + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let field = |i: usize| row.get(i).unwrap_or("");
        let mut bad = Vec::new();
        let id = field(0).to_string();
        if id.is_empty() {
            bad.push("empty pair_id".to_string());
        } else if !seen.insert(id.clone()) {
            bad.push(format!("duplicate pair_id {id}"));
        }
        let split = Split::parse(field(5));
        if split.is_none() {
            bad.push(format!("unknown split `{}`", field(5)));
        }
        let spacing = match field(6) {
            "" => None,
            s => match s.parse::<f64>() {
                Ok(v) if v.is_finite() && v > 0.0 => Some(v),
                _ => {
                    bad.push(format!("bad spacing_mm `{s}`"));
                    None
                }
            },
        };
        let mut path = |i: usize, required: bool| -> Option<PathBuf> {
            let s = field(i);
            if s.is_empty() {
                if required {
                    bad.push(format!("empty {}", HEADER[i]));
                }
                return None;
            }
            let p = resolve(base, s);
            if check_files && !p.is_file() {
                bad.push(format!("missing file {}", p.display()));
            }
            Some(p)
        };
        let ed_image = path(1, true);
        let es_image = path(2, true);
        let ed_mask = path(3, false);
        let es_mask = path(4, false);
        if bad.is_empty() {
            out.push(PairRecord {
                pair_id: id,
                ed_image: ed_image.expect("checked"),
                es_image: es_image.expect("checked"),
                ed_mask,
                es_mask,
                split: split.expect("checked"),
                spacing_mm: spacing,
            });
        } else {
            problems.push(format!("line {line}: {}", bad.join("; ")));
        }
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(problems.join("\n"))
    }
}

pub fn load_manifest(path: &Path) -> Result<Vec<PairRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base, true).map_err(|e| CliError::Usage(format!("manifest {}:\n{e}", path.display())))
}

/// Writes records with paths relative to `base` where possible.
pub fn write_manifest(records: &[PairRecord], base: &Path, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned();
    let opt = |p: &Option<PathBuf>| p.as_deref().map(rel).unwrap_or_default();
    let csv_err = |e: csv::Error| CliError::Usage(format!("{}: {e}", path.display()));
    w.write_record(HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.pair_id.clone(),
            rel(&r.ed_image),
            rel(&r.es_image),
            opt(&r.ed_mask),
            opt(&r.es_mask),
            r.split.to_string(),
            r.spacing_mm.map(|s| s.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// A manifest pair read from disk and resized to the working resolution.
/// ED is the fixed image, ES the moving one.
#[derive(Clone, Debug)]
pub struct LoadedPair {
    pub pair_id: String,
    pub fix: Image<f64>,
    pub mov: Image<f64>,
    pub fix_mask: Option<LabelMask>,
    pub mov_mask: Option<LabelMask>,
    /// Pixel spacing `(row, col)` at the working resolution, if known.
    pub spacing: Option<(f64, f64)>,
}

pub fn load_pair(rec: &PairRecord, size: usize) -> Result<LoadedPair> {
    let ed = pgm::read_pgm(&rec.ed_image)?;
    let es = pgm::read_pgm(&rec.es_image)?;
    let mask = |p: &Option<PathBuf>| -> Result<Option<LabelMask>> {
        p.as_deref()
            .map(|p| pgm::read_mask(p).map(|m| resize_mask(&m, size, size)))
            .transpose()
    };
    let spacing = rec
        .spacing_mm
        .map(|s| (s * ed.height as f64 / size as f64, s * ed.width as f64 / size as f64));
    Ok(LoadedPair {
        pair_id: rec.pair_id.clone(),
        fix: resize_image(&ed, size)?,
        mov: resize_image(&es, size)?,
        fix_mask: mask(&rec.ed_mask)?,
        mov_mask: mask(&rec.es_mask)?,
        spacing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAD: &str = "pair_id,ed_image,es_image,ed_mask,es_mask,split,spacing_mm\n";

    #[test]
    fn empty_and_valid_rows() {
        let base = Path::new("/data");
        assert!(parse_manifest(HEAD, base, false).unwrap().is_empty());
        let text = format!("{HEAD}p1,a.pgm,b.pgm,am.pgm,bm.pgm,test,0.3\np2,c.pgm,d.pgm,,,train,\n");
        let r = parse_manifest(&text, base, false).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].ed_image, PathBuf::from("/data/a.pgm"));
        assert!(r[0].has_masks() && r[0].split == Split::Test);
        assert_eq!(r[0].spacing_mm, Some(0.3));
        assert!(!r[1].has_masks());
    }

    #[test]
    fn errors_list_every_row() {
        let text = format!("{HEAD}p1,a,b,,,train,\np1,a,b,,,train,\np3,a,b,,,holdout,\np4,,b,,,val,x\n");
        let e = parse_manifest(&text, Path::new("."), false).unwrap_err();
        assert!(e.contains("line 3: duplicate pair_id p1"), "{e}");
        assert!(e.contains("line 4: unknown split `holdout`"), "{e}");
        assert!(
            e.contains("line 5") && e.contains("empty ed_image") && e.contains("bad spacing_mm"),
            "{e}"
        );
        assert!(!e.contains("line 2"));
        assert!(parse_manifest("id,a\n", Path::new("."), false)
            .unwrap_err()
            .contains("header"));
    }

    #[test]
    fn missing_files_are_reported() {
        let text = format!("{HEAD}p1,nope.pgm,b.pgm,,,train,\n");
        let e = parse_manifest(&text, Path::new("/definitely/not/here"), true).unwrap_err();
        assert!(e.contains("missing file /definitely/not/here/nope.pgm"), "{e}");
    }
}
