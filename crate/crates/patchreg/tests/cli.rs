use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use patchreg::evaluate::EvalSummary;
use patchreg::field_io::read_field;
use patchreg::manifest::{load_manifest, Split};
use patchreg::pgm;
use patchreg::register::RegisterReport;
use patchreg::train::{artifacts, read_log, LOG_HEADER};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_patchreg"));
    c.env("PATCHREG_THREADS", "2");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_dir(dir: &Path, n: usize, size: usize, split: Option<&str>) -> PathBuf {
    let n = n.to_string();
    let size = size.to_string();
    let mut args = vec![
        "synth",
        "--n",
        &n,
        "--size",
        &size,
        "--max-disp",
        "1.5",
        "--seed",
        "7",
        "--out",
        s(dir),
    ];
    if let Some(sp) = split {
        args.extend(["--split", sp]);
    }
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join("manifest.csv")
}

fn init_checkpoint(dir: &Path, preset: &str, size: usize) -> PathBuf {
    let path = dir.join(format!("{preset}.prck"));
    let size = size.to_string();
    let o = run(&["init", "--preset", preset, "--image-size", &size, "--out", s(&path)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    path
}

#[test]
fn train_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth_dir(&tmp.path().join("data"), 4, 32, None);
    let out = tmp.path().join("run");
    let o = run(&[
        "train",
        "--preset",
        "pure_mlp_desk",
        "--image-size",
        "32",
        "--manifest",
        s(&manifest),
        "--epochs",
        "2",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for a in [
        artifacts::CHECKPOINT,
        artifacts::BEST,
        artifacts::LOG,
        artifacts::CONFIG,
    ] {
        assert!(out.join(a).is_file(), "missing {a}");
    }
    let log = fs::read_to_string(out.join(artifacts::LOG)).unwrap();
    assert_eq!(log.lines().next(), Some(LOG_HEADER));
    let rows = read_log(&out.join(artifacts::LOG)).unwrap();
    assert_eq!(rows.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2]);
    assert!(rows.iter().all(|r| r.train_loss.is_finite() && r.val_loss.is_finite()));
    // The resolved config is echoed and reloadable.
    assert!(stderr(&o).contains("\"max_epochs\": 2"));
    let cfg = patchreg::config::RunConfig::load(&out.join(artifacts::CONFIG)).unwrap();
    assert_eq!(cfg.train.max_epochs, 2);
}

#[test]
fn missing_manifest_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere.csv");
    let o = run(&[
        "train",
        "--preset",
        "pure_mlp_desk",
        "--manifest",
        s(&missing),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains(s(&missing)), "{}", stderr(&o));
}

#[test]
fn bad_flags_and_presets_are_usage_errors() {
    assert_eq!(code(&run(&["train", "--bogus"])), 2);
    assert_eq!(code(&run(&["preset", "resnet50"])), 2);
    assert_eq!(code(&run(&["gradcheck", "--size", "128"])), 2);
    let o = run(&["preset", "swin_trans_desk", "--image-size", "32"]);
    assert_eq!(code(&o), 0);
    let cfg = patchreg::config::RunConfig::parse(&String::from_utf8_lossy(&o.stdout)).unwrap();
    assert_eq!(cfg.model.image_size, 32);
}

#[test]
fn manifest_problems_name_the_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let m = tmp.path().join("m.csv");
    fs::write(
        &m,
        "pair_id,ed_image,es_image,ed_mask,es_mask,split,spacing_mm\np1,a.pgm,b.pgm,,,train,\n",
    )
    .unwrap();
    let o = run(&[
        "train",
        "--preset",
        "pure_mlp_desk",
        "--manifest",
        s(&m),
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("line 2") && stderr(&o).contains("missing file"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn corrupt_checkpoint_is_an_integrity_error() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = init_checkpoint(tmp.path(), "mlp_mixer_desk", 32);
    let mut bytes = fs::read(&ck).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&ck, &bytes).unwrap();
    let img = tmp.path().join("a.pgm");
    pgm::write_pgm(&patchreg_core::Image::zeros(32, 32), &img).unwrap();
    let o = run(&[
        "register",
        "--checkpoint",
        s(&ck),
        "--fix",
        s(&img),
        "--mov",
        s(&img),
        "--out",
        s(&tmp.path().join("r")),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("hash"), "{}", stderr(&o));
}

#[test]
fn untrained_model_registers_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_dir(&data, 1, 32, Some("test"));
    let img = data.join("synth_000_ed.pgm");
    for preset in ["pure_mlp_desk", "mlp_mixer_desk", "swin_trans_desk"] {
        let ck = init_checkpoint(tmp.path(), preset, 32);
        let out = tmp.path().join(preset);
        let o = run(&[
            "register",
            "--checkpoint",
            s(&ck),
            "--fix",
            s(&img),
            "--mov",
            s(&img),
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let fwd = read_field(&out.join("disp_forward.prgf")).unwrap();
        let inv = read_field(&out.join("disp_inverse.prgf")).unwrap();
        assert_eq!(fwd.max_magnitude(), 0.0);
        assert_eq!(inv.max_magnitude(), 0.0);
        let report: RegisterReport =
            serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        assert_eq!(report.inverse_residual, 0.0);
        assert_eq!(report.mse_warped, 0.0);
        assert_eq!(report.jacobian.min, 1.0);
        // 16-bit input, 8-bit output: compare at 8-bit precision.
        let a = pgm::read_pgm(&img).unwrap();
        let b = pgm::read_pgm(&out.join("warped.pgm")).unwrap();
        assert!(a
            .data
            .iter()
            .zip(&b.data)
            .all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-12));
    }
}

#[test]
fn register_checks_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = init_checkpoint(tmp.path(), "pure_mlp_desk", 32);
    let img = tmp.path().join("big.pgm");
    pgm::write_pgm(&patchreg_core::Image::zeros(48, 40), &img).unwrap();
    let out = tmp.path().join("r");
    let o = run(&[
        "register",
        "--checkpoint",
        s(&ck),
        "--fix",
        s(&img),
        "--mov",
        s(&img),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--resize"));
    let o = run(&[
        "register",
        "--checkpoint",
        s(&ck),
        "--fix",
        s(&img),
        "--mov",
        s(&img),
        "--out",
        s(&out),
        "--resize",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_field(&out.join("disp_forward.prgf")).unwrap().height, 32);
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|x| x.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn evaluate_writes_one_row_per_pair_and_structure() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth_dir(&tmp.path().join("data"), 10, 32, Some("test"));
    let ck = init_checkpoint(tmp.path(), "pure_mlp_desk", 32);
    let out = tmp.path().join("eval");
    let o = run(&[
        "evaluate",
        "--checkpoint",
        s(&ck),
        "--manifest",
        s(&manifest),
        "--split",
        "test",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let (h, rows) = read_csv(&out.join("metrics.csv"));
    assert_eq!(h, ["pair_id", "structure", "dice", "hd", "msd"]);
    assert_eq!(rows.len(), 30);
    let pairs: std::collections::BTreeSet<_> = rows.iter().map(|r| r[0].clone()).collect();
    assert_eq!(pairs.len(), 10);
    for r in &rows {
        assert!(["lv_endo", "myocardium", "left_atrium"].contains(&r[1].as_str()));
        let d: f64 = r[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&d));
        for v in &r[3..] {
            assert!(v.is_empty() || v.parse::<f64>().unwrap() >= 0.0);
        }
    }
    let (h, jrows) = read_csv(&out.join("jacobian.csv"));
    assert_eq!(h, ["pair_id", "jac_mean", "jac_std", "jac_min", "jac_neg_frac"]);
    assert_eq!(jrows.len(), 10);
    // The untrained model is the identity.
    assert!(jrows.iter().all(|r| r[1] == "1" && r[4] == "0"));

    let summary: EvalSummary = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.evaluated, 10);
    assert_eq!(summary.structures.len(), 3);
    assert_eq!(summary.jacobian.mean.unwrap().count, 10);
}

#[test]
fn identical_pairs_score_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_dir(&data, 2, 32, Some("test"));
    // ES := ED for both images and masks.
    let mut text = String::from("pair_id,ed_image,es_image,ed_mask,es_mask,split,spacing_mm\n");
    for id in ["synth_000", "synth_001"] {
        text += &format!("{id},{id}_ed.pgm,{id}_ed.pgm,{id}_ed_mask.pgm,{id}_ed_mask.pgm,test,0.25\n");
    }
    let m = data.join("same.csv");
    fs::write(&m, text).unwrap();
    let ck = init_checkpoint(tmp.path(), "swin_trans_desk", 32);
    let out = tmp.path().join("eval");
    let o = run(&[
        "evaluate",
        "--checkpoint",
        s(&ck),
        "--manifest",
        s(&m),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, rows) = read_csv(&out.join("metrics.csv"));
    for r in rows {
        assert_eq!(r[2], "1", "{r:?}");
        assert_eq!(r[3], "0");
        assert_eq!(r[4], "0");
    }
}

#[test]
fn pairs_without_masks_are_skipped() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let manifest = synth_dir(&data, 3, 32, Some("test"));
    let text = fs::read_to_string(&manifest).unwrap();
    // Blank the ES mask of the second pair.
    let edited: Vec<String> = text
        .lines()
        .map(|l| {
            if l.starts_with("synth_001") {
                let mut f: Vec<&str> = l.split(',').collect();
                f[4] = "";
                f.join(",")
            } else {
                l.to_string()
            }
        })
        .collect();
    fs::write(&manifest, edited.join("\n") + "\n").unwrap();
    let ck = init_checkpoint(tmp.path(), "pure_mlp_desk", 32);
    let out = tmp.path().join("eval");
    let o = run(&[
        "evaluate",
        "--checkpoint",
        s(&ck),
        "--manifest",
        s(&manifest),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("skipping synth_001"));
    let summary: EvalSummary = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.evaluated, 2);
    assert_eq!(summary.skipped.len(), 1);
    assert_eq!(summary.skipped[0].pair_id, "synth_001");
    assert_eq!(read_csv(&out.join("metrics.csv")).1.len(), 6);
}

#[test]
fn empty_split_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth_dir(&tmp.path().join("data"), 2, 32, Some("train"));
    let ck = init_checkpoint(tmp.path(), "pure_mlp_desk", 32);
    let o = run(&[
        "evaluate",
        "--checkpoint",
        s(&ck),
        "--manifest",
        s(&manifest),
        "--split",
        "test",
        "--out",
        s(&tmp.path().join("e")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no test pairs"));
}

#[test]
fn synth_is_deterministic_and_reloads() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth_dir(&tmp.path().join("a"), 10, 32, None);
    let b = synth_dir(&tmp.path().join("b"), 10, 32, None);
    let recs = load_manifest(&a).unwrap();
    assert_eq!(recs.len(), 10);
    let count = |sp: Split| recs.iter().filter(|r| r.split == sp).count();
    assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (8, 1, 1));
    for r in &recs {
        let name = r.ed_image.file_name().unwrap();
        assert_eq!(
            fs::read(&r.ed_image).unwrap(),
            fs::read(b.parent().unwrap().join(name)).unwrap()
        );
        let img = pgm::read_pgm(&r.es_image).unwrap();
        assert_eq!((img.height, img.width), (32, 32));
        assert!(r.has_masks());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    // max_disp must stay below size / 8.
    let o = run(&[
        "synth",
        "--n",
        "1",
        "--size",
        "32",
        "--max-disp",
        "4",
        "--out",
        s(&tmp.path().join("c")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_passes_and_catches_faults() {
    let o = run(&["gradcheck", "--family", "mlp_mixer", "--size", "16", "--probes", "4"]);
    assert_eq!(code(&o), 0, "{}{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
    let o = run(&[
        "gradcheck",
        "--family",
        "pure_mlp",
        "--size",
        "16",
        "--probes",
        "4",
        "--inject-fault",
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

fn train_run(manifest: &Path, out: &Path, threads: &str, preset: &str) -> Output {
    bin()
        .env("PATCHREG_THREADS", threads)
        .args([
            "train",
            "--preset",
            preset,
            "--image-size",
            "32",
            "--seed",
            "11",
            "--epochs",
            "3",
        ])
        .args(["--manifest", s(manifest), "--out", s(out)])
        .output()
        .unwrap()
}

fn log_without_time(dir: &Path) -> Vec<(usize, f64, f64)> {
    read_log(&dir.join(artifacts::LOG))
        .unwrap()
        .into_iter()
        .map(|r| (r.epoch, r.train_loss, r.val_loss))
        .collect()
}

#[test]
fn training_is_independent_of_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth_dir(&tmp.path().join("data"), 6, 32, None);
    for preset in ["mlp_mixer_desk", "swin_trans_desk"] {
        let a = tmp.path().join(format!("{preset}_1"));
        let b = tmp.path().join(format!("{preset}_4"));
        for (dir, t) in [(&a, "1"), (&b, "4")] {
            let o = train_run(&manifest, dir, t, preset);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
        }
        assert_eq!(log_without_time(&a), log_without_time(&b));
        assert_eq!(
            fs::read(a.join(artifacts::CHECKPOINT)).unwrap(),
            fs::read(b.join(artifacts::CHECKPOINT)).unwrap()
        );
        assert_eq!(
            fs::read(a.join(artifacts::BEST)).unwrap(),
            fs::read(b.join(artifacts::BEST)).unwrap()
        );
    }
}

#[test]
fn validation_falls_back_to_training_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth_dir(&tmp.path().join("data"), 2, 32, Some("train"));
    let out = tmp.path().join("run");
    let o = train_run(&manifest, &out, "2", "pure_mlp_desk");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("no val pairs"));
    assert_eq!(log_without_time(&out).len(), 3);
}

#[test]
fn bad_thread_count_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth_dir(&tmp.path().join("data"), 2, 32, None);
    let o = train_run(&manifest, &tmp.path().join("o"), "zero", "pure_mlp_desk");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("PATCHREG_THREADS"));
}
