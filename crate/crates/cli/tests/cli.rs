use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use migr_core::io::read_scalar_field;

const BIN: &str = env!("CARGO_BIN_EXE_migr-scatter");

fn config(mu: &str, potential: &str, extra: &str) -> String {
    format!(
        r#"
[grid]
side = 1.0
n = 16

[source]
m = 2.5
mu = {mu}

[potential]
{potential}

[farfield]
directions = 16
dk = 0.0625
realizations = 2
seed = 7

[bands]
ks = [4.0, 6.0]
tau_step = 0.5
tau_count = 3

[validate]
realizations = 20
directions = 2

{extra}
"#
    )
}

const BUMP: &str = r#"{ shape = "gaussian-bump", width = 0.1, cutoff = 0.3 }"#;
const NONE: &str = r#"{ shape = "none" }"#;

struct Case {
    dir: tempfile::TempDir,
}

impl Case {
    fn new(text: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("exp.toml"), text).unwrap();
        Case { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        let cfg = self.path("exp.toml");
        let out = self.path("out");
        Command::new(BIN)
            .args(args)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .env_remove("MIGR_THREADS")
            .output()
            .unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = walk(dir)
        .into_iter()
        .map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn zero_realizations_is_a_config_error() {
    let c = Case::new(&config(BUMP, r#"kind = "none""#, ""));
    let o = c.run(&["sample-source", "--realizations", "0"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("farfield.realizations"), "{}", stderr(&o));
    assert!(!c.path("out").exists());
}

#[test]
fn unknown_keys_and_bad_orders_are_rejected() {
    let c = Case::new(&config(BUMP, r#"kind = "none""#, ""));
    let o = c.run(&["farfield", "--set", "source.m=3.2"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("source.m"), "{}", stderr(&o));
    let o = c.run(&["farfield", "--set", "grid.bogus=1"]);
    assert_eq!(code(&o), 2);
    let o = c.run(&["farfield", "--set", "bands.tau_step=0.3"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bands.tau_step"), "{}", stderr(&o));
}

#[test]
fn reruns_are_byte_identical() {
    let text = config(BUMP, r#"kind = "gaussian"
amplitude = 2.0
decay_rate = 20.0"#, "");
    let a = Case::new(&text);
    let b = Case::new(&text);
    for c in [&a, &b] {
        assert_eq!(code(&c.run(&["sample-source", "--check-covariance"])), 0);
        assert_eq!(code(&c.run(&["farfield"])), 0);
        assert_eq!(code(&c.run(&["recover"])), 0);
    }
    let (fa, fb) = (files(&a.path("out")), files(&b.path("out")));
    assert!(fa.iter().any(|(n, _)| n.ends_with("samples.fld")));
    assert!(fa.iter().any(|(n, _)| n.ends_with("mu_recovered.fld")));
    assert_eq!(fa, fb);
}

#[test]
fn thread_count_does_not_change_results() {
    let text = config(BUMP, r#"kind = "none""#, "");
    let a = Case::new(&text);
    let b = Case::new(&text);
    assert_eq!(code(&a.run(&["farfield", "--threads", "1"])), 0);
    assert_eq!(code(&b.run(&["farfield", "--threads", "3"])), 0);
    assert_eq!(files(&a.path("out")), files(&b.path("out")));
}

#[test]
fn existing_output_needs_force() {
    let c = Case::new(&config(BUMP, r#"kind = "none""#, ""));
    assert_eq!(code(&c.run(&["farfield"])), 0);
    let before = files(&c.path("out"));
    let o = c.run(&["farfield", "--seed", "8"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));
    assert_eq!(files(&c.path("out")), before);
    assert_eq!(code(&c.run(&["farfield", "--seed", "8", "--force"])), 0);
    assert_ne!(files(&c.path("out")), before);
}

#[test]
fn farfield_records_model_digest() {
    let c = Case::new(&config(BUMP, r#"kind = "none""#, ""));
    assert_eq!(code(&c.run(&["sample-source"])), 0);
    let o = c.run(&["farfield"]);
    assert_eq!(code(&o), 0);
    let model = fs::read_to_string(c.path("out/model.meta")).unwrap();
    let digest = model.lines().find_map(|l| l.strip_prefix("model_digest")).unwrap().trim_start_matches([' ', '=']).trim();
    assert!(stdout(&o).contains(digest), "{digest} not in {}", stdout(&o));
    let ds = fs::read_to_string(c.path("out/dataset/samples.meta")).unwrap();
    assert!(ds.contains(digest));
}

#[test]
fn recover_rejects_a_different_order() {
    let c = Case::new(&config(BUMP, r#"kind = "none""#, ""));
    assert_eq!(code(&c.run(&["farfield"])), 0);
    let o = c.run(&["recover", "--set", "source.m=2.6"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("m = 2.5"), "{}", stderr(&o));
    assert!(!c.path("out/recovery").exists());
}

#[test]
fn recover_rejects_bands_outside_the_dataset() {
    let c = Case::new(&config(BUMP, r#"kind = "none""#, ""));
    assert_eq!(code(&c.run(&["farfield"])), 0);
    let o = c.run(&["recover", "--set", "bands.ks=[4.0, 6.5]"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("bands"), "{}", stderr(&o));
}

#[test]
fn zero_mu_recovers_zero() {
    let c = Case::new(&config(NONE, r#"kind = "gaussian"
amplitude = 2.0
decay_rate = 20.0"#, ""));
    assert_eq!(code(&c.run(&["sample-source"])), 0);
    let src = read_scalar_field(&c.path("out/source_0000.fld")).unwrap();
    assert!(src.values().iter().all(|v| *v == 0.0));
    assert_eq!(code(&c.run(&["farfield", "--force"])), 0);
    let o = c.run(&["recover"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mu = read_scalar_field(&c.path("out/recovery/mu_recovered.fld")).unwrap();
    assert_eq!(mu.grid().counts(), [8; 3]);
    assert!(mu.values().iter().all(|v| v.abs() <= 1e-300));
}

#[test]
fn oracle_adds_error_columns() {
    let c = Case::new(&config(BUMP, r#"kind = "none""#, ""));
    assert_eq!(code(&c.run(&["sample-source"])), 0);
    assert_eq!(code(&c.run(&["farfield", "--force"])), 0);
    let oracle = c.path("out/mu.fld");
    let o = c.run(&["recover", "--oracle", oracle.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (h, rows) = csv_rows(&c.path("out/recovery/bands.csv"));
    assert_eq!(h, ["K", "imag_ratio", "clamped_nodes", "rel_l2_error"]);
    assert_eq!(rows.len(), 2);
    let (h, rows) = csv_rows(&c.path("out/recovery/trajectory.csv"));
    assert_eq!(h, ["K", "dir", "tau", "re", "im", "abs_err"]);
    assert_eq!(rows.len(), 2 * 16 * 3);
    let meta = fs::read_to_string(c.path("out/recovery/recovery.meta")).unwrap();
    assert!(meta.contains("rel_l2_error"));
}

#[test]
fn ensemble_is_no_noisier_than_one_realization() {
    let c = Case::new(
        r#"
[grid]
side = 1.2
n = 24

[source]
m = 2.5
mu = { shape = "gaussian-bump", width = 0.15, cutoff = 0.4 }

[farfield]
directions = 16
dk = 0.125
realizations = 12
seed = 7

[bands]
ks = [12.0, 16.0]
tau_step = 0.5
tau_count = 50
"#,
    );
    assert_eq!(code(&c.run(&["sample-source"])), 0);
    assert_eq!(code(&c.run(&["farfield"])), 0);
    let oracle = c.path("out/mu.fld");
    let mut err = Vec::new();
    for kind in ["single-realization", "ensemble"] {
        let o = c.run(&["recover", "--kind", kind, "--force", "--oracle", oracle.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let (_, rows) = csv_rows(&c.path("out/recovery/bands.csv"));
        err.push(rows.last().unwrap()[3].parse::<f64>().unwrap());
    }
    assert!(err[0] >= err[1], "{err:?}");
}

#[test]
fn mean_subtracted_needs_a_mean_table_and_uses_it() {
    let c = Case::new(&config(
        BUMP,
        r#"kind = "none""#,
        "",
    ));
    assert_eq!(code(&c.run(&["farfield"])), 0);
    let o = c.run(&["recover", "--kind", "mean-subtracted"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = fs::read(c.path("out/recovery/trajectory.csv")).unwrap();
    let o = c.run(&["recover", "--kind", "single-realization", "--force"]);
    assert_eq!(code(&o), 0);
    // Ef = 0: subtracting a zero mean changes nothing
    assert_eq!(fs::read(c.path("out/recovery/trajectory.csv")).unwrap(), a);
}

#[test]
fn non_contraction_is_a_numerical_failure() {
    let c = Case::new(&config(BUMP, r#"kind = "gaussian"
amplitude = 5000.0
decay_rate = 5.0"#, ""));
    let o = c.run(&["farfield"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("k = "), "{}", stderr(&o));
}

#[test]
fn validate_on_zero_mu_passes_trivially() {
    let c = Case::new(&config(NONE, r#"kind = "none""#, ""));
    let o = c.run(&["validate"]);
    let text = stdout(&o);
    assert_eq!(code(&o), 0, "{text}");
    assert!(!text.contains("[FAIL]"));
    assert!(text.contains("[SKIP] cross decay"));
    assert!(text.contains("[SKIP] mean decay"));
    assert_eq!(fs::read_to_string(c.path("out/validate_report.txt")).unwrap(), text);
}

#[test]
fn validate_reports_fits_and_marks_disabled_checks() {
    let c = Case::new(&config(
        BUMP,
        r#"kind = "gaussian"
amplitude = 2.0
decay_rate = 20.0"#,
        "",
    ));
    let o = c.run(&["validate", "--set", "validate.covariance=false"]);
    let text = stdout(&o);
    assert!([0, 4].contains(&code(&o)), "{}", stderr(&o));
    let fits = text.lines().filter(|l| l.contains("slope")).count();
    assert!(fits >= 5, "{text}");
    let cov = text.lines().find(|l| l.contains("covariance")).unwrap();
    assert!(cov.starts_with("[SKIP]"), "{cov}");
    assert!(!text.contains("[SKIP] cross decay"));
    assert_eq!(code(&o) == 0, !text.contains("[FAIL]"));
}

#[test]
fn study_single_band_table() {
    let c = Case::new(&config(BUMP, r#"kind = "none""#, ""));
    let o = c.run(&["study", "--set", "bands.ks=[4.0]"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (h, rows) = csv_rows(&c.path("out/study/study_n16_r2.csv"));
    assert_eq!(h, ["K", "tau", "dir", "est_re", "est_im", "oracle_re", "oracle_im", "abs_err"]);
    assert_eq!(rows.len(), 16 * 3);
    assert!(rows.iter().all(|r| r[0] == "4.0"));
}

#[test]
fn study_sweeps_grid_sizes_and_counts() {
    let c = Case::new(&config(BUMP, r#"kind = "none""#, "[study]\ngrid_sizes = [16, 20]\nrealizations = [1, 2]"));
    let o = c.run(&["study"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for label in ["n16_r1", "n16_r2", "n20_r1", "n20_r2"] {
        let (_, rows) = csv_rows(&c.path(&format!("out/study/study_{label}.csv")));
        assert_eq!(rows.len(), 2 * 16 * 3);
    }
}

#[test]
fn study_rejects_uncovered_bands_up_front() {
    let c = Case::new(&config(BUMP, r#"kind = "none""#, ""));
    assert_eq!(code(&c.run(&["farfield"])), 0);
    let ds = c.path("out/dataset");
    let o = c.run(&["study", "--dataset", ds.to_str().unwrap(), "--set", "bands.ks=[4.0, 8.0]"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!c.path("out/study").exists());
    let o = c.run(&["study", "--set", "study.grid_sizes=[16, 9]"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("n = 9"), "{}", stderr(&o));
    assert!(!c.path("out/study").exists());
}
