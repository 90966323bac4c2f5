//! End-to-end command-line tests: synthetic generation, fitting, variant
//! comparison, diagnostics export, surrogate simulation, compression
//! accounting, exit codes and thread-count invariance.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn evspec() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evspec"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn evspec");
    assert!(
        out.status.success(),
        "command failed with {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn small_spec(dir: &Path) -> PathBuf {
    let spec = r#"{
        "n_lat": 3,
        "n_lon": 12,
        "n_time": 30,
        "n_real": 3
    }"#;
    let path = dir.join("spec.json");
    fs::write(&path, spec).unwrap();
    path
}

fn generate_dataset(dir: &Path) -> (PathBuf, PathBuf) {
    let spec = small_spec(dir);
    run_ok(evspec()
        .arg("gen-synthetic")
        .arg("--spec")
        .arg(&spec)
        .arg("--seed")
        .arg("5")
        .arg("--out-dir")
        .arg(dir));
    (dir.join("data.evsp"), dir.join("mask.csv"))
}

fn fit_variant(dir: &Path, data: &Path, mask: &Path, variant: &str) -> PathBuf {
    let out = dir.join(format!("{variant}.json"));
    let cfg = dir.join("cfg.json");
    fs::write(&cfg, r#"{"g_min": 0, "g_max": 1, "n_starts": 2, "max_iter": 200}"#).unwrap();
    run_ok(evspec()
        .arg("fit")
        .arg("--data")
        .arg(data)
        .arg("--mask")
        .arg(mask)
        .arg("--variant")
        .arg(variant)
        .arg("--config")
        .arg(&cfg)
        .arg("--out-model")
        .arg(&out));
    out
}

#[test]
fn pipeline_fit_compare_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let (data, mask) = generate_dataset(dir.path());

    let ind = fit_variant(dir.path(), &data, &mask, "ind");
    let ax = fit_variant(dir.path(), &data, &mask, "ax");

    // compare: the axially symmetric model must beat independence
    let csv_path = dir.path().join("compare.csv");
    run_ok(evspec()
        .arg("compare")
        .arg("--model")
        .arg(&ind)
        .arg("--model")
        .arg(&ax)
        .arg("--out-csv")
        .arg(&csv_path));
    let csv = fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "variant,param_count,loglik,delta_loglik_per_obs,bic_larger_is_better"
    );
    let parse_row = |line: &str| -> (String, usize, f64) {
        let mut f = line.split(',');
        let variant = f.next().unwrap().to_string();
        let p: usize = f.next().unwrap().parse().unwrap();
        let loglik: f64 = f.next().unwrap().parse().unwrap();
        (variant, p, loglik)
    };
    let (v1, p1, l1) = parse_row(lines.next().unwrap());
    let (v2, p2, l2) = parse_row(lines.next().unwrap());
    assert_eq!((v1.as_str(), p1), ("ind", 0));
    assert_eq!(v2.as_str(), "ax");
    assert_eq!(p2, 3 * 3 + 2);
    assert!(l2 > l1, "ax loglik {l2} must beat ind {l1}");

    // simulate from the fitted model and read the output back
    let sim = dir.path().join("surrogate.evsp");
    run_ok(evspec()
        .arg("simulate")
        .arg("--model")
        .arg(&ax)
        .arg("--runs")
        .arg("2")
        .arg("--seed")
        .arg("9")
        .arg("--out")
        .arg(&sim));
    let back = evspec::io::read_tensor_raw(&sim).unwrap();
    assert_eq!(back.dims(), (3, 12, 30, 2));
    assert!(back.values.iter().all(|v| v.is_finite()));

    // same seed reproduces bit-identical output
    let sim2 = dir.path().join("surrogate2.evsp");
    run_ok(evspec()
        .arg("simulate")
        .arg("--model")
        .arg(&ax)
        .arg("--runs")
        .arg("2")
        .arg("--seed")
        .arg("9")
        .arg("--out")
        .arg(&sim2));
    assert_eq!(fs::read(&sim).unwrap(), fs::read(&sim2).unwrap());
}

#[test]
fn compression_report_matches_independence_algebra() {
    let dir = tempfile::tempdir().unwrap();
    let (data, mask) = generate_dataset(dir.path());
    let ind = fit_variant(dir.path(), &data, &mask, "ind");
    let out = run_ok(evspec().arg("report-compression").arg("--model").arg(&ind));
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    // ratio = 3 MN / MNKR = 3 / (K R) with K = 30, R = 3
    let expect = 3.0 / (30.0 * 3.0);
    let line = text
        .lines()
        .find(|l| l.starts_with("parameter ratio:"))
        .expect("ratio line present");
    let value: f64 =
        line.split_whitespace().nth(2).unwrap().parse().expect("ratio parses");
    assert!((value - expect).abs() < 1e-12, "ratio {value} vs {expect}");
    assert!(text.contains("spatial parameters: 0"));
}

#[test]
fn diagnose_contrasts_on_axial_model_is_constant_per_band() {
    let dir = tempfile::tempdir().unwrap();
    let (data, mask) = generate_dataset(dir.path());
    let ax = fit_variant(dir.path(), &data, &mask, "ax");
    let csv_path = dir.path().join("contrasts.csv");
    run_ok(evspec()
        .arg("diagnose")
        .arg("--report")
        .arg("contrasts")
        .arg("--data")
        .arg(&data)
        .arg("--model")
        .arg(&ax)
        .arg("--out-csv")
        .arg(&csv_path));
    let csv = fs::read_to_string(&csv_path).unwrap();
    // model-implied east-west contrasts are constant across longitude under
    // axial symmetry
    let mut per_band: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields[0] != "site" {
            continue;
        }
        let band: usize = fields[1].parse().unwrap();
        let ew_model: f64 = fields[5].parse().unwrap();
        per_band.entry(band).or_default().push(ew_model);
    }
    assert_eq!(per_band.len(), 3);
    for (band, values) in per_band {
        let first = values[0];
        for v in values {
            assert!(
                (v - first).abs() <= 1e-12 * first.abs(),
                "band {band}: ew values differ ({v} vs {first})"
            );
        }
    }
}

#[test]
fn diagnose_periodogram_writes_band_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (data, mask) = generate_dataset(dir.path());
    let csv_path = dir.path().join("perio.csv");
    run_ok(evspec()
        .arg("diagnose")
        .arg("--report")
        .arg("periodogram")
        .arg("--data")
        .arg(&data)
        .arg("--mask")
        .arg(&mask)
        .arg("--taper-spacings")
        .arg("2.0")
        .arg("--out-csv")
        .arg(&csv_path));
    let csv = fs::read_to_string(&csv_path).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "band,wavenumber,land,ocean");
    assert_eq!(rows.len(), 1 + 3 * 12);
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let dir = tempfile::tempdir().unwrap();

    // usage error: unknown flag
    let out = evspec().arg("fit").arg("--bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // i/o error: missing file
    let out = evspec()
        .arg("fit")
        .arg("--data")
        .arg(dir.path().join("missing.evsp"))
        .arg("--mask")
        .arg(dir.path().join("missing.csv"))
        .arg("--variant")
        .arg("ax")
        .arg("--out-model")
        .arg(dir.path().join("m.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    // validation error: corrupt tensor magic
    let bad = dir.path().join("bad.evsp");
    fs::write(&bad, b"NOPE0000000000000000").unwrap();
    let out = evspec()
        .arg("fit")
        .arg("--data")
        .arg(&bad)
        .arg("--mask")
        .arg(dir.path().join("missing.csv"))
        .arg("--variant")
        .arg("ax")
        .arg("--out-model")
        .arg(dir.path().join("m.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));

    // validation error: unknown variant
    let (data, mask) = generate_dataset(dir.path());
    let out = evspec()
        .arg("fit")
        .arg("--data")
        .arg(&data)
        .arg("--mask")
        .arg(&mask)
        .arg("--variant")
        .arg("nope")
        .arg("--out-model")
        .arg(dir.path().join("m.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));

    // numerical error: constant field has zero-variance sites
    let grid = evspec::SphereGrid::equally_spaced_deg(3, (-40.0, 40.0), 12, 30, 3).unwrap();
    let values = ndarray::Array4::from_elem(grid.shape(), 1.0);
    let field = evspec::EnsembleField::new(grid, values).unwrap();
    let flat = dir.path().join("flat.evsp");
    evspec::io::write_tensor(&flat, &field).unwrap();
    let out = evspec()
        .arg("fit")
        .arg("--data")
        .arg(&flat)
        .arg("--mask")
        .arg(&mask)
        .arg("--variant")
        .arg("ind")
        .arg("--out-model")
        .arg(dir.path().join("m.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn fits_are_invariant_to_thread_count_env() {
    let dir = tempfile::tempdir().unwrap();
    let (data, mask) = generate_dataset(dir.path());
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"g_min": 0, "g_max": 0, "n_starts": 1, "max_iter": 150}"#).unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "2", "8"] {
        let out = dir.path().join(format!("model_t{threads}.json"));
        run_ok(evspec()
            .env("EVSP_THREADS", threads)
            .arg("fit")
            .arg("--data")
            .arg(&data)
            .arg("--mask")
            .arg(&mask)
            .arg("--variant")
            .arg("ev-st")
            .arg("--config")
            .arg(&cfg)
            .arg("--out-model")
            .arg(&out));
        outputs.push(fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "1 vs 2 threads differ");
    assert_eq!(outputs[0], outputs[2], "1 vs 8 threads differ");
}

#[test]
fn gen_synthetic_is_seed_deterministic() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let spec_a = small_spec(dir_a.path());
    for (dir, spec) in [(&dir_a, &spec_a), (&dir_b, &small_spec(dir_b.path()))] {
        run_ok(evspec()
            .arg("gen-synthetic")
            .arg("--spec")
            .arg(spec)
            .arg("--seed")
            .arg("77")
            .arg("--out-dir")
            .arg(dir.path()));
    }
    let a = fs::read(dir_a.path().join("data.evsp")).unwrap();
    let b = fs::read(dir_b.path().join("data.evsp")).unwrap();
    assert_eq!(a, b);
    let ta = fs::read(dir_a.path().join("truth.json")).unwrap();
    let tb = fs::read(dir_b.path().join("truth.json")).unwrap();
    assert_eq!(ta, tb);
}

#[test]
fn simulate_respects_trend_knot_policy() {
    let dir = tempfile::tempdir().unwrap();
    let (data, mask) = generate_dataset(dir.path());
    let ax = fit_variant(dir.path(), &data, &mask, "ax");
    for policy in ["store-full", "knots:6"] {
        let out = dir.path().join(format!("sim_{}.evsp", policy.replace(':', "_")));
        run_ok(evspec()
            .arg("simulate")
            .arg("--model")
            .arg(&ax)
            .arg("--trend-policy")
            .arg(policy)
            .arg("--runs")
            .arg("1")
            .arg("--seed")
            .arg("3")
            .arg("--out")
            .arg(&out));
    }
    // a bad policy string is a usage-level validation failure
    let out = evspec()
        .arg("simulate")
        .arg("--model")
        .arg(&ax)
        .arg("--trend-policy")
        .arg("zip")
        .arg("--runs")
        .arg("1")
        .arg("--out")
        .arg(dir.path().join("x.evsp"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}
