use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use nlfr_cli::config::{parse_config, CommandKind, Overrides};
use nlfr_cli::emit::{self, object_values};
use nlfr_cli::ingest::{ingest_life_table, read_table};
use nlfr_cli::CliError;
use nlfr_core::metric::{quantile_grid, MetricObject};
use nlfr_core::simgen::generate_replication;
use nlfr_core::{predict, Dataset, ModelId, SimulationSpec};
use tempfile::TempDir;

fn nlfr(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_nlfr")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stdout).unwrap(), String::from_utf8(out.stderr).unwrap())
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const MINIMAL: &str = r#"
version = 1
command = "simulate"
seed = 7
methods = ["LFR", "NLFR"]

[simulate]
model = "1.1"
n = 100
replications = 5
"#;

#[test]
fn minimal_config_round_trips_through_its_normal_form() {
    let dir = TempDir::new().unwrap();
    let path = write(&dir, "run.toml", MINIMAL);
    let (cfg, prov) = parse_config(Some(&path), CommandKind::Simulate, &Overrides::default()).unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.simulate.as_ref().unwrap().n_test, 500);
    assert!(prov.overrides.is_empty());
    let again = write(&dir, "normal.toml", &cfg.to_toml());
    let (cfg2, prov2) = parse_config(Some(&again), CommandKind::Simulate, &Overrides::default()).unwrap();
    assert_eq!(cfg, cfg2);
    assert_eq!(prov.config_sha256, prov2.config_sha256);
}

#[test]
fn unknown_method_is_a_validation_error_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let path = write(&dir, "run.toml", &MINIMAL.replace(r#"["LFR", "NLFR"]"#, r#"["LOESS"]"#));
    match parse_config(Some(&path), CommandKind::Simulate, &Overrides::default()) {
        Err(CliError::Validation { field, message }) => {
            assert_eq!(field, "methods[0]");
            assert!(message.contains("LOESS"));
        }
        other => panic!("{other:?}"),
    }
    let (code, _, err) = nlfr(&["--config", s(&path), "simulate"]);
    assert_eq!(code, 1);
    assert!(err.contains("methods[0]"), "{err}");
}

#[test]
fn unknown_keys_are_config_errors_naming_the_key() {
    let dir = TempDir::new().unwrap();
    let path = write(&dir, "run.toml", &MINIMAL.replace("n = 100", "n = 100\nbogus_key = 3"));
    let err = parse_config(Some(&path), CommandKind::Simulate, &Overrides::default()).unwrap_err();
    assert!(matches!(err, CliError::Config { .. }));
    assert!(err.to_string().contains("bogus_key"), "{err}");
    assert_eq!(err.exit_code(), 1);

    let broken = write(&dir, "broken.toml", "version = 1\ncommand = \n");
    let err = parse_config(Some(&broken), CommandKind::Simulate, &Overrides::default()).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
}

#[test]
fn flags_override_the_document_and_are_recorded() {
    let dir = TempDir::new().unwrap();
    let path = write(&dir, "run.toml", MINIMAL);
    let mut o = Overrides::default();
    o.set("seed", 11i64);
    let (cfg, prov) = parse_config(Some(&path), CommandKind::Simulate, &o).unwrap();
    assert_eq!(cfg.seed, 11);
    assert_eq!(prov.seed, 11);
    assert_eq!(prov.overrides.len(), 1);
    assert_eq!(prov.overrides[0].key, "seed");
    assert_eq!(prov.overrides[0].file.as_deref(), Some("7"));
    assert_eq!(prov.overrides[0].flag, "11");

    let (code, out, _) = nlfr(&["--config", s(&path), "--dry-run", "simulate", "--seed", "11"]);
    assert_eq!(code, 0);
    assert!(out.contains("seed = 11") && out.contains("[[provenance.overrides]]") && out.contains("file = \"7\""), "{out}");
}

#[test]
fn semantic_violations_exit_with_code_one() {
    let dir = TempDir::new().unwrap();
    let bad_grid = write(&dir, "grid.toml", &format!("{MINIMAL}\n[grid]\nlo = 1.0\nhi = -1.0\nsize = 5\nrefine = false\n"));
    let (code, _, err) = nlfr(&["--config", s(&bad_grid), "simulate"]);
    assert_eq!(code, 1, "{err}");
    assert!(err.contains("grid"));
    let (code, _, err) = nlfr(&["fit", "--data", "/nonexistent/data.csv"]);
    assert_eq!(code, 1);
    assert!(err.contains("fit.data"), "{err}");
    let (code, _, _) = nlfr(&["simulate", "--model", "3.7"]);
    assert_eq!(code, 1);
    let (code, _, _) = nlfr(&["--config", s(&write(&dir, "m.toml", MINIMAL)), "bench"]);
    assert_eq!(code, 1, "document for another command");
}

#[test]
fn simulate_writes_a_reproducible_results_table() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("res.csv");
    let args = ["simulate", "--model", "1.2", "--n", "60", "--replications", "2", "--seed", "3", "--methods", "LFR,NLFR,SNLFR"];
    let (code, _, err) = nlfr(&[&args[..], &["--output", s(&out)]].concat());
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("# seed: 3\n"));
    assert!(text.lines().any(|l| l.starts_with("# config_sha256: ") && l.len() == "# config_sha256: ".len() + 64));
    let table: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(table[0], "model,method,n,p,metric,MSE_Y,se_Y,MSE_m,se_m");
    assert_eq!(table.len(), 4);
    assert!(table[1].starts_with("1.2,LFR,60,2,wasserstein,"));

    // re-running the embedded config gives the same artifact apart from the run line
    let again = dir.path().join("again.csv");
    let (code, _, err) = nlfr(&["replay", s(&out), "--output", s(&again)]);
    assert_eq!(code, 0, "{err}");
    let text2 = std::fs::read_to_string(&again).unwrap();
    assert_eq!(emit::without_run_line(&text), emit::without_run_line(&text2));
    assert_eq!(text.lines().filter(|l| l.starts_with("# run: ")).count(), 1);
}

#[test]
fn json_results_are_reproducible_and_parse() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("res.json");
    let args = ["simulate", "--model", "1.3", "--n", "50", "--replications", "2", "--methods", "LFR,SNLFR", "--format", "json"];
    let (code, _, err) = nlfr(&[&args[..], &["--output", s(&out)]].concat());
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(&out).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["seed"], 0);
    let results = v["results"][0]["results"].as_array().unwrap();
    assert!(results.iter().any(|r| r["method"] == "SNLFR" && r["absent"] == true));
    let again = dir.path().join("again.json");
    assert_eq!(nlfr(&["replay", s(&out), "--output", s(&again)]).0, 0);
    assert_eq!(emit::without_run_line(&text), emit::without_run_line(&std::fs::read_to_string(&again).unwrap()));
}

fn life_table_csv(rows: &[(&str, f64, [f64; 4])]) -> String {
    let mut t = String::from("unit,gdp,age_0_20,age_20_40,age_40_60,age_60_100\n");
    for (u, g, c) in rows {
        writeln!(t, "{u},{g},{},{},{},{}", c[0], c[1], c[2], c[3]).unwrap();
    }
    t
}

#[test]
fn life_table_quantiles_follow_the_bins() {
    let dir = TempDir::new().unwrap();
    let path = write(
        &dir,
        "lt.csv",
        &life_table_csv(&[("a", 1.0, [0.0, 0.0, 0.0, 9.0]), ("b", 2.0, [5.0, 5.0, 0.0, 0.0]), ("c", 3.0, [1.0, 2.0, 3.0, 4.0])]),
    );
    let loaded = ingest_life_table(&path, 20, false).unwrap();
    assert_eq!(loaded.covariate_names, vec!["gdp"]);
    let grid = quantile_grid(20);
    let q = |i: usize| object_values(&loaded.data.y[i]);
    // all mass in [60, 100)
    for (v, t) in q(0).iter().zip(&grid) {
        assert!((v - (60.0 + 40.0 * t)).abs() < 1e-12);
    }
    // uniform over [0, 40)
    for (v, t) in q(1).iter().zip(&grid) {
        assert!((v - 40.0 * t).abs() < 1e-12);
    }
    assert!(q(2).windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn life_table_errors_carry_the_row() {
    let dir = TempDir::new().unwrap();
    let neg = write(&dir, "neg.csv", &life_table_csv(&[("a", 1.0, [1.0, 1.0, 1.0, 1.0]), ("b", 2.0, [1.0, -2.0, 1.0, 1.0])]));
    match ingest_life_table(&neg, 20, false) {
        Err(CliError::Data { row, message }) => assert_eq!((row, message.contains("negative")), (2, true)),
        other => panic!("{other:?}"),
    }
    let empty = write(&dir, "empty.csv", &life_table_csv(&[("a", 1.0, [0.0; 4]), ("b", 2.0, [1.0; 4])]));
    assert!(matches!(ingest_life_table(&empty, 20, false), Err(CliError::Data { row: 1, .. })));
    let (code, _, err) = nlfr(&["fit", "--data", s(&neg), "--data-format", "life_table", "--methods", "LFR"]);
    assert_eq!(code, 1);
    assert!(err.contains("row 2"), "{err}");
}

fn table_from(data: &Dataset) -> String {
    let cols = emit::value_columns(&data.space);
    let mut t = format!("unit,x1,x2,{}\n", cols.join(","));
    for (i, (x, y)) in data.x.rows().zip(&data.y).enumerate() {
        let vals: Vec<String> = object_values(y).iter().map(|v| format!("{v}")).collect();
        writeln!(t, "u{i},{},{},{}", x[0], x[1], vals.join(",")).unwrap();
    }
    t
}

fn covariates_from(data: &Dataset) -> String {
    let mut t = String::from("x2,x1\n");
    for x in data.x.rows() {
        writeln!(t, "{},{}", x[1], x[0]).unwrap();
    }
    t
}

fn fit_predict_pipeline(model: ModelId, space: &str, methods: &str) {
    let dir = TempDir::new().unwrap();
    let rep = generate_replication(&SimulationSpec::defaults(model, 2, 80, 5).unwrap(), 0).unwrap();
    let data_path = write(&dir, "train.csv", &table_from(&rep.train));
    let x_path = write(&dir, "x.csv", &covariates_from(&rep.test));
    let model_path = dir.path().join("model.json");
    let (code, _, err) =
        nlfr(&["fit", "--data", s(&data_path), "--space", space, "--methods", methods, "--output", s(&model_path)]);
    assert_eq!(code, 0, "{err}");

    let pred_path = dir.path().join("pred.csv");
    let (code, _, err) =
        nlfr(&["predict", "--model", s(&model_path), "--covariates", s(&x_path), "--methods", methods, "--output", s(&pred_path)]);
    assert_eq!(code, 0, "{err}");

    // the saved models reproduce in-process predictions exactly
    let doc = emit::load_model(&model_path).unwrap();
    let loaded = read_table(&data_path, doc.models[0].model.space.kind, false).unwrap();
    let text = std::fs::read_to_string(&pred_path).unwrap();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), rep.test.n() * doc.models.len());
    for rec in &rows {
        let i: usize = rec[0].parse().unwrap();
        let named = doc.models.iter().find(|m| m.method.to_string() == rec[1]).unwrap();
        let want = object_values(&predict(&named.model, rep.test.x.row(i - 1)).unwrap());
        let got: Vec<f64> = rec.iter().skip(2).map(|v| v.parse().unwrap()).collect();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        // every output is a feasible object
        if named.model.space.kind.is_spd() {
            let m = named.model.space.dims;
            let s = nalgebra::DMatrix::from_row_slice(m, m, &got);
            assert!((&s - s.transpose()).amax() <= 1e-12 * s.amax());
            assert!(s.symmetric_eigenvalues().min() > 0.0);
        } else {
            assert!(got.windows(2).all(|w| w[0] <= w[1]));
        }
    }
    assert_eq!(loaded.data.n(), rep.train.n());
}

#[test]
fn fit_then_predict_on_distributions() {
    fit_predict_pipeline(ModelId::M12, "wasserstein", "LFR,NLFR,SNLFR");
}

#[test]
fn fit_then_predict_on_spd_matrices() {
    fit_predict_pipeline(ModelId::M22, "spd_frobenius", "LFR,SNLFR,NLFR-R");
}

#[test]
fn model_document_round_trip_preserves_predictions() {
    let rep = generate_replication(&SimulationSpec::defaults(ModelId::M13, 2, 60, 9).unwrap(), 0).unwrap();
    let model = nlfr_core::fit_lfr(&rep.train).unwrap();
    let json = serde_json::to_string(&model).unwrap();
    let back: nlfr_core::FittedModel = serde_json::from_str(&json).unwrap();
    for x in rep.test.x.rows().take(50) {
        let (a, b) = (predict(&model, x).unwrap(), predict(&back, x).unwrap());
        let d = nlfr_core::metric::distance(&rep.train.space, &a, &b).unwrap();
        assert!(d <= 1e-12);
        assert!(matches!(a, MetricObject::Quantile(_)));
    }
}
