use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn betamap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_betamap"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run betamap")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn small(source: &str, perturbation: &str, beta: f64, seed: u64) -> String {
    format!(
        r#"{{"source":{source},"perturbation":{perturbation},"beta":{beta},"n_list":[12],
        "sampler":{{"n_samples":200,"burn_in":300}},
        "statistics":{{"bulk_window":2,"null_replicates":4,"bootstrap":20,"residual_times":[0,1]}},
        "seed":{seed}}}"#
    )
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (headers, rows)
}

fn column(rows: &[Vec<String>], k: usize) -> Vec<f64> {
    rows.iter().map(|r| r[k].parse().unwrap()).collect()
}

fn out_dir(tmp: &TempDir, name: &str) -> String {
    tmp.path().join(name).to_str().unwrap().to_string()
}

#[test]
fn gaussian_equilibrium_writes_the_semicircle() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "g.json", &small("[0,0,0.5]", "[0]", 2.0, 1));
    let out = out_dir(&tmp, "eq");
    let run = betamap(&["equilibrium", cfg.to_str().unwrap(), "--out", &out]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let (headers, rows) = read_csv(&Path::new(&out).join("source_density.csv"));
    assert_eq!(headers, ["x", "density", "cdf"]);
    for (x, d) in column(&rows, 0).into_iter().zip(column(&rows, 1)) {
        let exact = (4.0 - x * x).max(0.0).sqrt() / (2.0 * std::f64::consts::PI);
        // the solved endpoints sit within 1e-15 of ±2, which the square
        // root amplifies to ~1e-8 right at the edge
        let tol = if x.abs() > 1.999 { 1e-7 } else { 1e-10 };
        assert!((d - exact).abs() < tol, "x {x}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&out).join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["files"].as_array().unwrap().len(), 6);
}

#[test]
fn double_well_is_a_hypothesis_failure() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "dw.json", &small("[0,0,-1,0,0.25]", "[0]", 1.0, 1));
    let out = out_dir(&tmp, "dw");
    let run = betamap(&["equilibrium", cfg.to_str().unwrap(), "--out", &out]);
    assert_eq!(code(&run), 3);
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(stderr.contains("hypothesis"), "{stderr}");
    let manifest = fs::read_to_string(Path::new(&out).join("manifest.json")).unwrap();
    assert!(manifest.contains("failed"));
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let tmp = TempDir::new().unwrap();
    let out = out_dir(&tmp, "x");
    let malformed = write_config(tmp.path(), "bad.json", "{\"source\": [0, 0, 0.5],");
    assert_eq!(code(&betamap(&["build-map", malformed.to_str().unwrap(), "--out", &out])), 2);
    let no_seed = write_config(
        tmp.path(),
        "noseed.json",
        r#"{"source":[0,0,0.5],"perturbation":[0],"beta":2,"n_list":[10]}"#,
    );
    assert_eq!(code(&betamap(&["sample", no_seed.to_str().unwrap(), "--out", &out])), 2);
    let unknown = write_config(
        tmp.path(),
        "unknown.json",
        r#"{"source":[0,0,0.5],"perturbation":[0],"beta":2,"n_list":[10],"seed":1,"colour":3}"#,
    );
    assert_eq!(code(&betamap(&["sample", unknown.to_str().unwrap(), "--out", &out])), 2);
    let non_confining = write_config(tmp.path(), "nc.json", &small("[0,0,0.5]", "[0,0,0,0,-1]", 2.0, 1));
    assert_eq!(code(&betamap(&["build-map", non_confining.to_str().unwrap(), "--out", &out])), 2);
    assert_eq!(code(&betamap(&["no-such-command"])), 2);
    // a seed given on the command line completes a config without one
    assert_eq!(code(&betamap(&["sample", no_seed.to_str().unwrap(), "--seed", "4", "--out", &out])), 0);
}

#[test]
fn build_map_outputs() {
    let tmp = TempDir::new().unwrap();
    // W ≡ 0: the identity
    let cfg = write_config(tmp.path(), "zero.json", &small("[0,0,0.5]", "[0]", 2.0, 1));
    let out = out_dir(&tmp, "zero");
    assert_eq!(code(&betamap(&["build-map", cfg.to_str().unwrap(), "--out", &out])), 0);
    let (_, rows) = read_csv(&Path::new(&out).join("t0.csv"));
    assert_eq!(rows.len(), 512);
    for r in &rows {
        assert_eq!(r[0], r[1]);
        assert_eq!(r[2], "1.0");
    }
    // semicircle radius change: a linear T₀
    let kappa: f64 = 1.7;
    let q = 2.0 * (kappa - 1.0) / 4.0;
    let cfg = write_config(tmp.path(), "rescale.json", &small("[0,0,0.5]", &format!("[0,0,{q}]"), 2.0, 1));
    let out = out_dir(&tmp, "rescale");
    assert_eq!(code(&betamap(&["build-map", cfg.to_str().unwrap(), "--out", &out])), 0);
    let (_, rows) = read_csv(&Path::new(&out).join("t0.csv"));
    let slope = 1.0 / kappa.sqrt();
    for r in &rows {
        let (x, t, d): (f64, f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap());
        assert!((t - slope * x).abs() < 1e-6 && (d - slope).abs() < 1e-6, "x {x}");
    }
    // Gaussian → quartic: residual checks recorded in the report
    let cfg = write_config(tmp.path(), "quartic.toml", &quartic_toml(1.0, 7));
    let out = out_dir(&tmp, "quartic");
    assert_eq!(code(&betamap(&["build-map", cfg.to_str().unwrap(), "--out", &out])), 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&out).join("build_report.json")).unwrap()).unwrap();
    let residuals = report["field_residuals"].as_array().unwrap();
    assert_eq!(residuals.len(), 17);
    for r in residuals {
        for key in ["y0", "z", "y1"] {
            assert!(r[key].as_f64().unwrap() <= 1e-5);
        }
    }
}

fn quartic_toml(beta: f64, seed: u64) -> String {
    format!(
        "source = [0.0, 0.0, {}]\nperturbation = [0.0, 0.0, 0.0, 0.0, 0.1]\nbeta = {beta}\nn_list = [12]\nseed = {seed}\n\n\
         [sampler]\nn_samples = 200\nburn_in = 300\n\n\
         [statistics]\nbulk_window = 2\nnull_replicates = 4\nbootstrap = 20\n",
        beta / 4.0
    )
}

#[test]
fn sample_then_transport() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "q.toml", &quartic_toml(1.0, 9));
    let (map_out, sample_out, tr_out) = (out_dir(&tmp, "m"), out_dir(&tmp, "s"), out_dir(&tmp, "t"));
    let c = cfg.to_str().unwrap();
    assert_eq!(code(&betamap(&["build-map", c, "--out", &map_out])), 0);
    assert_eq!(code(&betamap(&["sample", c, "--n", "15", "--out", &sample_out])), 0);
    let samples = Path::new(&sample_out).join("samples.csv");
    let (headers, rows) = read_csv(&samples);
    assert_eq!(headers.len(), 17);
    assert_eq!(rows.len(), 200);
    let map = Path::new(&map_out).join("map.json");
    let run = betamap(&[
        "transport",
        c,
        "--map",
        map.to_str().unwrap(),
        "--samples",
        samples.to_str().unwrap(),
        "--out",
        &tr_out,
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let (headers, mapped) = read_csv(&Path::new(&tr_out).join("mapped.csv"));
    assert_eq!(&headers[..4], ["sample", "seed", "n", "order_preserved"]);
    assert_eq!(mapped.len(), 200);
    for (m, s) in mapped.iter().zip(&rows) {
        assert_eq!(m[1], s[1]);
        assert_eq!(m[2], "15");
        assert_eq!(m[3], "true");
        let out: Vec<f64> = m[4..].iter().map(|v| v.parse().unwrap()).collect();
        assert!(out.windows(2).all(|w| w[0] < w[1]));
    }
    // the target sampler is a different law
    assert_eq!(code(&betamap(&["sample", c, "--n", "15", "--target", "--out", &sample_out])), 0);
    let (_, target) = read_csv(&samples);
    assert_ne!(target[0][2..], rows[0][2..]);
}

#[test]
fn invert_xi_round_trip() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "q.toml", &quartic_toml(2.0, 1));
    let out = out_dir(&tmp, "xi");
    let run = betamap(&["invert-xi", cfg.to_str().unwrap(), "--g=-1,0.5,0,2", "--target", "--out", &out]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&out).join("xi_inverse.json")).unwrap()).unwrap();
    assert!(summary["round_trip_error"].as_f64().unwrap() < 1e-6);
    let (headers, rows) = read_csv(&Path::new(&out).join("xi_inverse.csv"));
    assert_eq!(headers, ["x", "f", "xi_f", "g"]);
    assert_eq!(rows.len(), 201);
}

#[test]
fn residual_study_without_perturbation_is_zero() {
    let tmp = TempDir::new().unwrap();
    let body = small("[0,0,0.5]", "[0]", 2.0, 2).replace("\"n_list\":[12]", "\"n_list\":[16,8]");
    let cfg = write_config(tmp.path(), "z.json", &body);
    let out = out_dir(&tmp, "r");
    assert_eq!(code(&betamap(&["residual-study", cfg.to_str().unwrap(), "--out", &out])), 0);
    let (headers, rows) = read_csv(&Path::new(&out).join("residuals.csv"));
    assert_eq!(headers, ["n", "t", "mean_abs_deviation", "se", "c_hat"]);
    assert_eq!(column(&rows, 0), [8.0, 8.0, 16.0, 16.0]);
    assert!(column(&rows, 2).iter().all(|&v| v == 0.0));
}

#[test]
fn pipeline_is_reproducible_and_passes_at_the_null() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "null.json", &small("[0,0,0.5]", "[0]", 2.0, 11));
    let c = cfg.to_str().unwrap();
    let (a, b) = (out_dir(&tmp, "a"), out_dir(&tmp, "b"));
    assert_eq!(code(&betamap(&["pipeline", c, "--out", &a])), 0);
    assert_eq!(code(&betamap(&["pipeline", c, "--out", &b, "--threads", "2"])), 0);
    for name in ["pipeline_report.json", "compare_N12.json", "manifest.json", "hist_N12_edge_k1.csv", "t0.csv"] {
        let (x, y) = (Path::new(&a).join(name), Path::new(&b).join(name));
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{name}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&a).join("pipeline_report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
}

#[test]
fn wrong_map_is_a_statistical_failure() {
    let tmp = TempDir::new().unwrap();
    let identity = write_config(tmp.path(), "id.json", &small("[0,0,0.5]", "[0]", 2.0, 5));
    let strong = write_config(tmp.path(), "strong.json", &small("[0,0,0.5]", "[0,0,0,0,0.6]", 2.0, 5));
    let (m, out) = (out_dir(&tmp, "m"), out_dir(&tmp, "c"));
    assert_eq!(code(&betamap(&["build-map", identity.to_str().unwrap(), "--out", &m])), 0);
    let map = Path::new(&m).join("map.json");
    let run = betamap(&[
        "compare",
        strong.to_str().unwrap(),
        "--map",
        map.to_str().unwrap(),
        "--transported",
        "--out",
        &out,
    ]);
    assert_eq!(code(&run), 5, "{}", String::from_utf8_lossy(&run.stderr));
    let names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert!(names.iter().any(|n| n.starts_with("hist_N12_transported_bulk")));
    assert!(!names.iter().any(|n| n.starts_with("hist_N12_bulk")));
    assert!(names.contains(&"manifest.json".to_string()));
}
