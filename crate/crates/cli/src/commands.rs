use crate::error::{CliError, CliResult};
use crate::output::RunDir;
use beta_transport::equilibrium::{check_hypotheses, solve_equilibrium};
use beta_transport::experiment::{
    build_pipeline, derive_seed, loglog_slope, residual_study, sample_law, universality_experiment,
    ExperimentConfig, UniversalityReport,
};
use beta_transport::master_operator::{Polynomial, RealFn, XiOperator};
use beta_transport::samplers::{potential_id, SamplerKind};
use beta_transport::{EigenSample, Potential, TransportMap};
use serde::Serialize;
use std::path::Path;
use std::sync::Arc;

const DENSITY_POINTS: usize = 401;
const HISTOGRAM_BINS: usize = 40;

fn target_potential(cfg: &ExperimentConfig) -> CliResult<Potential> {
    let (v, w) = cfg.potentials()?;
    Ok(v.axpy(1.0, &w))
}

pub fn equilibrium(cfg: &ExperimentConfig, run: &mut RunDir) -> CliResult<()> {
    let (v, _) = cfg.potentials()?;
    let mut failures = Vec::new();
    for (label, pot) in [("source", v), ("target", target_potential(cfg)?)] {
        let mu = solve_equilibrium(&pot)?;
        let report = check_hypotheses(&mu, &pot);
        let (a, b) = mu.support();
        log::info!("{label}: support [{a:.10}, {b:.10}], hypotheses passed: {}", report.passed());
        run.write_json(&format!("{label}_measure.json"), &mu)?;
        run.write_json(&format!("{label}_hypotheses.json"), &report)?;
        run.write_csv(&format!("{label}_density.csv"), |w| {
            w.write_record(["x", "density", "cdf"])?;
            for k in 0..DENSITY_POINTS {
                let x = a + (b - a) * k as f64 / (DENSITY_POINTS - 1) as f64;
                w.serialize((x, mu.density(x), mu.cdf(x)))?;
            }
            Ok(())
        })?;
        if !report.passed() {
            failures.push(format!("{label}: {}", report.details));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Hypothesis(failures.join("; ")))
    }
}

#[derive(Serialize)]
struct XiInverseSummary {
    g: Vec<f64>,
    c_g: f64,
    support: (f64, f64),
    /// `max |Ξf − g − c_g|` over the written grid.
    round_trip_error: f64,
}

pub fn invert_xi(cfg: &ExperimentConfig, g: &[f64], points: usize, target: bool, run: &mut RunDir) -> CliResult<()> {
    if g.is_empty() || points < 2 {
        return Err(CliError::Config("need at least one coefficient and two grid points".into()));
    }
    let v = if target { target_potential(cfg)? } else { cfg.potentials()?.0 };
    let mu = solve_equilibrium(&v)?;
    let op = XiOperator::new(&mu, &v)?;
    let g_fn: Arc<dyn RealFn> = Arc::new(Polynomial(g.to_vec()));
    let (f, c_g) = op.invert(g_fn.clone())?;
    let image = op.apply(&f);
    let (a, b) = mu.support();
    let (lo, hi) = (a - 1.0, b + 1.0);
    let mut worst = 0.0f64;
    run.write_csv("xi_inverse.csv", |w| {
        w.write_record(["x", "f", "xi_f", "g"])?;
        for k in 0..points {
            let x = lo + (hi - lo) * k as f64 / (points - 1) as f64;
            let (fx, ix, gx) = (f.eval(x), image.eval(x), g_fn.eval(x));
            worst = worst.max((ix - gx - c_g).abs());
            w.serialize((x, fx, ix, gx))?;
        }
        Ok(())
    })?;
    run.write_json(
        "xi_inverse.json",
        &XiInverseSummary {
            g: g.to_vec(),
            c_g,
            support: (a, b),
            round_trip_error: worst,
        },
    )
}

#[derive(Serialize)]
struct BuildReport {
    source_support: (f64, f64),
    target_support: (f64, f64),
    matching_scale: f64,
    matching_shift: f64,
    lipschitz: f64,
    derivative_bounds: (f64, f64),
    field_residuals: Vec<beta_transport::transport_fields::FieldResiduals>,
}

/// Builds the map and writes the bundle, the tabulated `T₀` and a report.
pub fn build_map(cfg: &ExperimentConfig, run: &mut RunDir) -> CliResult<TransportMap> {
    let (pair, map) = build_pipeline(cfg)?;
    let residuals = map.fields().verify_all()?;
    for r in &residuals {
        log::info!(
            "t = {:.4}: residuals y0 {:.2e}, z {:.2e}, y1 {:.2e}",
            r.t,
            r.y0,
            r.z,
            r.y1
        );
        if r.max() > 1e-5 {
            log::warn!("field residual {:.2e} at t = {:.4} exceeds 1e-5", r.max(), r.t);
        }
    }
    run.write_bytes("map.json", map.to_json()?.as_bytes())?;
    let nodes: Vec<f64> = map.table().map(|(x, _, _)| x).collect();
    let rows = nodes
        .iter()
        .map(|&x| Ok((x, map.t0(x)?, map.derivative_at(x)?)))
        .collect::<CliResult<Vec<_>>>()?;
    run.write_csv("t0.csv", |w| {
        w.write_record(["x", "t0", "t0_prime"])?;
        for r in &rows {
            w.serialize(r)?;
        }
        Ok(())
    })?;
    let m = map.matching();
    run.write_json(
        "build_report.json",
        &BuildReport {
            source_support: pair.mu_source.support(),
            target_support: pair.mu_target.support(),
            matching_scale: m.scale,
            matching_shift: m.shift,
            lipschitz: map.lipschitz(),
            derivative_bounds: map.derivative_bounds(),
            field_residuals: residuals,
        },
    )?;
    Ok(map)
}

fn lambda_header(n: usize, prefix: &str) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}_{k}")).collect()
}

#[derive(Serialize)]
struct SampleSummary {
    n: usize,
    n_samples: usize,
    potential_id: String,
    sampler: SamplerKind,
    seed: u64,
    mean_acceptance_rate: Option<f64>,
    min_ess: Option<f64>,
}

pub fn sample(cfg: &ExperimentConfig, n: Option<usize>, target: bool, run: &mut RunDir) -> CliResult<()> {
    let n = n.or_else(|| cfg.n_list.first().copied()).filter(|&n| n > 0);
    let n = n.ok_or_else(|| CliError::Config("no positive N given".into()))?;
    let (pot, stage) = if target { (target_potential(cfg)?, 101) } else { (cfg.potentials()?.0, 100) };
    let seed = derive_seed(cfg.seed, stage);
    let samples = sample_law(&pot, n, &cfg.sampler, seed)?;
    run.write_csv("samples.csv", |w| {
        let mut header = vec!["sample".to_string(), "seed".to_string()];
        header.extend(lambda_header(n, "lambda"));
        w.write_record(&header)?;
        for (i, s) in samples.iter().enumerate() {
            let mut row = vec![i.to_string(), s.seed.to_string()];
            row.extend(s.lambdas.iter().map(|l| l.to_string()));
            w.write_record(&row)?;
        }
        Ok(())
    })?;
    let rates: Vec<f64> = samples.iter().filter_map(|s| s.acceptance_rate).collect();
    run.write_json(
        "samples_summary.json",
        &SampleSummary {
            n,
            n_samples: samples.len(),
            potential_id: potential_id(&pot),
            sampler: samples[0].sampler,
            seed,
            mean_acceptance_rate: (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64),
            min_ess: samples.iter().filter_map(|s| s.ess).reduce(f64::min),
        },
    )
}

/// Reads a `samples.csv` written by `sample`.
pub fn read_samples(path: &Path, v: &Potential) -> CliResult<Vec<EigenSample>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let seed_col = headers.iter().position(|h| h == "seed");
    let cols: Vec<usize> = (0..headers.len()).filter(|&i| headers[i].starts_with("lambda_")).collect();
    if cols.is_empty() {
        return Err(CliError::Config(format!("{}: no lambda_k columns", path.display())));
    }
    let id = potential_id(v);
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |what: &str| CliError::Config(format!("{}: row {}: bad {what}", path.display(), row + 1));
        let mut lambdas = cols
            .iter()
            .map(|&c| record[c].trim().parse::<f64>().map_err(|_| bad("eigenvalue")))
            .collect::<CliResult<Vec<f64>>>()?;
        if lambdas.iter().any(|l| !l.is_finite()) {
            return Err(bad("eigenvalue"));
        }
        lambdas.sort_by(f64::total_cmp);
        let seed = match seed_col {
            Some(c) => record[c].trim().parse().map_err(|_| bad("seed"))?,
            None => 0,
        };
        out.push(EigenSample {
            lambdas,
            beta: v.beta(),
            potential_id: id.clone(),
            seed,
            sampler: SamplerKind::Mcmc,
            acceptance_rate: None,
            ess: None,
        });
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("{}: no samples", path.display())));
    }
    Ok(out)
}

#[derive(Serialize)]
struct TransportSummary {
    n: usize,
    n_samples: usize,
    order_preserved_fraction: f64,
}

pub fn transport(cfg: &ExperimentConfig, map_path: &Path, samples_path: &Path, run: &mut RunDir) -> CliResult<()> {
    let map = TransportMap::load(map_path)?;
    let (v, _) = cfg.potentials()?;
    if map.fields().source() != &v {
        log::warn!("the map was built for a different source potential than the configuration's");
    }
    let samples = read_samples(samples_path, &v)?;
    let n = samples[0].n();
    if samples.iter().any(|s| s.n() != n) {
        return Err(CliError::Config("samples have different N".into()));
    }
    let mapped = map.apply_all(&samples)?;
    run.write_csv("mapped.csv", |w| {
        let mut header: Vec<String> = ["sample", "seed", "n", "order_preserved"].map(String::from).to_vec();
        header.extend(lambda_header(n, "t"));
        w.write_record(&header)?;
        for (i, m) in mapped.iter().enumerate() {
            let mut row = vec![
                i.to_string(),
                m.input.seed.to_string(),
                n.to_string(),
                m.order_preserved.to_string(),
            ];
            row.extend(m.output.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        Ok(())
    })?;
    let preserved = mapped.iter().filter(|m| m.order_preserved).count();
    run.write_json(
        "transport_summary.json",
        &TransportSummary {
            n,
            n_samples: mapped.len(),
            order_preserved_fraction: preserved as f64 / mapped.len() as f64,
        },
    )
}

/// Which gate families decide the outcome of `compare`.
#[derive(Debug, Clone, Copy)]
pub struct GateSelection {
    pub bulk: bool,
    pub edge: bool,
    pub transported: bool,
}

impl GateSelection {
    pub const ALL: Self = Self {
        bulk: true,
        edge: true,
        transported: true,
    };

    fn selects(&self, name: &str) -> bool {
        if name.starts_with("transported_") {
            self.transported
        } else if name.starts_with("bulk") {
            self.bulk
        } else {
            self.edge
        }
    }
}

fn histogram(xs: &[f64], ys: &[f64], bins: usize) -> Vec<(f64, f64, usize, usize)> {
    let (lo, hi) = xs
        .iter()
        .chain(ys)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![(0usize, 0usize); bins];
    let slot = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    for &x in xs {
        counts[slot(x)].0 += 1;
    }
    for &y in ys {
        counts[slot(y)].1 += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, (a, b))| (lo + k as f64 * width, lo + (k + 1) as f64 * width, a, b))
        .collect()
}

fn file_tag(name: &str) -> String {
    name.replace("[k=", "_k").replace(']', "")
}

/// Runs the universality experiment at every `N` and writes reports and
/// histograms. Returns the names of failed selected gates.
fn run_comparisons(
    cfg: &ExperimentConfig,
    map: &TransportMap,
    pair: &beta_transport::flow::MatchedPair,
    select: GateSelection,
    run: &mut RunDir,
) -> CliResult<(Vec<UniversalityReport>, Vec<String>)> {
    let mut failed = Vec::new();
    let mut reports = Vec::new();
    for &n in &cfg.n_list {
        log::info!("N = {n}: sampling, transporting and comparing");
        let seed = derive_seed(cfg.seed, 500 + n as u64);
        let report = universality_experiment(map, pair, n, &cfg.sampler, &cfg.statistics, seed)?;
        for gate in report.gates().filter(|g| select.selects(&g.name)) {
            log::info!(
                "N = {n} {}: KS {:.4} (p {:.3}) vs threshold {:.4}",
                gate.name,
                gate.report.ks,
                gate.report.ks_p_value,
                gate.null.threshold
            );
            if !gate.passed() {
                failed.push(format!("N={n} {}", gate.name));
            }
        }
        for (name, xs, ys) in report.samples.iter().filter(|s| select.selects(&s.0)) {
            run.write_csv(&format!("hist_N{n}_{}.csv", file_tag(name)), |w| {
                w.write_record(["bin_lo", "bin_hi", "count_source", "count_target"])?;
                for row in histogram(xs, ys, HISTOGRAM_BINS) {
                    w.serialize(row)?;
                }
                Ok(())
            })?;
        }
        run.write_json(&format!("compare_N{n}.json"), &report)?;
        reports.push(report);
    }
    Ok((reports, failed))
}

pub fn compare(cfg: &ExperimentConfig, map_path: Option<&Path>, select: GateSelection, run: &mut RunDir) -> CliResult<()> {
    let (pair, built) = build_pipeline(cfg)?;
    let map = match map_path {
        Some(p) => TransportMap::load(p)?,
        None => built,
    };
    let (_, failed) = run_comparisons(cfg, &map, &pair, select, run)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Statistical(format!("gates failed: {}", failed.join(", "))))
    }
}

#[derive(Serialize)]
struct SlopeRow {
    t: f64,
    slope: f64,
    monotone: bool,
}

pub fn residual_study_cmd(cfg: &ExperimentConfig, run: &mut RunDir) -> CliResult<()> {
    let (_, map) = build_pipeline(cfg)?;
    let times = &cfg.statistics.residual_times;
    let rows = residual_study(map.fields(), &cfg.n_list, times, &cfg.sampler, derive_seed(cfg.seed, 400))?;
    run.write_csv("residuals.csv", |w| {
        w.write_record(["n", "t", "mean_abs_deviation", "se", "c_hat"])?;
        for r in &rows {
            w.serialize((r.n, r.t, r.mean_abs_deviation, r.se, r.c_hat))?;
        }
        Ok(())
    })?;
    let slopes: Vec<SlopeRow> = times
        .iter()
        .filter_map(|&t| {
            let col: Vec<_> = rows.iter().filter(|r| r.t == t).collect();
            if col.len() < 2 || col.iter().any(|r| r.mean_abs_deviation <= 0.0) {
                return None;
            }
            let ns: Vec<f64> = col.iter().map(|r| r.n as f64).collect();
            let ys: Vec<f64> = col.iter().map(|r| r.mean_abs_deviation).collect();
            Some(SlopeRow {
                t,
                slope: loglog_slope(&ns, &ys),
                monotone: ys.windows(2).all(|w| w[1] < w[0]),
            })
        })
        .collect();
    for s in &slopes {
        log::info!("t = {}: log-log slope {:.3}, monotone {}", s.t, s.slope, s.monotone);
    }
    run.write_json("residual_slopes.json", &slopes)
}

#[derive(Serialize)]
struct PipelineReport<'a> {
    passed: bool,
    failed_gates: &'a [String],
    reports: &'a [UniversalityReport],
}

pub fn pipeline(cfg: &ExperimentConfig, run: &mut RunDir) -> CliResult<()> {
    let map = build_map(cfg, run)?;
    let (v, w) = cfg.potentials()?;
    let pair = beta_transport::flow::MatchedPair::new(&v, &w)?;
    let (reports, failed) = run_comparisons(cfg, &map, &pair, GateSelection::ALL, run)?;
    run.write_json(
        "pipeline_report.json",
        &PipelineReport {
            passed: failed.is_empty(),
            failed_gates: &failed,
            reports: &reports,
        },
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Statistical(format!("gates failed: {}", failed.join(", "))))
    }
}
