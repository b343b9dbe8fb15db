use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use hiercop::data::HierarchicalDataset;
use hiercop::diagnostics::{exchangeability_structure_check, exchangeable_kendall_tau, pooled_kendall_tau, quadrant_kendall_tau};
use hiercop::estimation::{cluster_bootstrap_se, fit_ifm, fit_mle, FittedModel};
use hiercop::model::{cluster_residual_ranks, margin_ranks, simulate, ModelFamilies, ModelSpec};
use hiercop::prediction::{prediction_curve, write_curve_csv, write_density_csv, PredictionContext};
use hiercop::study::{run_scenario_with, school_spec, synth_school_study, ScenarioConfig};
use hiercop::substream_rng;

#[derive(Parser)]
#[command(name = "hiercop", version, about = "Copula regression for clustered data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Ifm,
    Mle,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate clustered data from a model spec.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        /// Comma-separated cluster sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model by IFM or maximum likelihood.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        families: PathBuf,
        #[arg(long, value_enum, default_value = "mle")]
        method: MethodArg,
        #[arg(long)]
        out: PathBuf,
        /// Cluster bootstrap replicates for standard errors (at least 50).
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Predictive mean and quantile curves for a new unit of a cluster.
    Predict {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Cluster whose observed pairs condition the prediction; omit for a
        /// cluster with no history.
        #[arg(long)]
        cluster: Option<String>,
        /// Grid `a:b:k` of k equally spaced x values.
        #[arg(long, allow_hyphen_values = true)]
        x_grid: String,
        #[arg(long, value_delimiter = ',', default_value = "0.025,0.5,0.975")]
        quantiles: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the predictive density at this x over --y-grid.
        #[arg(long, requires_all = ["y_grid", "density_out"])]
        density_x: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        y_grid: Option<String>,
        #[arg(long)]
        density_out: Option<PathBuf>,
    },
    /// Run a Monte Carlo study scenario.
    Mc {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the replicate count of the scenario file.
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Kendall's tau diagnostics and the exchangeable structure check.
    Diagnose {
        #[arg(long)]
        data: PathBuf,
        /// Model whose residual ranks are also summarised.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthetic school-marks data (48 clusters, 728 pupils).
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the generating model spec.
        #[arg(long)]
        spec_out: Option<PathBuf>,
    },
}

enum CliError {
    Usage(String),
    Lib(hiercop::Error),
    /// Numerical failure after a partial result was written.
    Partial(String),
}

impl From<hiercop::Error> for CliError {
    fn from(e: hiercop::Error) -> Self {
        CliError::Lib(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| hiercop::Error::Io(e).into())
}

fn create(path: &Path) -> CliResult<std::io::BufWriter<fs::File>> {
    Ok(std::io::BufWriter::new(fs::File::create(path).map_err(hiercop::Error::Io)?))
}

fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::Usage(format!("grid '{s}' must look like a:b:k with k >= 1"));
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, k] = parts.as_slice() else { return Err(bad()) };
    let (a, b): (f64, f64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
    let k: usize = k.parse().map_err(|_| bad())?;
    match k {
        0 => Err(bad()),
        1 => Ok(vec![a]),
        _ => Ok((0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect()),
    }
}

fn simulate_cmd(spec: &Path, sizes: &[usize], seed: u64, out: &Path) -> CliResult {
    let spec = ModelSpec::from_json(&read(spec)?)?;
    let data = simulate(&spec, sizes, &mut substream_rng(seed, 0))?;
    data.write_csv(out)?;
    Ok(())
}

fn fit_cmd(
    data: &Path,
    families: &Path,
    method: MethodArg,
    out: &Path,
    bootstrap: Option<usize>,
    seed: u64,
) -> CliResult {
    let data = HierarchicalDataset::read_csv(data)?;
    let families = ModelFamilies::from_json(&read(families)?)?;
    let (ifm, trace) = match fit_ifm(&families, &data) {
        Ok(r) => r,
        Err(e) if e.is_numerical() => {
            write(out, &serde_json::to_string_pretty(&json!({"schema": 1, "status": "failed", "error": e.to_string()})).unwrap())?;
            return Err(CliError::Partial(e.to_string()));
        }
        Err(e) => return Err(e.into()),
    };
    let mut fit = match method {
        MethodArg::Ifm => ifm,
        MethodArg::Mle => match fit_mle(&families, &data, Some(&ifm.spec)) {
            Ok(f) => f,
            Err(e) if e.is_numerical() => {
                let mut partial = json!({"schema": 1, "status": "failed", "error": e.to_string(), "ifm": ifm, "trace": trace});
                if let hiercop::Error::NonConvergence { last_iterate, grad_norm, iterations, .. } = &e {
                    partial["mle_last_iterate"] = json!(last_iterate);
                    partial["mle_grad_norm"] = json!(grad_norm);
                    partial["mle_iterations"] = json!(iterations);
                }
                write(out, &serde_json::to_string_pretty(&partial).unwrap())?;
                return Err(CliError::Partial(e.to_string()));
            }
            Err(e) => return Err(e.into()),
        },
    };
    fit.seed = Some(seed);
    let mut doc = serde_json::to_value(&fit).map_err(hiercop::Error::Json)?;
    doc["status"] = json!("converged");
    doc["trace"] = serde_json::to_value(&trace).map_err(hiercop::Error::Json)?;
    if let Some(b) = bootstrap {
        let refit = |d: &HierarchicalDataset| -> hiercop::Result<FittedModel> {
            let (f, _) = fit_ifm(&families, d)?;
            match method {
                MethodArg::Ifm => Ok(f),
                MethodArg::Mle => fit_mle(&families, d, Some(&f.spec)),
            }
        };
        doc["bootstrap"] = serde_json::to_value(cluster_bootstrap_se(refit, &data, b, seed)?).map_err(hiercop::Error::Json)?;
    }
    write(out, &serde_json::to_string_pretty(&doc).unwrap())?;
    println!("loglik {:.6}  aic {:.6}", fit.loglik, fit.aic);
    for ((name, est), se) in fit.names.iter().zip(&fit.estimates).zip(&fit.se) {
        match se {
            Some(se) => println!("{name:<16} {est:>12.6} ({se:.6})"),
            None => println!("{name:<16} {est:>12.6} (fixed)"),
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn predict_cmd(
    fit: &Path,
    data: Option<&Path>,
    cluster: Option<&str>,
    x_grid: &str,
    quantiles: &[f64],
    out: &Path,
    density: Option<(f64, &str, &Path)>,
) -> CliResult {
    let fit = FittedModel::from_json(&read(fit)?)?;
    let spec = &fit.spec;
    let history = match (cluster, data) {
        (Some(id), Some(path)) => {
            let data = HierarchicalDataset::read_csv(path)?;
            let c = data
                .cluster(id)
                .ok_or_else(|| CliError::Usage(format!("cluster '{id}' not found in {}", path.display())))?
                .clone();
            Some(c)
        }
        (Some(_), None) => return Err(CliError::Usage("--cluster needs --data".into())),
        (None, _) => None,
    };
    if let Some(&p) = quantiles.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(CliError::Usage(format!("quantile level {p} must lie in (0, 1)")));
    }
    let xs = parse_grid(x_grid)?;
    let (lo, hi) = spec.margin_x.support();
    if let Some(x) = xs.iter().find(|&&x| !(x > lo && x < hi)) {
        return Err(CliError::Usage(format!("x = {x} lies outside the support ({lo}, {hi}) of the X margin")));
    }
    let ctx = PredictionContext::new(spec, history.as_ref())?;
    let points = prediction_curve(&ctx, &xs, quantiles)?;
    write_curve_csv(&points, quantiles, create(out)?)?;
    let w = history.as_ref().map(|c| cluster_residual_ranks(spec, c)).unwrap_or_default();
    let summary = match ctx.moments() {
        Some((mu0, sigma0)) => json!({"cluster": cluster, "n_history": w.len(), "mu0": mu0, "sigma0": sigma0, "approximate": false}),
        None => json!({"cluster": cluster, "n_history": w.len(), "mu0": null, "sigma0": null, "approximate": true}),
    };
    println!("{summary}");
    if let Some((x, grid, path)) = density {
        write_density_csv(&ctx, x, &parse_grid(grid)?, create(path)?)?;
    }
    Ok(())
}

fn mc_cmd(scenario: &Path, out: &Path, replicates: Option<usize>) -> CliResult {
    let mut cfg: ScenarioConfig = serde_json::from_str(&read(scenario)?).map_err(hiercop::Error::Json)?;
    if let Some(b) = replicates {
        cfg.b = b;
    }
    cfg.validate()?;
    let done = std::sync::atomic::AtomicUsize::new(0);
    let report = run_scenario_with(&cfg, |_| {
        let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        if k % 50 == 0 {
            eprintln!("{k}/{} replicates", cfg.b);
        }
    })?;
    write(out, &report.to_json()?)?;
    print!("{}", report.table());
    if report.flagged {
        eprintln!(
            "warning: {:.1}% of replicates failed (more than 5%)",
            100.0 * report.failure_rate
        );
    }
    Ok(())
}

fn tau_json(t: hiercop::Result<hiercop::diagnostics::TauEstimate>) -> Value {
    match t {
        Ok(t) => json!(t),
        Err(e) => json!({"error": e.to_string()}),
    }
}

fn diagnose_cmd(data: &Path, spec: Option<&Path>, out: Option<&Path>) -> CliResult {
    let data = HierarchicalDataset::read_csv(data)?;
    let (x, y) = (data.all_x(), data.all_y());
    let xs: Vec<Vec<f64>> = data.clusters.iter().map(|c| c.x.clone()).collect();
    let ys: Vec<Vec<f64>> = data.clusters.iter().map(|c| c.y.clone()).collect();
    let mut doc = json!({
        "clusters": data.len(),
        "units": data.n_units(),
        "pooled_tau": tau_json(pooled_kendall_tau(&x, &y)),
        "exchangeable_tau_x": tau_json(exchangeable_kendall_tau(&xs)),
        "exchangeable_tau_y": tau_json(exchangeable_kendall_tau(&ys)),
        "quadrant_tau": match quadrant_kendall_tau(&x, &y) {
            Ok(q) => json!(q),
            Err(e) => json!({"error": e.to_string()}),
        },
        "structure": match exchangeability_structure_check(&data, 4) {
            Ok(s) => json!(s),
            Err(e) => json!({"error": e.to_string()}),
        },
    });
    if let Some(path) = spec {
        let spec = ModelSpec::from_json(&read(path)?)?;
        let ws: Vec<Vec<f64>> = data.clusters.iter().map(|c| cluster_residual_ranks(&spec, c)).collect();
        let us: Vec<f64> = margin_ranks(&spec.margin_x, &x);
        let w_all: Vec<f64> = ws.iter().flatten().copied().collect();
        doc["exchangeable_tau_residual"] = tau_json(exchangeable_kendall_tau(&ws));
        doc["tau_u_residual"] = tau_json(pooled_kendall_tau(&us, &w_all));
    }
    let text = serde_json::to_string_pretty(&doc).unwrap();
    match out {
        Some(p) => write(p, &text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn synth_cmd(seed: u64, out: &Path, spec_out: Option<&Path>) -> CliResult {
    synth_school_study(seed)?.write_csv(out)?;
    if let Some(p) = spec_out {
        write(p, &school_spec().to_json()?)?;
    }
    Ok(())
}

fn configure_threads() -> CliResult {
    if let Ok(v) = std::env::var("HIERCOP_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("HIERCOP_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    configure_threads()?;
    match cli.command {
        Command::Simulate { spec, sizes, seed, out } => simulate_cmd(&spec, &sizes, seed, &out),
        Command::Fit {
            data,
            families,
            method,
            out,
            bootstrap,
            seed,
        } => fit_cmd(&data, &families, method, &out, bootstrap, seed),
        Command::Predict {
            fit,
            data,
            cluster,
            x_grid,
            quantiles,
            out,
            density_x,
            y_grid,
            density_out,
        } => {
            let density = match (density_x, y_grid.as_deref(), density_out.as_deref()) {
                (Some(x), Some(g), Some(p)) => Some((x, g, p)),
                _ => None,
            };
            predict_cmd(&fit, data.as_deref(), cluster.as_deref(), &x_grid, &quantiles, &out, density)
        }
        Command::Mc { scenario, out, replicates } => mc_cmd(&scenario, &out, replicates),
        Command::Diagnose { data, spec, out } => diagnose_cmd(&data, spec.as_deref(), out.as_deref()),
        Command::Synth { seed, out, spec_out } => synth_cmd(seed, &out, spec_out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Partial(msg)) => {
            eprintln!("error: {msg} (partial results written)");
            ExitCode::from(3)
        }
        Err(CliError::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
