//! Experiment orchestration: argument parsing, seed management, dispatch to
//! the library modules, atomic persistence, and plot-data emission.
//!
//! Exit-code contract: 1 config errors, 2 spec errors, 3 numeric failures,
//! 4 convergence flags under `--strict`.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::coefficients::{coeff_sequence, coeff_sequence_auto, gauss_hermite};
use crate::io::{atomic_write, read_dataset_dir, write_dataset_dir};
use crate::lab::{self, GStat, GepConfig, ScalingResult};
use crate::model::{load_spec, spec_to_json, NetworkSpec};
use crate::posterior_mc::{
    estimate_log_z, estimate_mi, gen_error, interp_free_entropy, mcmc_run, nishimori_check,
    GenErrorConfig, InterpConfig, LogZConfig, McmcConfig, MiConfig, NishimoriConfig,
};
use crate::reduction::reduce_full;
use crate::rng::Streams;
use crate::{log_info, Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "deep-gep",
    version,
    about = "Deep teacher-student networks, layer reduction to an equivalent GLM, and concentration experiments"
)]
pub struct Cli {
    /// Model specification (JSON).
    #[arg(long, global = true)]
    pub spec: Option<PathBuf>,
    /// Master seed; every run must be replayable, so wall-clock seeding
    /// does not exist.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output path (file or directory, op-dependent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads ("auto" or a count).
    #[arg(long, global = true, default_value = "auto")]
    pub threads: String,
    /// Turn convergence flags into exit code 4.
    #[arg(long, global = true)]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print the layer-coefficient table for a spec.
    Coeffs {
        /// Fixed quadrature order (default: 80 with automatic doubling).
        #[arg(long)]
        order: Option<usize>,
    },
    /// Reduce a spec to its equivalent GLM.
    Reduce {
        /// Also write the per-step reduction trail.
        #[arg(long)]
        trail: Option<PathBuf>,
    },
    /// Generate a teacher and dataset into a directory.
    GenData {
        #[arg(long)]
        n: usize,
    },
    /// Posterior Monte Carlo over a stored dataset.
    Mcmc {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Free-entropy estimate: on a stored dataset, or over fresh instances.
    FreeEntropy {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 16)]
        instances: usize,
    },
    /// Mutual information per data point over a fresh ensemble.
    Mi {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Bayes-optimal generalization error.
    GenError {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Teacher-replica vs replica-replica overlap identities.
    Nishimori {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Free entropy along the interpolated-channel path.
    InterpPath {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
        t_grid: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Concentration experiment suites (CSV output).
    Lab {
        /// orthogonality | postactivation | channel-ks | free-entropy-variance | psi-gap | gen-error-equivalence
        suite: String,
        #[arg(long)]
        sizes: Option<String>,
        #[arg(long)]
        n_mc: Option<usize>,
        #[arg(long)]
        k: Option<u32>,
        #[arg(long)]
        g: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        /// Hold one inner layer at this width (rate saturation check).
        #[arg(long)]
        pinch: Option<usize>,
        /// Run the free-entropy-variance ladder at an interpolated t.
        #[arg(long)]
        interp_t: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Convert results into gnuplot-style (x, y, yerr) columns.
    Plotdata {
        #[arg(long)]
        results: PathBuf,
        /// scaling | path | histogram
        #[arg(long)]
        kind: String,
    },
}

/// Echo of a completed run: configuration, version, timing, and the seeds
/// that drove it. The results payload itself is persisted separately so the
/// on-disk artifacts stay byte-stable across runs.
#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub op: String,
    pub params: Value,
    pub version: String,
    pub seed: Option<u64>,
    pub threads: String,
    pub wall_ms: u128,
    pub out_path: Option<String>,
    pub convergence_flagged: bool,
    pub summary: Value,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::Spec(_) => 2,
        Error::Shape(_) | Error::Numeric(_) | Error::Io(_) | Error::Json(_) => 3,
        Error::Convergence(_) => 4,
    }
}

fn require_seed(seed: Option<u64>) -> Result<Streams> {
    match seed {
        Some(s) => Ok(Streams::new(s)),
        None => Err(Error::Config(
            "--seed is required; wall-clock seeding is not supported".into(),
        )),
    }
}

fn require_spec(path: &Option<PathBuf>) -> Result<NetworkSpec> {
    match path {
        Some(p) => load_spec(p),
        None => Err(Error::Config("--spec is required for this op".into())),
    }
}

fn require_out(out: &Option<PathBuf>) -> Result<&PathBuf> {
    out.as_ref()
        .ok_or_else(|| Error::Config("--out is required for this op".into()))
}

fn load_config_file<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad config json: {e}")))
        }
    }
}

fn parse_usize_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::Config(format!("bad size list entry '{s}': {e}")))
        })
        .collect()
}

fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad grid entry '{s}': {e}")))
        })
        .collect()
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

fn scaling_results_to_csv(results: &[ScalingResult]) -> String {
    let mut s = String::from("suite,layer,d,n,statistic,value,std_err,slope,slope_stderr,flags\n");
    for r in results {
        for (i, (n, d)) in r.sizes.iter().enumerate() {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.suite,
                r.layer,
                d,
                n,
                r.statistic,
                fmt(r.values[i]),
                fmt(r.std_errs[i]),
                fmt(r.fitted_slope),
                fmt(r.slope_stderr),
                r.flags.join(";")
            ));
        }
    }
    s
}

fn jsonl_record(op: &str, params: &Value, estimate: f64, std_err: f64, diagnostics: Value, seed: u64) -> String {
    serde_json::to_string(&json!({
        "op": op,
        "params": params,
        "estimate": estimate,
        "std_err": std_err,
        "diagnostics": diagnostics,
        "seed": seed,
    }))
    .expect("jsonl record serialization cannot fail")
}

/// Dispatch one parsed invocation, persist its results atomically, and
/// return the run record.
pub fn run(cli: &Cli) -> Result<RunRecord> {
    let started = std::time::Instant::now();
    let mut convergence_flagged = false;
    let (op, params, summary): (String, Value, Value) = match &cli.command {
        Command::Coeffs { order } => {
            let spec = require_spec(&cli.spec)?;
            let (table, used_order) = match order {
                Some(o) => (coeff_sequence(&spec, &gauss_hermite(*o)?)?, *o),
                None => coeff_sequence_auto(&spec)?,
            };
            let table_json = serde_json::to_value(&table)?;
            println!("{}", serde_json::to_string(&table_json)?);
            println!("{}", coeff_table_text(&table));
            if let Some(out) = &cli.out {
                atomic_write(out, serde_json::to_string_pretty(&table_json)?.as_bytes())?;
            }
            (
                "coeffs".into(),
                json!({"order": used_order}),
                table_json,
            )
        }
        Command::Reduce { trail } => {
            let spec = require_spec(&cli.spec)?;
            let out = require_out(&cli.out)?;
            let (table, _) = coeff_sequence_auto(&spec)?;
            let (glm, steps) = reduce_full(&spec, &table)?;
            let glm_json = spec_to_json(&glm);
            atomic_write(out, serde_json::to_string_pretty(&glm_json)?.as_bytes())?;
            if let Some(trail_path) = trail {
                atomic_write(
                    trail_path,
                    serde_json::to_string_pretty(&serde_json::to_value(&steps)?)?.as_bytes(),
                )?;
            }
            ("reduce".into(), json!({"trail": trail.is_some()}), glm_json)
        }
        Command::GenData { n } => {
            let spec = require_spec(&cli.spec)?;
            let out = require_out(&cli.out)?;
            let streams = require_seed(cli.seed)?;
            let (_, data) = crate::forward::sample_dataset(&spec, *n, &streams, "gen-data", 0)?;
            write_dataset_dir(out, &spec, &data)?;
            (
                "gen-data".into(),
                json!({"n": n}),
                json!({"n": data.n(), "dir": out.display().to_string()}),
            )
        }
        Command::Mcmc { data, config } => {
            let streams = require_seed(cli.seed)?;
            let (spec, dataset) = read_dataset_dir(data)?;
            let mc: McmcConfig = load_config_file(config)?;
            let run = mcmc_run(&dataset, &spec, &mc, None, &streams, "cli.mcmc", 0)?;
            convergence_flagged |= run.diagnostics.flagged;
            let energies: Vec<f64> = run
                .replicas
                .iter()
                .flat_map(|r| r.energy_trace.iter().cloned())
                .collect();
            let estimate = crate::stats::mean(&energies);
            let std_err = crate::stats::mean_se(&energies);
            let diagnostics = serde_json::to_value(&run.diagnostics)?;
            let params = json!({"config": mc, "n": dataset.n()});
            if let Some(out) = &cli.out {
                let line = jsonl_record("mcmc", &params, estimate, std_err, diagnostics.clone(), streams.master());
                atomic_write(out, format!("{line}\n").as_bytes())?;
            }
            ("mcmc".into(), params, diagnostics)
        }
        Command::FreeEntropy {
            data,
            config,
            n,
            instances,
        } => {
            let streams = require_seed(cli.seed)?;
            let logz: LogZConfig = load_config_file(config)?;
            let mut lines = Vec::new();
            let (estimate, std_err, params) = match data {
                Some(dir) => {
                    let (spec, dataset) = read_dataset_dir(dir)?;
                    let z = estimate_log_z(&dataset, &spec, &logz, &streams, "cli.fe", 0)?;
                    if !z.flags.is_empty() {
                        convergence_flagged = true;
                    }
                    let n = dataset.n().max(1) as f64;
                    let params = json!({"config": logz, "data": dir.display().to_string()});
                    lines.push(jsonl_record(
                        "free-entropy",
                        &params,
                        z.mean / n,
                        z.std_err / n,
                        json!({"method": z.method, "flags": z.flags, "log_z": z.mean}),
                        streams.master(),
                    ));
                    (z.mean / n, z.std_err / n, params)
                }
                None => {
                    let spec = require_spec(&cli.spec)?;
                    let n = n.ok_or_else(|| {
                        Error::Config("--n is required when no --data is given".into())
                    })?;
                    let params = json!({"config": logz, "n": n, "instances": instances});
                    let mut vals = Vec::with_capacity(*instances);
                    for inst in 0..*instances {
                        let (fe, se) = crate::posterior_mc::free_entropy_once(
                            &spec,
                            n,
                            &logz,
                            &streams,
                            "cli.fe",
                            inst as u64,
                        )?;
                        lines.push(jsonl_record(
                            "free-entropy",
                            &json!({"instance": inst}),
                            fe,
                            se,
                            json!({}),
                            streams.master(),
                        ));
                        vals.push(fe);
                    }
                    let est = crate::stats::mean(&vals);
                    let se = crate::stats::mean_se(&vals);
                    lines.push(jsonl_record(
                        "free-entropy-aggregate",
                        &params,
                        est,
                        se,
                        json!({"instances": instances}),
                        streams.master(),
                    ));
                    (est, se, params)
                }
            };
            if let Some(out) = &cli.out {
                atomic_write(out, (lines.join("\n") + "\n").as_bytes())?;
            }
            (
                "free-entropy".into(),
                params,
                json!({"estimate": estimate, "std_err": std_err}),
            )
        }
        Command::Mi { n, config } => {
            let spec = require_spec(&cli.spec)?;
            let streams = require_seed(cli.seed)?;
            let mi_config: MiConfig = load_config_file(config)?;
            let mi = estimate_mi(&spec, *n, &mi_config, &streams, "cli.mi")?;
            if !mi.flags.is_empty() {
                convergence_flagged = true;
            }
            let params = json!({"n": n, "config": mi_config});
            let diagnostics = json!({
                "term_conditional": mi.term_conditional,
                "term_free_entropy": mi.term_free_entropy,
                "flags": mi.flags,
            });
            if let Some(out) = &cli.out {
                let line = jsonl_record("mi", &params, mi.mi_per_sample, mi.std_err, diagnostics.clone(), streams.master());
                atomic_write(out, format!("{line}\n").as_bytes())?;
            }
            ("mi".into(), params, diagnostics)
        }
        Command::GenError { n, config } => {
            let spec = require_spec(&cli.spec)?;
            let streams = require_seed(cli.seed)?;
            let ge_config: GenErrorConfig = load_config_file(config)?;
            let est = gen_error(&spec, *n, &ge_config, &streams, "cli.gen")?;
            convergence_flagged |= est.n_flagged > 0;
            let params = json!({"n": n, "config": ge_config});
            let diagnostics = json!({
                "n_flagged": est.n_flagged,
                "rhats": est.rhats,
                "per_instance": est.per_instance,
            });
            if let Some(out) = &cli.out {
                let line = jsonl_record("gen-error", &params, est.err, est.std_err, diagnostics.clone(), streams.master());
                atomic_write(out, format!("{line}\n").as_bytes())?;
            }
            ("gen-error".into(), params, diagnostics)
        }
        Command::Nishimori { n, config } => {
            let spec = require_spec(&cli.spec)?;
            let streams = require_seed(cli.seed)?;
            let nc: NishimoriConfig = load_config_file(config)?;
            let report = nishimori_check(&spec, *n, &nc, &streams, "cli.nishi")?;
            convergence_flagged |= report.n_flagged > 0 || !report.pass;
            let params = json!({"n": n, "config": nc});
            let mut lines = Vec::new();
            for s in &report.stats {
                lines.push(jsonl_record(
                    "nishimori",
                    &json!({"statistic": s.name}),
                    s.lhs - s.rhs,
                    s.diff_se,
                    json!({"lhs": s.lhs, "rhs": s.rhs, "lhs_se": s.lhs_se, "rhs_se": s.rhs_se, "pass": s.pass}),
                    streams.master(),
                ));
            }
            let diagnostics = json!({
                "pass": report.pass,
                "worst_rhat": report.worst_rhat,
                "n_flagged": report.n_flagged,
            });
            if let Some(out) = &cli.out {
                atomic_write(out, (lines.join("\n") + "\n").as_bytes())?;
            }
            ("nishimori".into(), params, diagnostics)
        }
        Command::InterpPath { n, t_grid, config } => {
            let spec = require_spec(&cli.spec)?;
            let streams = require_seed(cli.seed)?;
            let ic: InterpConfig = load_config_file(config)?;
            let grid = parse_f64_list(t_grid)?;
            let path = interp_free_entropy(&spec, &grid, *n, &ic, &streams, "cli.interp")?;
            let params = json!({"n": n, "t_grid": grid, "config": ic});
            let mut lines = Vec::new();
            for (i, t) in path.t_grid.iter().enumerate() {
                lines.push(jsonl_record(
                    "interp-path",
                    &json!({"t": t}),
                    path.estimates[i],
                    path.std_errs[i],
                    json!({}),
                    streams.master(),
                ));
            }
            if let Some(out) = &cli.out {
                atomic_write(out, (lines.join("\n") + "\n").as_bytes())?;
            }
            (
                "interp-path".into(),
                params,
                json!({"estimates": path.estimates, "std_errs": path.std_errs}),
            )
        }
        Command::Lab {
            suite,
            sizes,
            n_mc,
            k,
            g,
            samples,
            instances,
            ratio,
            runs,
            d,
            n,
            pinch,
            interp_t,
            config,
        } => {
            let spec = require_spec(&cli.spec)?;
            let streams = require_seed(cli.seed)?;
            let params = json!({
                "suite": suite, "sizes": sizes, "n_mc": n_mc, "k": k, "g": g,
                "samples": samples, "instances": instances, "ratio": ratio,
                "runs": runs, "d": d, "n": n, "pinch": pinch, "interp_t": interp_t,
            });
            let summary = run_lab_suite(
                &cli.out, &spec, suite, sizes, *n_mc, *k, g, *samples, *instances, *ratio, *runs,
                *d, *n, *pinch, *interp_t, config, &streams, &mut convergence_flagged,
            )?;
            (format!("lab {suite}"), params, summary)
        }
        Command::Plotdata { results, kind } => {
            let out = require_out(&cli.out)?;
            let text = emit_plotdata(results, kind)?;
            atomic_write(out, text.as_bytes())?;
            (
                "plotdata".into(),
                json!({"results": results.display().to_string(), "kind": kind}),
                json!({"out": out.display().to_string()}),
            )
        }
    };
    let record = RunRecord {
        op,
        params,
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cli.seed,
        threads: cli.threads.clone(),
        wall_ms: started.elapsed().as_millis(),
        out_path: cli.out.as_ref().map(|p| p.display().to_string()),
        convergence_flagged,
        summary,
    };
    log_info!("{} finished in {} ms", record.op, record.wall_ms);
    Ok(record)
}

#[allow(clippy::too_many_arguments)]
fn run_lab_suite(
    out: &Option<PathBuf>,
    spec: &NetworkSpec,
    suite: &str,
    sizes: &Option<String>,
    n_mc: Option<usize>,
    k: Option<u32>,
    g: &Option<String>,
    samples: Option<usize>,
    instances: Option<usize>,
    ratio: Option<f64>,
    runs: Option<usize>,
    d: Option<usize>,
    n: Option<usize>,
    pinch: Option<usize>,
    interp_t: Option<f64>,
    config: &Option<PathBuf>,
    streams: &Streams,
    convergence_flagged: &mut bool,
) -> Result<Value> {
    let write_csv = |csv: String| -> Result<()> {
        if let Some(path) = out {
            atomic_write(path, csv.as_bytes())?;
        } else {
            print!("{csv}");
        }
        Ok(())
    };
    match suite {
        "orthogonality" => {
            let d_list = parse_usize_list(sizes.as_deref().unwrap_or("64,128,256,512"))?;
            let results = lab::orthogonality_moments(
                spec,
                &d_list,
                k.unwrap_or(2),
                n_mc.unwrap_or(2000),
                pinch,
                streams,
            )?;
            write_csv(scaling_results_to_csv(&results))?;
            Ok(json!({"rows": results.len() * d_list.len()}))
        }
        "postactivation" => {
            let d_list = parse_usize_list(sizes.as_deref().unwrap_or("64,128,256,512"))?;
            let stat: GStat = g.as_deref().unwrap_or("phi_sq").parse()?;
            let results = lab::postactivation_moment_dev(
                spec,
                &d_list,
                stat,
                k.unwrap_or(2),
                n_mc.unwrap_or(2000),
                pinch,
                streams,
            )?;
            write_csv(scaling_results_to_csv(&results))?;
            Ok(json!({"rows": results.len() * d_list.len()}))
        }
        "channel-ks" => {
            let d = d.unwrap_or(512);
            let n_samples = samples.unwrap_or(10_000);
            let n_runs = runs.unwrap_or(1);
            if n_runs > 1 {
                let cal = lab::channel_ks_calibration(spec, d, n_samples, n_runs, 0.01, streams)?;
                let csv = format!(
                    "suite,layer,d,n,statistic,value,std_err,slope,slope_stderr,flags\nchannel-ks,0,{},{},reject_rate,{},{},nan,nan,{}\n",
                    d,
                    n_samples,
                    cal.rejects as f64 / cal.n_runs as f64,
                    cal.binomial_p,
                    if cal.binomial_p < 0.05 { "miscalibrated" } else { "" },
                );
                write_csv(csv)?;
                *convergence_flagged |= cal.binomial_p < 0.05;
                Ok(serde_json::to_value(&cal)?)
            } else {
                let ks = lab::channel_ks(spec, d, n_samples, streams, 0)?;
                let csv = format!(
                    "suite,layer,d,n,statistic,value,std_err,slope,slope_stderr,flags\n\
                     channel-ks,0,{d},{n_samples},ks_stat,{},nan,nan,nan,\n\
                     channel-ks,0,{d},{n_samples},p_value,{},nan,nan,nan,\n\
                     channel-ks,0,{d},{n_samples},var_original,{},nan,nan,nan,\n\
                     channel-ks,0,{d},{n_samples},var_reduced,{},nan,nan,nan,\n",
                    fmt(ks.ks_stat),
                    fmt(ks.p_value),
                    fmt(ks.var_original),
                    fmt(ks.var_reduced),
                );
                write_csv(csv)?;
                if let Some(path) = out {
                    if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
                        let line = jsonl_record(
                            "channel-ks",
                            &json!({"d": d, "samples": n_samples}),
                            ks.ks_stat,
                            0.0,
                            json!({
                                "p_value": ks.p_value,
                                "samples_original": ks.samples_original,
                                "samples_reduced": ks.samples_reduced,
                            }),
                            streams.master(),
                        );
                        atomic_write(path, format!("{line}\n").as_bytes())?;
                    }
                }
                Ok(json!({"ks_stat": ks.ks_stat, "p_value": ks.p_value}))
            }
        }
        "free-entropy-variance" => {
            let m_list = parse_usize_list(sizes.as_deref().unwrap_or("4,8,16"))?;
            let logz: LogZConfig = load_config_file(config)?;
            let result = lab::free_entropy_variance(
                spec,
                ratio.unwrap_or(1.0),
                &m_list,
                instances.unwrap_or(100),
                &logz,
                interp_t,
                streams,
            )?;
            *convergence_flagged |= !result.flags.is_empty();
            write_csv(scaling_results_to_csv(std::slice::from_ref(&result)))?;
            Ok(serde_json::to_value(&result)?)
        }
        "psi-gap" => {
            let d_list = parse_usize_list(sizes.as_deref().unwrap_or("64,256,1024"))?;
            let result = lab::psi_gap(spec, &d_list, n_mc.unwrap_or(4000), streams)?;
            let mut csv =
                String::from("suite,layer,d,n,statistic,value,std_err,slope,slope_stderr,flags\n");
            for p in &result.points {
                csv.push_str(&format!(
                    "psi-gap,0,{},{},psi_original,{},{},{},{},\n",
                    p.d,
                    n_mc.unwrap_or(4000),
                    fmt(p.psi_original),
                    fmt(p.se_original),
                    fmt(result.slope),
                    fmt(result.slope_stderr),
                ));
                csv.push_str(&format!(
                    "psi-gap,0,{},{},psi_reduced,{},{},{},{},\n",
                    p.d,
                    n_mc.unwrap_or(4000),
                    fmt(p.psi_reduced),
                    fmt(p.se_reduced),
                    fmt(result.slope),
                    fmt(result.slope_stderr),
                ));
                csv.push_str(&format!(
                    "psi-gap,0,{},{},gap,{},{},{},{},limit={}\n",
                    p.d,
                    n_mc.unwrap_or(4000),
                    fmt(p.gap),
                    fmt((p.se_original.powi(2) + p.se_reduced.powi(2)).sqrt()),
                    fmt(result.slope),
                    fmt(result.slope_stderr),
                    fmt(result.limit),
                ));
            }
            write_csv(csv)?;
            Ok(serde_json::to_value(&result)?)
        }
        "gen-error-equivalence" => {
            let gep: GepConfig = {
                let mut c: GepConfig = load_config_file(config)?;
                if let Some(i) = instances {
                    c.n_outer = i;
                }
                c
            };
            let d = d.unwrap_or(64);
            let n = n.unwrap_or(128);
            let result = lab::gen_error_equivalence(spec, d, n, &gep, streams)?;
            *convergence_flagged |= result.n_flagged > 0 || !result.pass;
            let csv = format!(
                "suite,layer,d,n,statistic,value,std_err,slope,slope_stderr,flags\n\
                 gen-error-equivalence,0,{d},{n},err_deep,{},{},nan,nan,\n\
                 gen-error-equivalence,0,{d},{n},err_glm,{},{},nan,nan,\n\
                 gen-error-equivalence,0,{d},{n},gap,{},{},nan,nan,{}\n",
                fmt(result.err_deep),
                fmt(result.se_deep),
                fmt(result.err_glm),
                fmt(result.se_glm),
                fmt(result.gap),
                fmt((result.se_deep.powi(2) + result.se_glm.powi(2)).sqrt()),
                if result.pass { "pass" } else { "fail" },
            );
            write_csv(csv)?;
            Ok(serde_json::to_value(&result)?)
        }
        other => Err(Error::Config(format!("unknown lab suite: {other}"))),
    }
}

fn coeff_table_text(table: &crate::coefficients::CoeffTable) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:>5} {:>14} {:>14} {:>14} {:>14} {:>14}\n",
        "layer", "sigma", "rho_l", "eps_l", "eta_k", "gamma_k"
    ));
    for l in 0..table.sigma.len() {
        let rho = if l == 0 {
            "-".to_string()
        } else {
            format!("{:.9}", table.rho_l[l - 1])
        };
        let eps = if l == 0 {
            "-".to_string()
        } else {
            format!("{:.9}", table.eps_l[l - 1])
        };
        s.push_str(&format!(
            "{:>5} {:>14.9} {:>14} {:>14} {:>14.9} {:>14.9}\n",
            l, table.sigma[l], rho, eps, table.eta[l], table.gamma[l]
        ));
    }
    s
}

/// Convert a results file into two-or-three-column plot text. Blocks are
/// separated by blank lines with a `#` header, gnuplot-index style.
pub fn emit_plotdata(results: &Path, kind: &str) -> Result<String> {
    let text = std::fs::read_to_string(results)?;
    match kind {
        "scaling" => {
            let mut lines = text.lines();
            let header = lines
                .next()
                .ok_or_else(|| Error::Numeric("empty results file".into()))?;
            if !header.starts_with("suite,layer,d,n,statistic") {
                return Err(Error::Numeric("results file is not a lab CSV".into()));
            }
            let mut groups: Vec<(String, Vec<(f64, f64, f64)>)> = Vec::new();
            for line in lines {
                if line.is_empty() {
                    continue;
                }
                let cells: Vec<&str> = line.split(',').collect();
                if cells.len() < 10 {
                    return Err(Error::Numeric(format!("short csv row: {line}")));
                }
                let key = format!("{} {} layer {}", cells[0], cells[4], cells[1]);
                let d: f64 = cells[2]
                    .parse()
                    .map_err(|e| Error::Numeric(format!("bad d: {e}")))?;
                let value: f64 = cells[5]
                    .parse()
                    .map_err(|e| Error::Numeric(format!("bad value: {e}")))?;
                let se: f64 = cells[6].parse().unwrap_or(f64::NAN);
                match groups.iter_mut().find(|(k, _)| *k == key) {
                    Some((_, rows)) => rows.push((d, value, se)),
                    None => groups.push((key, vec![(d, value, se)])),
                }
            }
            let mut out = String::new();
            for (key, rows) in groups {
                out.push_str(&format!("# {key}\n"));
                for (d, v, se) in rows {
                    if se.is_nan() {
                        out.push_str(&format!("{d} {v}\n"));
                    } else {
                        out.push_str(&format!("{d} {v} {se}\n"));
                    }
                }
                out.push('\n');
            }
            Ok(out)
        }
        "path" => {
            let mut out = String::from("# t estimate std_err\n");
            let mut any = false;
            for line in text.lines() {
                if line.is_empty() {
                    continue;
                }
                let v: Value = serde_json::from_str(line)
                    .map_err(|e| Error::Numeric(format!("results line is not json: {e}")))?;
                if v["op"] == "interp-path" {
                    let t = v["params"]["t"]
                        .as_f64()
                        .ok_or_else(|| Error::Numeric("interp record lacks t".into()))?;
                    let est = v["estimate"].as_f64().unwrap_or(f64::NAN);
                    let se = v["std_err"].as_f64().unwrap_or(f64::NAN);
                    out.push_str(&format!("{t} {est} {se}\n"));
                    any = true;
                }
            }
            if !any {
                return Err(Error::Numeric("no interp-path records in results".into()));
            }
            Ok(out)
        }
        "histogram" => {
            for line in text.lines() {
                if line.is_empty() {
                    continue;
                }
                let v: Value = serde_json::from_str(line)
                    .map_err(|e| Error::Numeric(format!("results line is not json: {e}")))?;
                let diag = &v["diagnostics"];
                if diag["samples_original"].is_array() {
                    let mut out = String::new();
                    for (name, key) in [
                        ("original", "samples_original"),
                        ("reduced", "samples_reduced"),
                    ] {
                        let samples: Vec<f64> = diag[key]
                            .as_array()
                            .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
                            .unwrap_or_default();
                        if samples.is_empty() {
                            continue;
                        }
                        out.push_str(&format!("# {name}\n"));
                        out.push_str(&histogram_block(&samples));
                        out.push('\n');
                    }
                    return Ok(out);
                }
            }
            Err(Error::Numeric("no sample arrays found in results".into()))
        }
        other => Err(Error::Config(format!("unknown plot kind: {other}"))),
    }
}

/// Freedman-Diaconis-ish fixed-width histogram normalized to a density.
fn histogram_block(samples: &[f64]) -> String {
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let lo = sorted[0];
    let hi = sorted[n - 1];
    let bins = (n as f64).sqrt().ceil().clamp(8.0, 128.0) as usize;
    let width = ((hi - lo) / bins as f64).max(f64::MIN_POSITIVE);
    let mut counts = vec![0usize; bins];
    for &x in &sorted {
        let b = (((x - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let mut s = String::new();
    for (b, c) in counts.iter().enumerate() {
        let center = lo + (b as f64 + 0.5) * width;
        let density = *c as f64 / (n as f64 * width);
        s.push_str(&format!("{center} {density}\n"));
    }
    s
}
