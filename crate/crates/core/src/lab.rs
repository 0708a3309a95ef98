//! Experiment suites measuring the concentration rates behind the layer
//! reduction: quasi-orthogonality of post-activations, moment deviations,
//! distributional channel equivalence, free-entropy variance scaling, the
//! channel-constant gap, and side-by-side generalization errors.
//!
//! Every suite runs its (size, instance) cells as independent tasks with
//! deterministic per-cell streams, merged by index, so results do not
//! depend on thread count.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{
    channel_entropy_at_scale, coeff_sequence_auto, gauss_hermite, psi_constant,
};
use crate::forward::{propagate, propagate_with_preacts, sample_dataset};
use crate::model::{sample_teacher, NetworkSpec, ReadoutKind};
use crate::posterior_mc::{estimate_log_z, LogZConfig, McmcConfig};
use crate::reduction::paired_experiment;
use crate::rng::{fill_normal, Streams};
use crate::stats::{jackknife_se, ks_two_sample, mean, mean_se, ols, variance};
use crate::{Error, Result};

/// One measured statistic across a size ladder, with a log-log slope fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingResult {
    pub suite: String,
    pub statistic: String,
    pub layer: usize,
    /// (n, d) per ladder point.
    pub sizes: Vec<(usize, usize)>,
    pub values: Vec<f64>,
    pub std_errs: Vec<f64>,
    pub fitted_slope: f64,
    pub slope_stderr: f64,
    pub flags: Vec<String>,
}

const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Log-log OLS slope of a per-size statistic with a bootstrap standard
/// error. `stat` maps a resampled index set for one size to the statistic
/// value; the resample stream is deterministic.
fn bootstrap_slope<F>(
    sizes: &[f64],
    per_size_len: &[usize],
    stat: F,
    streams: &Streams,
    tag: &str,
) -> (f64, f64)
where
    F: Fn(usize, &[usize]) -> f64,
{
    let lx: Vec<f64> = sizes.iter().map(|d| d.ln()).collect();
    let identity: Vec<Vec<usize>> = per_size_len.iter().map(|&l| (0..l).collect()).collect();
    let ly: Vec<f64> = identity
        .iter()
        .enumerate()
        .map(|(i, ix)| stat(i, ix).abs().max(f64::MIN_POSITIVE).ln())
        .collect();
    let (slope, _) = ols(&lx, &ly);
    let mut rng = streams.stream(tag, &[]);
    let mut boots = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut buf: Vec<usize> = Vec::new();
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let ly_b: Vec<f64> = (0..sizes.len())
            .map(|i| {
                let l = per_size_len[i];
                buf.clear();
                buf.extend((0..l).map(|_| rand::Rng::random_range(&mut rng, 0..l)));
                stat(i, &buf).abs().max(f64::MIN_POSITIVE).ln()
            })
            .collect();
        let (s, _) = ols(&lx, &ly_b);
        boots.push(s);
    }
    (slope, variance(&boots).sqrt())
}

fn square_dims(spec: &NetworkSpec, d: usize) -> NetworkSpec {
    let mut s = spec.clone();
    s.dims = vec![d; spec.depth + 1];
    s
}

/// Square architecture, except that one inner layer is held at a fixed
/// small width. The concentration rates are governed by the minimum width,
/// so a ladder with a pinch saturates instead of decaying.
fn pinched_dims(spec: &NetworkSpec, d: usize, pinch: Option<usize>) -> NetworkSpec {
    let mut s = square_dims(spec, d);
    if let (Some(p), true) = (pinch, spec.depth >= 1) {
        let mid = spec.depth.div_ceil(2);
        s.dims[mid] = p;
    }
    s
}

/// k-th absolute moment of the normalized overlap X_μ·X_ν/d_l between the
/// post-activations of two independent inputs, per layer and size.
pub fn orthogonality_moments(
    spec: &NetworkSpec,
    d_list: &[usize],
    k: u32,
    n_mc: usize,
    pinch: Option<usize>,
    streams: &Streams,
) -> Result<Vec<ScalingResult>> {
    if k == 0 || k % 2 != 0 {
        return Err(Error::Config("moment order k must be a positive even integer".into()));
    }
    let depth = spec.depth;
    // cells[d_idx][layer][draw]
    let cells: Vec<Result<Vec<Vec<f64>>>> = d_list
        .par_iter()
        .enumerate()
        .map(|(di, &d)| {
            let sized = pinched_dims(spec, d, pinch);
            let mut per_layer = vec![Vec::with_capacity(n_mc); depth + 1];
            for draw in 0..n_mc {
                let mut rng = streams.stream("lab.orth", &[di as u64, draw as u64]);
                let teacher = sample_teacher(&sized, &mut rng);
                let mut xb = vec![0.0; sized.input_dim() * 2];
                fill_normal(&mut rng, &mut xb);
                let x0 = Array2::from_shape_vec((d, 2), xb).unwrap();
                let post = propagate(&x0, &teacher, &sized)?;
                for (l, layer) in post.layers.iter().enumerate() {
                    let mut dot = 0.0;
                    for i in 0..layer.nrows() {
                        dot += layer[(i, 0)] * layer[(i, 1)];
                    }
                    let overlap = dot / layer.nrows() as f64;
                    per_layer[l].push(overlap.abs().powi(k as i32));
                }
            }
            Ok(per_layer)
        })
        .collect();
    let mut per_d = Vec::with_capacity(d_list.len());
    for c in cells {
        per_d.push(c?);
    }

    let sizes_f: Vec<f64> = d_list.iter().map(|&d| d as f64).collect();
    let mut out = Vec::with_capacity(depth + 1);
    for l in 0..=depth {
        let samples: Vec<&Vec<f64>> = per_d.iter().map(|c| &c[l]).collect();
        let values: Vec<f64> = samples.iter().map(|v| mean(v)).collect();
        let std_errs: Vec<f64> = samples.iter().map(|v| mean_se(v)).collect();
        let lens: Vec<usize> = samples.iter().map(|v| v.len()).collect();
        let (slope, slope_stderr) = bootstrap_slope(
            &sizes_f,
            &lens,
            |i, ix| mean(&ix.iter().map(|&j| samples[i][j]).collect::<Vec<_>>()),
            streams,
            &format!("lab.orth.boot.{l}"),
        );
        out.push(ScalingResult {
            suite: "orthogonality".into(),
            statistic: format!("overlap_abs_moment_k{k}"),
            layer: l,
            sizes: d_list.iter().map(|&d| (2, d)).collect(),
            values,
            std_errs,
            fitted_slope: slope,
            slope_stderr,
            flags: pinch.map(|p| vec![format!("pinch={p}")]).unwrap_or_default(),
        });
    }
    Ok(out)
}

/// Which per-unit function the moment-deviation suite averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GStat {
    PhiSq,
    PhiPrime,
    XPhi,
}

impl std::str::FromStr for GStat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phi_sq" => Ok(GStat::PhiSq),
            "phi_prime" => Ok(GStat::PhiPrime),
            "x_phi" => Ok(GStat::XPhi),
            other => Err(Error::Config(format!("unknown g statistic: {other}"))),
        }
    }
}

/// k-th absolute central deviation of (1/d_l)·Σ_i g(preactivation_i) from
/// its limit E g(Z√σ_{l-1}), per hidden layer, plus the signed mean
/// deviation (the centering check).
pub fn postactivation_moment_dev(
    spec: &NetworkSpec,
    d_list: &[usize],
    g: GStat,
    k: u32,
    n_mc: usize,
    pinch: Option<usize>,
    streams: &Streams,
) -> Result<Vec<ScalingResult>> {
    if spec.depth == 0 {
        return Err(Error::Spec("moment deviations need depth ≥ 1".into()));
    }
    if k == 0 {
        return Err(Error::Config("moment order k must be ≥ 1".into()));
    }
    let (table, _) = coeff_sequence_auto(spec)?;
    // Limits: E φ²(Z√σ) = σ_l, E φ'(Z√σ) = ρ_l, E x·φ(x) = σ_{l-1}·ρ_l.
    let limit = |l: usize| -> f64 {
        match g {
            GStat::PhiSq => table.sigma[l],
            GStat::PhiPrime => table.rho_l[l - 1],
            GStat::XPhi => table.sigma[l - 1] * table.rho_l[l - 1],
        }
    };
    let apply = |act: &crate::model::Activation, x: f64| -> f64 {
        match g {
            GStat::PhiSq => act.value(x).powi(2),
            GStat::PhiPrime => act.d1(x),
            GStat::XPhi => x * act.value(x),
        }
    };

    let depth = spec.depth;
    let cells: Vec<Result<Vec<Vec<f64>>>> = d_list
        .par_iter()
        .enumerate()
        .map(|(di, &d)| {
            let sized = pinched_dims(spec, d, pinch);
            let mut per_layer = vec![Vec::with_capacity(n_mc); depth];
            for draw in 0..n_mc {
                let mut rng = streams.stream("lab.postdev", &[di as u64, draw as u64]);
                let teacher = sample_teacher(&sized, &mut rng);
                let mut xb = vec![0.0; sized.input_dim()];
                fill_normal(&mut rng, &mut xb);
                let x0 = Array2::from_shape_vec((d, 1), xb).unwrap();
                let (_, preacts) = propagate_with_preacts(&x0, &teacher, &sized)?;
                for l in 1..=depth {
                    let pre = &preacts[l - 1];
                    let mut acc = 0.0;
                    for i in 0..pre.nrows() {
                        acc += apply(&sized.activation, pre[(i, 0)]);
                    }
                    let dev = acc / pre.nrows() as f64 - limit(l);
                    per_layer[l - 1].push(dev);
                }
            }
            Ok(per_layer)
        })
        .collect();
    let mut per_d = Vec::with_capacity(d_list.len());
    for c in cells {
        per_d.push(c?);
    }

    let sizes_f: Vec<f64> = d_list.iter().map(|&d| d as f64).collect();
    let g_name = match g {
        GStat::PhiSq => "phi_sq",
        GStat::PhiPrime => "phi_prime",
        GStat::XPhi => "x_phi",
    };
    let mut out = Vec::new();
    for l in 1..=depth {
        let devs: Vec<&Vec<f64>> = per_d.iter().map(|c| &c[l - 1]).collect();
        let absk: Vec<Vec<f64>> = devs
            .iter()
            .map(|v| v.iter().map(|x| x.abs().powi(k as i32)).collect())
            .collect();
        let values: Vec<f64> = absk.iter().map(|v| mean(v)).collect();
        let std_errs: Vec<f64> = absk.iter().map(|v| mean_se(v)).collect();
        let lens: Vec<usize> = absk.iter().map(|v| v.len()).collect();
        let (slope, slope_stderr) = bootstrap_slope(
            &sizes_f,
            &lens,
            |i, ix| mean(&ix.iter().map(|&j| absk[i][j]).collect::<Vec<_>>()),
            streams,
            &format!("lab.postdev.boot.{l}"),
        );
        out.push(ScalingResult {
            suite: "postactivation".into(),
            statistic: format!("{g_name}_absdev_k{k}"),
            layer: l,
            sizes: d_list.iter().map(|&d| (1, d)).collect(),
            values,
            std_errs,
            fitted_slope: slope,
            slope_stderr,
            flags: pinch.map(|p| vec![format!("pinch={p}")]).unwrap_or_default(),
        });
        // Signed mean deviation: straddles zero when the centering constant
        // is right.
        out.push(ScalingResult {
            suite: "postactivation".into(),
            statistic: format!("{g_name}_dev_mean"),
            layer: l,
            sizes: d_list.iter().map(|&d| (1, d)).collect(),
            values: devs.iter().map(|v| mean(v)).collect(),
            std_errs: devs.iter().map(|v| mean_se(v)).collect(),
            fitted_slope: f64::NAN,
            slope_stderr: f64::NAN,
            flags: vec!["no-slope".into()],
        });
    }
    Ok(out)
}

/// Two-sample Kolmogorov-Smirnov comparison of the original channel
/// argument against the one-step-reduced argument, fresh randomness every
/// draw on both sides.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChannelKs {
    pub ks_stat: f64,
    pub p_value: f64,
    pub var_original: f64,
    pub var_reduced: f64,
    pub samples_original: Vec<f64>,
    pub samples_reduced: Vec<f64>,
}

pub fn channel_ks(
    spec: &NetworkSpec,
    d: usize,
    n_samples: usize,
    streams: &Streams,
    run_ix: u64,
) -> Result<ChannelKs> {
    if spec.depth == 0 {
        return Err(Error::Spec("channel comparison needs depth ≥ 1".into()));
    }
    let sized = square_dims(spec, d);
    let (table, _) = coeff_sequence_auto(&sized)?;
    let rho_top = table.rho_l[sized.depth - 1];
    let eps_top = table.eps_l[sized.depth - 1];
    let rho_red = sized.channel.rho * rho_top;
    let eps_red = sized.channel.rho.powi(2) * eps_top + sized.channel.eps;

    let draws: Vec<Result<(f64, f64)>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream("lab.ks", &[run_ix, i as u64]);
            // Original side: full depth, fresh teacher and input.
            let teacher = sample_teacher(&sized, &mut rng);
            let mut xb = vec![0.0; d];
            fill_normal(&mut rng, &mut xb);
            let x0 = Array2::from_shape_vec((d, 1), xb).unwrap();
            let post = propagate(&x0, &teacher, &sized)?;
            let top = post.top();
            let mut acc = 0.0;
            for i in 0..top.nrows() {
                acc += teacher.readout[i] * top[(i, 0)];
            }
            let mut s_orig = sized.channel.rho * acc / (top.nrows() as f64).sqrt();
            if sized.channel.eps > 0.0 {
                s_orig += sized.channel.eps.sqrt() * crate::rng::normal(&mut rng);
            }
            // Reduced side: depth − 1 propagation, fresh everything.
            let mut reduced_spec = sized.clone();
            reduced_spec.depth -= 1;
            reduced_spec.dims.pop();
            let teacher_red = sample_teacher(&reduced_spec, &mut rng);
            let mut xb2 = vec![0.0; d];
            fill_normal(&mut rng, &mut xb2);
            let x0r = Array2::from_shape_vec((d, 1), xb2).unwrap();
            let post_r = propagate(&x0r, &teacher_red, &reduced_spec)?;
            let top_r = post_r.top();
            let mut acc_r = 0.0;
            for i in 0..top_r.nrows() {
                acc_r += teacher_red.readout[i] * top_r[(i, 0)];
            }
            let mut s_red = rho_red * acc_r / (top_r.nrows() as f64).sqrt();
            if eps_red > 0.0 {
                s_red += eps_red.sqrt() * crate::rng::normal(&mut rng);
            }
            Ok((s_orig, s_red))
        })
        .collect();
    let mut samples_original = Vec::with_capacity(n_samples);
    let mut samples_reduced = Vec::with_capacity(n_samples);
    for r in draws {
        let (a, b) = r?;
        samples_original.push(a);
        samples_reduced.push(b);
    }
    let ks = ks_two_sample(&samples_original, &samples_reduced);
    Ok(ChannelKs {
        ks_stat: ks.statistic,
        p_value: ks.p_value,
        var_original: variance(&samples_original),
        var_reduced: variance(&samples_reduced),
        samples_original,
        samples_reduced,
    })
}

/// Rejection-rate calibration of `channel_ks` under an exact-equality null.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KsCalibration {
    pub n_runs: usize,
    pub rejects: usize,
    pub alpha: f64,
    /// Two-sided binomial p-value of the observed reject count.
    pub binomial_p: f64,
}

pub fn channel_ks_calibration(
    spec: &NetworkSpec,
    d: usize,
    n_samples: usize,
    n_runs: usize,
    alpha: f64,
    streams: &Streams,
) -> Result<KsCalibration> {
    let mut rejects = 0;
    for run in 0..n_runs {
        let ks = channel_ks(spec, d, n_samples, streams, run as u64)?;
        if ks.p_value < alpha {
            rejects += 1;
        }
    }
    Ok(KsCalibration {
        n_runs,
        rejects,
        alpha,
        binomial_p: crate::stats::binomial_two_sided_p(n_runs as u64, rejects as u64, alpha),
    })
}

/// Across-instance variance of (1/n)·log Z along a proportional ladder
/// (n = ratio·m, all dims = m), with the per-instance Monte Carlo noise
/// subtracted. The closed-form path has zero noise by construction.
pub fn free_entropy_variance(
    spec: &NetworkSpec,
    ratio: f64,
    m_list: &[usize],
    n_instances: usize,
    logz: &LogZConfig,
    interp_t: Option<f64>,
    streams: &Streams,
) -> Result<ScalingResult> {
    if interp_t.is_some() && spec.depth == 0 {
        return Err(Error::Spec("interpolated ladder needs depth ≥ 1".into()));
    }
    let cells: Vec<Result<Vec<(f64, f64)>>> = m_list
        .par_iter()
        .enumerate()
        .map(|(mi, &m)| {
            let sized = square_dims(spec, m);
            let n = ((ratio * m as f64).round() as usize).max(1);
            if let Some(t) = interp_t {
                // Variance of the interpolated-model free entropy at a
                // fixed t, one prior-MC estimate per instance.
                let config = crate::posterior_mc::InterpConfig {
                    n_instances,
                    n_prior_samples: logz.n_prior_samples,
                    zeta_quad_order: 24,
                };
                let path = crate::posterior_mc::interp_free_entropy(
                    &sized,
                    &[t],
                    n,
                    &config,
                    streams,
                    &format!("lab.fev.{mi}"),
                )?;
                return Ok(path
                    .per_instance
                    .iter()
                    .zip(&path.mc_std_errs)
                    .map(|(row, ses)| (row[0], ses[0]))
                    .collect());
            }
            let mut vals = Vec::with_capacity(n_instances);
            for inst in 0..n_instances {
                let (_, data) = sample_dataset(
                    &sized,
                    n,
                    streams,
                    &format!("lab.fev.{mi}"),
                    inst as u64,
                )?;
                let z = estimate_log_z(
                    &data,
                    &sized,
                    logz,
                    streams,
                    &format!("lab.fev.{mi}"),
                    inst as u64,
                )?;
                vals.push((z.mean / n as f64, z.std_err / n as f64));
            }
            Ok(vals)
        })
        .collect();
    let mut per_m = Vec::with_capacity(m_list.len());
    for c in cells {
        per_m.push(c?);
    }

    let mut values = Vec::with_capacity(m_list.len());
    let mut std_errs = Vec::with_capacity(m_list.len());
    let mut flags = Vec::new();
    for vals in &per_m {
        let estimates: Vec<f64> = vals.iter().map(|(v, _)| *v).collect();
        let noise: Vec<f64> = vals.iter().map(|(_, s)| s * s).collect();
        let var_total = variance(&estimates);
        let mc_noise = mean(&noise);
        let mut corrected = var_total - mc_noise;
        // Rough standard error of a sample variance under near-normality:
        // Var(s²) ≈ 2σ⁴/(n−1).
        let var_se = var_total * (2.0 / (estimates.len() as f64 - 1.0)).sqrt();
        if var_total > 0.0 && mc_noise / var_total > 0.5 && !flags.contains(&"mc-noise".to_string())
        {
            flags.push("mc-noise".into());
        }
        if corrected <= 0.0 {
            corrected = var_se;
            if !flags.contains(&"clamped".to_string()) {
                flags.push("clamped".into());
            }
        }
        values.push(corrected);
        std_errs.push(var_se);
    }
    let sizes_f: Vec<f64> = m_list.iter().map(|&m| m as f64).collect();
    let lens: Vec<usize> = per_m.iter().map(|v| v.len()).collect();
    let (slope, slope_stderr) = bootstrap_slope(
        &sizes_f,
        &lens,
        |i, ix| {
            let est: Vec<f64> = ix.iter().map(|&j| per_m[i][j].0).collect();
            let noise: Vec<f64> = ix.iter().map(|&j| per_m[i][j].1 * per_m[i][j].1).collect();
            let v = variance(&est) - mean(&noise);
            v.max(f64::MIN_POSITIVE)
        },
        streams,
        "lab.fev.boot",
    );
    Ok(ScalingResult {
        suite: "free-entropy-variance".into(),
        statistic: "var_log_z_per_sample".into(),
        layer: 0,
        sizes: m_list
            .iter()
            .map(|&m| (((ratio * m as f64).round() as usize).max(1), m))
            .collect(),
        values,
        std_errs,
        fitted_slope: slope,
        slope_stderr,
        flags,
    })
}

/// Finite-size Monte Carlo estimates of the channel constant for the
/// original model and its one-step reduction, the gap between them per
/// size, and the common quadrature limit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PsiGapPoint {
    pub d: usize,
    pub psi_original: f64,
    pub se_original: f64,
    pub psi_reduced: f64,
    pub se_reduced: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PsiGapResult {
    pub points: Vec<PsiGapPoint>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub limit: f64,
}

pub fn psi_gap(
    spec: &NetworkSpec,
    d_list: &[usize],
    n_mc: usize,
    streams: &Streams,
) -> Result<PsiGapResult> {
    if spec.depth == 0 {
        return Err(Error::Spec("psi gap needs depth ≥ 1".into()));
    }
    if !(spec.channel.readout.delta > 0.0) {
        return Err(Error::Spec("delta must be > 0".into()));
    }
    let rule = gauss_hermite(60)?;
    let readout = &spec.channel.readout;

    let cells: Vec<Result<(Vec<f64>, Vec<f64>)>> = d_list
        .par_iter()
        .enumerate()
        .map(|(di, &d)| {
            let sized = square_dims(spec, d);
            let (table, _) = coeff_sequence_auto(&sized)?;
            let depth = sized.depth;
            let rho_top = table.rho_l[depth - 1];
            let eps_top = table.eps_l[depth - 1];
            let eta_orig = sized.channel.rho;
            let gamma_orig = sized.channel.eps;
            let eta_red = eta_orig * rho_top;
            let gamma_red = eta_orig * eta_orig * eps_top + gamma_orig;
            let mut h_orig = Vec::with_capacity(n_mc);
            let mut h_red = Vec::with_capacity(n_mc);
            for draw in 0..n_mc {
                let mut rng = streams.stream("lab.psigap", &[di as u64, draw as u64]);
                let teacher = sample_teacher(&sized, &mut rng);
                let mut xb = vec![0.0; d];
                fill_normal(&mut rng, &mut xb);
                let x0 = Array2::from_shape_vec((d, 1), xb).unwrap();
                let post = propagate(&x0, &teacher, &sized)?;
                let norm_at = |l: usize| -> f64 {
                    let layer = &post.layers[l];
                    let mut acc = 0.0;
                    for i in 0..layer.nrows() {
                        acc += layer[(i, 0)] * layer[(i, 0)];
                    }
                    acc / layer.nrows() as f64
                };
                let v_orig = eta_orig * eta_orig * norm_at(depth) + gamma_orig;
                let v_red = eta_red * eta_red * norm_at(depth - 1) + gamma_red;
                h_orig.push(channel_entropy_at_scale(v_orig.sqrt(), readout, &rule));
                h_red.push(channel_entropy_at_scale(v_red.sqrt(), readout, &rule));
            }
            Ok((h_orig, h_red))
        })
        .collect();
    let mut per_d = Vec::with_capacity(d_list.len());
    for c in cells {
        per_d.push(c?);
    }

    let mut points = Vec::with_capacity(d_list.len());
    for (di, &d) in d_list.iter().enumerate() {
        let (h_orig, h_red) = &per_d[di];
        points.push(PsiGapPoint {
            d,
            psi_original: mean(h_orig),
            se_original: mean_se(h_orig),
            psi_reduced: mean(h_red),
            se_reduced: mean_se(h_red),
            gap: (mean(h_orig) - mean(h_red)).abs(),
        });
    }
    let sizes_f: Vec<f64> = d_list.iter().map(|&d| d as f64).collect();
    let lens: Vec<usize> = per_d.iter().map(|(a, _)| a.len()).collect();
    let (slope, slope_stderr) = bootstrap_slope(
        &sizes_f,
        &lens,
        |i, ix| {
            let (h_orig, h_red) = &per_d[i];
            let a: Vec<f64> = ix.iter().map(|&j| h_orig[j]).collect();
            let b: Vec<f64> = ix.iter().map(|&j| h_red[j]).collect();
            (mean(&a) - mean(&b)).abs()
        },
        streams,
        "lab.psigap.boot",
    );
    // Both sides converge to the same infinite-width constant.
    let sized = square_dims(spec, *d_list.last().unwrap());
    let (table, _) = coeff_sequence_auto(&sized)?;
    let limit = psi_constant(
        spec.channel.rho,
        spec.channel.eps,
        table.sigma[spec.depth],
        readout,
        &rule,
    )?;
    Ok(PsiGapResult {
        points,
        slope,
        slope_stderr,
        limit,
    })
}

/// Side-by-side generalization errors for the deep model and its reduced
/// GLM on matched, independently generated datasets.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GepEquivalence {
    pub err_deep: f64,
    pub err_glm: f64,
    pub se_deep: f64,
    pub se_glm: f64,
    pub gap: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub n_used: usize,
    pub n_flagged: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GepConfig {
    pub n_outer: usize,
    pub n_test: usize,
    pub mcmc: McmcConfig,
}

impl Default for GepConfig {
    fn default() -> Self {
        GepConfig {
            n_outer: 20,
            n_test: 32,
            mcmc: McmcConfig::default(),
        }
    }
}

pub fn gen_error_equivalence(
    spec: &NetworkSpec,
    d: usize,
    n: usize,
    config: &GepConfig,
    streams: &Streams,
) -> Result<GepEquivalence> {
    let sized = square_dims(spec, d);
    let (table, _) = coeff_sequence_auto(&sized)?;
    let xi_rule = if sized.channel.eps > 0.0 {
        Some(gauss_hermite(40)?)
    } else {
        None
    };

    let results: Vec<Result<Option<(f64, f64)>>> = (0..config.n_outer)
        .into_par_iter()
        .map(|inst| {
            let inst = inst as u64;
            let pair = paired_experiment(&sized, &table, n, streams, "lab.gep", inst)?;
            let glm_xi_rule = if pair.glm_spec.channel.eps > 0.0 {
                Some(gauss_hermite(40)?)
            } else {
                None
            };
            let (deep_val, _) = crate::posterior_mc::gen_error_instance(
                &pair.deep.0,
                &pair.deep.1,
                &sized,
                &config.mcmc,
                config.n_test,
                xi_rule.as_ref(),
                streams,
                "lab.gep.deep",
                inst,
            )?;
            let (glm_val, _) = crate::posterior_mc::gen_error_instance(
                &pair.glm.0,
                &pair.glm.1,
                &pair.glm_spec,
                &config.mcmc,
                config.n_test,
                glm_xi_rule.as_ref(),
                streams,
                "lab.gep.glm",
                inst,
            )?;
            match (deep_val, glm_val) {
                (Some(a), Some(b)) => Ok(Some((a, b))),
                _ => Ok(None),
            }
        })
        .collect();

    let mut deep_vals = Vec::new();
    let mut glm_vals = Vec::new();
    let mut n_flagged = 0;
    for r in results {
        match r? {
            Some((a, b)) => {
                deep_vals.push(a);
                glm_vals.push(b);
            }
            None => n_flagged += 1,
        }
    }
    if deep_vals.is_empty() {
        return Err(Error::Convergence("every paired instance was flagged".into()));
    }
    let err_deep = mean(&deep_vals);
    let err_glm = mean(&glm_vals);
    let se_deep = jackknife_se(&deep_vals);
    let se_glm = jackknife_se(&glm_vals);
    let gap = (err_deep - err_glm).abs();
    let tolerance = (3.0 * (se_deep.powi(2) + se_glm.powi(2)).sqrt()).max(5.0 / (d as f64).sqrt());
    Ok(GepEquivalence {
        err_deep,
        err_glm,
        se_deep,
        se_glm,
        gap,
        tolerance,
        pass: gap < tolerance,
        n_used: deep_vals.len(),
        n_flagged,
    })
}

/// ScaledLinear null model used by the KS calibration runs.
pub fn scaled_linear_null(delta: f64) -> NetworkSpec {
    crate::model::square_spec(
        1,
        16,
        crate::model::Activation::ScaledLinear(1.0),
        1.0,
        0.0,
        ReadoutKind::Linear,
        delta,
    )
}
