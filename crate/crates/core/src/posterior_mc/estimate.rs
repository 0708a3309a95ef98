//! Bayes prediction, generalization error, Nishimori diagnostics, and the
//! interpolating free-entropy path.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logz::LogZConfig;
use super::mcmc::{mcmc_run, McmcConfig, PosteriorSample};
use crate::coefficients::{coeff_sequence_auto, gauss_hermite, QuadratureRule};
use crate::forward::{
    channel_argument, interp_channel_argument, propagate, sample_dataset, sample_labels,
    ChannelArgument,
};
use crate::model::{sample_teacher, NetworkSpec, Weights};
use crate::rng::{fill_normal, Streams};
use crate::stats::{jackknife_se, log_mean_exp, log_sum_exp, mean, mean_se};
use crate::{Error, Result};

/// Posterior-mean label prediction for one input: the average over posterior
/// samples of E_{A,ξ} f(s_new; A). The centered Gaussian label noise drops
/// out of the y-integral; fresh channel noise ξ is marginalized by
/// quadrature when ε > 0.
pub fn predict(
    x_new: &Array1<f64>,
    samples: &[&PosteriorSample],
    spec: &NetworkSpec,
    xi_rule: Option<&QuadratureRule>,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("predict needs posterior samples".into()));
    }
    if spec.channel.eps > 0.0 && xi_rule.is_none() {
        return Err(Error::Config("eps > 0 requires a xi quadrature rule".into()));
    }
    let readout = &spec.channel.readout;
    let x_col = x_new.clone().insert_axis(ndarray::Axis(1));
    let mut acc = 0.0;
    for s in samples {
        let post = propagate(&x_col, &s.weights, spec)?;
        let arg = channel_argument(
            &post,
            &s.weights.readout,
            &crate::model::ChannelParams {
                rho: spec.channel.rho,
                eps: 0.0,
                readout: readout.clone(),
            },
            None,
        )?;
        let base = arg.s[0];
        let contribution = match xi_rule {
            Some(rule) if spec.channel.eps > 0.0 => {
                let se = spec.channel.eps.sqrt();
                rule.expect(|x| readout.mean_f(base + se * x))
            }
            _ => readout.mean_f(base),
        };
        acc += contribution;
    }
    Ok(acc / samples.len() as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GenErrorConfig {
    pub n_outer: usize,
    pub n_test: usize,
    pub mcmc: McmcConfig,
}

impl Default for GenErrorConfig {
    fn default() -> Self {
        GenErrorConfig {
            n_outer: 20,
            n_test: 32,
            mcmc: McmcConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenErrorEstimate {
    pub err: f64,
    pub std_err: f64,
    pub per_instance: Vec<f64>,
    pub n_flagged: usize,
    pub rhats: Vec<f64>,
}

/// One outer replication: fit the posterior on the given (teacher, dataset)
/// pair and score fresh test points. Returns `(None, rhat)` when the chains
/// fail the R-hat gate.
pub(crate) fn gen_error_instance(
    teacher: &Weights,
    data: &crate::model::Dataset,
    spec: &NetworkSpec,
    mcmc: &McmcConfig,
    n_test: usize,
    xi_rule: Option<&QuadratureRule>,
    streams: &Streams,
    experiment: &str,
    inst: u64,
) -> Result<(Option<f64>, f64)> {
    let run = mcmc_run(data, spec, mcmc, Some(teacher), streams, experiment, inst)?;
    let rhat = run
        .diagnostics
        .rhat_overlap
        .unwrap_or(run.diagnostics.rhat_energy);
    if run.diagnostics.flagged {
        return Ok((None, rhat));
    }
    let samples: Vec<&PosteriorSample> = run.all_samples().collect();
    let mut rng = streams.stream(&format!("{experiment}.test"), &[inst]);
    let mut sq = Vec::with_capacity(n_test);
    for _ in 0..n_test {
        let mut xb = vec![0.0; spec.input_dim()];
        fill_normal(&mut rng, &mut xb);
        let x_new = Array1::from_vec(xb);
        // True label through the teacher channel.
        let x_col = x_new.clone().insert_axis(ndarray::Axis(1));
        let post = propagate(&x_col, teacher, spec)?;
        let xi_new = if spec.channel.eps > 0.0 {
            Some(Array1::from_vec(vec![crate::rng::normal(&mut rng)]))
        } else {
            None
        };
        let s_true = channel_argument(&post, &teacher.readout, &spec.channel, xi_new.as_ref())?;
        let y_true = sample_labels(&s_true, &spec.channel.readout, &mut rng)?.y[0];
        let y_hat = predict(&x_new, &samples, spec, xi_rule)?;
        sq.push((y_true - y_hat).powi(2));
    }
    Ok((Some(mean(&sq)), rhat))
}

/// Minimum-mean-squared-error generalization error E (Y_new − Ŷ_new)² by
/// outer Monte Carlo over (teacher, dataset, test point) triples.
/// Instances whose chains fail the R-hat gate are excluded and counted.
pub fn gen_error(
    spec: &NetworkSpec,
    n: usize,
    config: &GenErrorConfig,
    streams: &Streams,
    experiment: &str,
) -> Result<GenErrorEstimate> {
    let xi_rule = if spec.channel.eps > 0.0 {
        Some(gauss_hermite(40)?)
    } else {
        None
    };
    let results: Vec<Result<(Option<f64>, f64)>> = (0..config.n_outer)
        .into_par_iter()
        .map(|inst| {
            let inst = inst as u64;
            let (teacher, data) =
                sample_dataset(spec, n, streams, &format!("{experiment}.gen"), inst)?;
            gen_error_instance(
                &teacher,
                &data,
                spec,
                &config.mcmc,
                config.n_test,
                xi_rule.as_ref(),
                streams,
                &format!("{experiment}.gen"),
                inst,
            )
        })
        .collect();

    let mut per_instance = Vec::new();
    let mut rhats = Vec::new();
    let mut n_flagged = 0;
    for r in results {
        let (val, rhat) = r?;
        rhats.push(rhat);
        match val {
            Some(v) => per_instance.push(v),
            None => n_flagged += 1,
        }
    }
    if per_instance.is_empty() {
        return Err(Error::Convergence(
            "every generalization-error instance was flagged".into(),
        ));
    }
    Ok(GenErrorEstimate {
        err: mean(&per_instance),
        std_err: jackknife_se(&per_instance),
        per_instance,
        n_flagged,
        rhats,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct NishimoriConfig {
    pub n_instances: usize,
    pub mcmc: McmcConfig,
}

impl Default for NishimoriConfig {
    fn default() -> Self {
        NishimoriConfig {
            n_instances: 16,
            mcmc: McmcConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NishimoriStat {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_se: f64,
    pub rhs_se: f64,
    /// Standard error of the per-instance lhs−rhs difference (correlation-aware).
    pub diff_se: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NishimoriReport {
    pub stats: Vec<NishimoriStat>,
    pub pass: bool,
    pub worst_rhat: f64,
    pub n_flagged: usize,
}

fn readout_overlap(a: &Weights, b: &Weights) -> f64 {
    let d = a.readout.len() as f64;
    a.readout
        .iter()
        .zip(b.readout.iter())
        .map(|(x, y)| x * y)
        .sum::<f64>()
        / d
}

fn hidden_overlap(a: &Weights, b: &Weights, layer: usize) -> f64 {
    let wa = &a.hidden[layer];
    let wb = &b.hidden[layer];
    let norm = (wa.nrows() * wa.ncols()) as f64;
    wa.iter().zip(wb.iter()).map(|(x, y)| x * y).sum::<f64>() / norm
}

/// Bayes-optimality symmetry check: teacher-replica overlaps must match
/// replica-replica overlaps in expectation, statistic by statistic.
pub fn nishimori_check(
    spec: &NetworkSpec,
    n: usize,
    config: &NishimoriConfig,
    streams: &Streams,
    experiment: &str,
) -> Result<NishimoriReport> {
    if config.mcmc.n_replicas < 2 {
        return Err(Error::Config("nishimori needs ≥ 2 replicas".into()));
    }
    let n_stats = 1 + spec.depth;
    let per_instance: Vec<Result<(Vec<f64>, Vec<f64>, f64, bool)>> = (0..config.n_instances)
        .into_par_iter()
        .map(|inst| {
            let inst = inst as u64;
            let (teacher, data) =
                sample_dataset(spec, n, streams, &format!("{experiment}.nishi"), inst)?;
            let run = mcmc_run(
                &data,
                spec,
                &config.mcmc,
                Some(&teacher),
                streams,
                &format!("{experiment}.nishi"),
                inst,
            )?;
            let rhat = run
                .diagnostics
                .rhat_overlap
                .unwrap_or(run.diagnostics.rhat_energy);
            let mut lhs = vec![0.0; n_stats];
            let mut rhs = vec![0.0; n_stats];
            // Teacher-replica expectations over every retained sample.
            let mut count = 0usize;
            for s in run.all_samples() {
                lhs[0] += readout_overlap(&teacher, &s.weights);
                for l in 0..spec.depth {
                    lhs[1 + l] += hidden_overlap(&teacher, &s.weights, l);
                }
                count += 1;
            }
            for v in lhs.iter_mut() {
                *v /= count as f64;
            }
            // Replica-replica expectations over iteration-paired draws from
            // independent chains (pairs (0,1), (2,3), ...).
            let mut pair_count = 0usize;
            let reps = &run.replicas;
            for pair in reps.chunks(2) {
                if pair.len() < 2 {
                    break;
                }
                let m = pair[0].samples.len().min(pair[1].samples.len());
                for i in 0..m {
                    let s1 = &pair[0].samples[i];
                    let s2 = &pair[1].samples[i];
                    rhs[0] += readout_overlap(&s1.weights, &s2.weights);
                    for l in 0..spec.depth {
                        rhs[1 + l] += hidden_overlap(&s1.weights, &s2.weights, l);
                    }
                    pair_count += 1;
                }
            }
            for v in rhs.iter_mut() {
                *v /= pair_count.max(1) as f64;
            }
            Ok((lhs, rhs, rhat, run.diagnostics.flagged))
        })
        .collect();

    let mut lhs_rows: Vec<Vec<f64>> = vec![Vec::new(); n_stats];
    let mut rhs_rows: Vec<Vec<f64>> = vec![Vec::new(); n_stats];
    let mut worst_rhat: f64 = 1.0;
    let mut n_flagged = 0;
    for r in per_instance {
        let (lhs, rhs, rhat, flagged) = r?;
        if flagged {
            n_flagged += 1;
            worst_rhat = worst_rhat.max(rhat);
            continue;
        }
        worst_rhat = worst_rhat.max(rhat);
        for k in 0..n_stats {
            lhs_rows[k].push(lhs[k]);
            rhs_rows[k].push(rhs[k]);
        }
    }
    if lhs_rows[0].is_empty() {
        return Err(Error::Convergence("every nishimori instance was flagged".into()));
    }

    let mut stats = Vec::with_capacity(n_stats);
    for k in 0..n_stats {
        let name = if k == 0 {
            "readout_overlap".to_string()
        } else {
            format!("hidden_overlap_{k}")
        };
        let diffs: Vec<f64> = lhs_rows[k]
            .iter()
            .zip(&rhs_rows[k])
            .map(|(a, b)| a - b)
            .collect();
        let lhs = mean(&lhs_rows[k]);
        let rhs = mean(&rhs_rows[k]);
        let diff_se = mean_se(&diffs);
        let pass = (lhs - rhs).abs() < 3.0 * diff_se.max(1e-12);
        stats.push(NishimoriStat {
            name,
            lhs,
            rhs,
            lhs_se: mean_se(&lhs_rows[k]),
            rhs_se: mean_se(&rhs_rows[k]),
            diff_se,
            pass,
        });
    }
    let pass = stats.iter().all(|s| s.pass);
    Ok(NishimoriReport {
        stats,
        pass,
        worst_rhat,
        n_flagged,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct InterpConfig {
    pub n_instances: usize,
    pub n_prior_samples: usize,
    pub zeta_quad_order: usize,
}

impl Default for InterpConfig {
    fn default() -> Self {
        InterpConfig {
            n_instances: 8,
            n_prior_samples: 2000,
            zeta_quad_order: 32,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InterpPath {
    pub t_grid: Vec<f64>,
    pub estimates: Vec<f64>,
    pub std_errs: Vec<f64>,
    /// Per-instance estimates, instances × t-grid, for paired comparisons.
    pub per_instance: Vec<Vec<f64>>,
    /// Per-instance prior-MC standard errors, instances × t-grid.
    pub mc_std_errs: Vec<Vec<f64>>,
}

impl InterpPath {
    /// Standard error of the paired difference between two grid points.
    pub fn pair_se(&self, i: usize, j: usize) -> f64 {
        let diffs: Vec<f64> = self
            .per_instance
            .iter()
            .map(|row| row[i] - row[j])
            .collect();
        mean_se(&diffs)
    }
}

/// Free entropy of the interpolating model at each t in the grid. Datasets
/// are generated through the interpolated channel; the partition function
/// marginalizes the student-side mixing noise by quadrature and the
/// auxiliary readout vector by prior sampling. Common random numbers are
/// shared across t within an instance so the path differences are tightly
/// resolved.
pub fn interp_free_entropy(
    spec: &NetworkSpec,
    t_grid: &[f64],
    n: usize,
    config: &InterpConfig,
    streams: &Streams,
    experiment: &str,
) -> Result<InterpPath> {
    if spec.depth < 1 {
        return Err(Error::Spec("interpolation needs depth ≥ 1".into()));
    }
    if (spec.channel.rho - 1.0).abs() > 1e-12 || spec.channel.eps != 0.0 {
        return Err(Error::Spec("interpolation is defined at rho = 1, eps = 0".into()));
    }
    for t in t_grid {
        if !(0.0..=1.0).contains(t) {
            return Err(Error::Config(format!("t = {t} outside [0, 1]")));
        }
    }
    let (table, _) = coeff_sequence_auto(spec)?;
    let rho_top = table.rho_l[spec.depth - 1];
    let eps_top = table.eps_l[spec.depth - 1];
    let zeta_rule = gauss_hermite(config.zeta_quad_order)?;
    let readout = &spec.channel.readout;
    let d_top = spec.top_dim();
    let d_below = spec.dims[spec.depth - 1];

    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..config.n_instances)
        .into_par_iter()
        .map(|inst| {
            let inst = inst as u64;
            let tag = |suffix: &str| format!("{experiment}.interp.{suffix}");
            let teacher =
                sample_teacher(spec, &mut streams.stream(&tag("teacher"), &[inst]));
            let mut xb = vec![0.0; spec.input_dim() * n];
            fill_normal(&mut streams.stream(&tag("inputs"), &[inst]), &mut xb);
            let x0 = Array2::from_shape_vec((spec.input_dim(), n), xb).unwrap();
            let mut vb = vec![0.0; d_below];
            fill_normal(&mut streams.stream(&tag("vstar"), &[inst]), &mut vb);
            let v_star = Array1::from_vec(vb);
            let mut zb = vec![0.0; n];
            fill_normal(&mut streams.stream(&tag("zeta"), &[inst]), &mut zb);
            let zeta_star = Array1::from_vec(zb);
            let post_star = propagate(&x0, &teacher, spec)?;

            // Labels share (A, Z) across t: each grid point keeps the exact
            // marginal law while the path differences stay comparable.
            let mut label_rng = streams.stream(&tag("labels"), &[inst]);
            let mut label_sets = Vec::with_capacity(t_grid.len());
            {
                let s0 = interp_channel_argument(
                    t_grid[0],
                    &post_star,
                    &teacher.readout,
                    &v_star,
                    &zeta_star,
                    (rho_top, eps_top),
                )?;
                let first = sample_labels(
                    &ChannelArgument { s: s0.s_t },
                    readout,
                    &mut label_rng,
                )?;
                label_sets.push(first.y.clone());
                for &t in &t_grid[1..] {
                    let st = interp_channel_argument(
                        t,
                        &post_star,
                        &teacher.readout,
                        &v_star,
                        &zeta_star,
                        (rho_top, eps_top),
                    )?;
                    let mut y = Array1::zeros(n);
                    for mu in 0..n {
                        y[mu] = readout.f(st.s_t[mu], first.a_draw[mu])
                            + readout.delta.sqrt() * first.z[mu];
                    }
                    label_sets.push(y);
                }
            }

            // Prior Monte Carlo over (student weights, student v), shared
            // across t.
            let mut prior_rng = streams.stream(&tag("prior"), &[inst]);
            let m = config.n_prior_samples;
            let mut loglik: Vec<Vec<f64>> = vec![Vec::with_capacity(m); t_grid.len()];
            for _ in 0..m {
                let student = sample_teacher(spec, &mut prior_rng);
                let mut svb = vec![0.0; d_below];
                fill_normal(&mut prior_rng, &mut svb);
                let s_v = Array1::from_vec(svb);
                let post = propagate(&x0, &student, spec)?;
                let top = post.top();
                let below = &post.layers[spec.depth - 1];
                let mut top_arg = vec![0.0; n];
                let mut mid_arg = vec![0.0; n];
                let st = (d_top as f64).sqrt();
                let sb = (d_below as f64).sqrt();
                for mu in 0..n {
                    let mut acc = 0.0;
                    for i in 0..d_top {
                        acc += student.readout[i] * top[(i, mu)];
                    }
                    top_arg[mu] = acc / st;
                    let mut accm = 0.0;
                    for i in 0..d_below {
                        accm += s_v[i] * below[(i, mu)];
                    }
                    mid_arg[mu] = accm / sb;
                }
                for (ti, &t) in t_grid.iter().enumerate() {
                    let w_top = (1.0 - t).sqrt();
                    let w_mid = t.sqrt() * rho_top;
                    let w_noise = (t * eps_top).sqrt();
                    let y = &label_sets[ti];
                    let mut acc = 0.0;
                    for mu in 0..n {
                        let base = w_top * top_arg[mu] + w_mid * mid_arg[mu];
                        if w_noise == 0.0 {
                            acc += readout.log_density(y[mu], base);
                        } else {
                            let terms: Vec<f64> = zeta_rule
                                .nodes
                                .iter()
                                .zip(&zeta_rule.weights)
                                .map(|(x, w)| {
                                    w.ln() + readout.log_density(y[mu], base + w_noise * x)
                                })
                                .collect();
                            acc += log_sum_exp(&terms);
                        }
                    }
                    loglik[ti].push(acc);
                }
            }
            let mut row = Vec::with_capacity(t_grid.len());
            let mut ses = Vec::with_capacity(t_grid.len());
            for ti in 0..t_grid.len() {
                let (est, se) = log_mean_exp(&loglik[ti]);
                row.push(est / n as f64);
                ses.push(se / n as f64);
            }
            Ok((row, ses))
        })
        .collect();

    let mut per_instance = Vec::with_capacity(config.n_instances);
    let mut mc_std_errs = Vec::with_capacity(config.n_instances);
    for r in rows {
        let (row, ses) = r?;
        per_instance.push(row);
        mc_std_errs.push(ses);
    }
    let mut estimates = Vec::with_capacity(t_grid.len());
    let mut std_errs = Vec::with_capacity(t_grid.len());
    for ti in 0..t_grid.len() {
        let col: Vec<f64> = per_instance.iter().map(|row| row[ti]).collect();
        estimates.push(mean(&col));
        std_errs.push(mean_se(&col));
    }
    Ok(InterpPath {
        t_grid: t_grid.to_vec(),
        estimates,
        std_errs,
        per_instance,
        mc_std_errs,
    })
}

/// Free-entropy estimate of the physical (t = 0 equivalent) model on a
/// freshly generated dataset, used by endpoint-consistency checks.
pub fn free_entropy_once(
    spec: &NetworkSpec,
    n: usize,
    logz: &LogZConfig,
    streams: &Streams,
    experiment: &str,
    instance: u64,
) -> Result<(f64, f64)> {
    let (_, data) = sample_dataset(spec, n, streams, experiment, instance)?;
    let z = super::logz::estimate_log_z(&data, spec, logz, streams, experiment, instance)?;
    Ok((z.mean / n.max(1) as f64, z.std_err / n.max(1) as f64))
}
