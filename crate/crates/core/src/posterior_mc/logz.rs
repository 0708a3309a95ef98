//! Partition-function and mutual-information estimation.
//!
//! The partition function is the normalization of the Bayes posterior,
//! Z = ∫ Π_μ E_ξ P_out(Y_μ | s_μ(θ, ξ)) dP(θ). At tiny n it is estimated by
//! naive prior Monte Carlo with a log-mean-exp; for the linear GLM the
//! Gaussian marginalization is available in closed form and serves as an
//! oracle for the sampler path.

use ndarray::Array1;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::coefficients::{gauss_hermite, QuadratureRule};
use crate::forward::{channel_argument, propagate, sample_dataset};
use crate::model::{sample_teacher, Dataset, NetworkSpec, ReadoutKind};
use crate::rng::Streams;
use crate::stats::{cholesky, gaussian_logpdf_chol, log_mean_exp, log_sum_exp, mean, mean_se};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogZMethod {
    PriorMC,
    ClosedFormLinearGLM,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogZEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_samples: usize,
    pub method: LogZMethod,
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LogZConfig {
    pub n_prior_samples: usize,
    /// Quadrature order for the ξ marginalization (ε > 0 only).
    pub xi_quad_order: usize,
}

impl Default for LogZConfig {
    fn default() -> Self {
        LogZConfig {
            n_prior_samples: 20_000,
            xi_quad_order: 40,
        }
    }
}

/// The intended prior-MC regime; beyond it the estimate is still returned
/// but carries a flag, because the importance weights degenerate.
const REGIME_MAX_N: usize = 16;
const REGIME_MAX_WEIGHTS: usize = 1000;

fn closed_form_applicable(spec: &NetworkSpec) -> bool {
    spec.depth == 0
        && matches!(spec.channel.readout.kind, ReadoutKind::Linear)
        && spec.channel.readout.a_support.len() == 1
        && spec.channel.readout.a_support[0].value == 1.0
}

/// log Z for the linear GLM: Y | X ~ N(0, (Δ+γ)·I + η²·XᵀX/d₀).
fn closed_form_log_z(dataset: &Dataset, spec: &NetworkSpec) -> Result<f64> {
    let n = dataset.n();
    let d0 = spec.input_dim() as f64;
    let eta = spec.channel.rho;
    let gamma = spec.channel.eps;
    let delta = spec.channel.readout.delta;
    let mut cov = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut dot = 0.0;
            for k in 0..spec.input_dim() {
                dot += dataset.inputs[(k, i)] * dataset.inputs[(k, j)];
            }
            let mut c = eta * eta * dot / d0;
            if i == j {
                c += delta + gamma;
            }
            cov[i * n + j] = c;
            cov[j * n + i] = c;
        }
    }
    cholesky(&mut cov, n)?;
    let y: Vec<f64> = dataset.labels.iter().cloned().collect();
    Ok(gaussian_logpdf_chol(&cov, n, &y))
}

/// Per-sample log E_ξ P_out(Y_μ | s_μ + √ε ξ), with Gauss-Hermite over ξ.
fn log_marginal_likelihood(
    y: f64,
    s_base: f64,
    spec: &NetworkSpec,
    xi_rule: Option<&QuadratureRule>,
) -> f64 {
    let readout = &spec.channel.readout;
    match xi_rule {
        None => readout.log_density(y, s_base),
        Some(rule) => {
            let se = spec.channel.eps.sqrt();
            let terms: Vec<f64> = rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(x, w)| w.ln() + readout.log_density(y, s_base + se * x))
                .collect();
            log_sum_exp(&terms)
        }
    }
}

/// Estimate log Z. Uses the closed form automatically for the linear GLM;
/// otherwise prior Monte Carlo with a delta-method standard error on the log.
pub fn estimate_log_z(
    dataset: &Dataset,
    spec: &NetworkSpec,
    config: &LogZConfig,
    streams: &Streams,
    experiment: &str,
    instance: u64,
) -> Result<LogZEstimate> {
    let n = dataset.n();
    if n == 0 {
        return Ok(LogZEstimate {
            mean: 0.0,
            std_err: 0.0,
            n_samples: 0,
            method: LogZMethod::PriorMC,
            flags: Vec::new(),
        });
    }
    if closed_form_applicable(spec) {
        return Ok(LogZEstimate {
            mean: closed_form_log_z(dataset, spec)?,
            std_err: 0.0,
            n_samples: 0,
            method: LogZMethod::ClosedFormLinearGLM,
            flags: Vec::new(),
        });
    }

    let mut flags = Vec::new();
    if n > REGIME_MAX_N || spec.weight_count() > REGIME_MAX_WEIGHTS {
        flags.push("regime".to_string());
    }
    let xi_rule = if spec.channel.eps > 0.0 {
        Some(gauss_hermite(config.xi_quad_order)?)
    } else {
        None
    };
    let mut rng = streams.stream(&format!("{experiment}.logz-prior"), &[instance]);
    let m = config.n_prior_samples;
    let mut loglik = Vec::with_capacity(m);
    for _ in 0..m {
        let w = sample_teacher(spec, &mut rng);
        let post = propagate(&dataset.inputs, &w, spec)?;
        // ξ is marginalized by quadrature, so the base argument has no noise term.
        let chan = crate::model::ChannelParams {
            rho: spec.channel.rho,
            eps: 0.0,
            readout: spec.channel.readout.clone(),
        };
        let s = channel_argument(&post, &w.readout, &chan, None)?;
        let mut acc = 0.0;
        for mu in 0..n {
            acc += log_marginal_likelihood(dataset.labels[mu], s.s[mu], spec, xi_rule.as_ref());
        }
        loglik.push(acc);
    }
    let (est, se) = log_mean_exp(&loglik);
    if !est.is_finite() {
        return Err(Error::Numeric("prior-MC log Z is not finite".into()));
    }
    Ok(LogZEstimate {
        mean: est,
        std_err: se,
        n_samples: m,
        method: LogZMethod::PriorMC,
        flags,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MiConfig {
    pub n_instances: usize,
    pub logz: LogZConfig,
}

impl Default for MiConfig {
    fn default() -> Self {
        MiConfig {
            n_instances: 32,
            logz: LogZConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MiEstimate {
    pub mi_per_sample: f64,
    pub std_err: f64,
    pub term_conditional: f64,
    pub term_free_entropy: f64,
    pub flags: Vec<String>,
}

/// Mutual information per data point between (teacher, ξ*) and the dataset:
/// E log P_out(Y₁ | S₁) − (1/n)·E log Z, with both expectations estimated
/// over an ensemble of independently generated instances.
pub fn estimate_mi(
    spec: &NetworkSpec,
    n: usize,
    config: &MiConfig,
    streams: &Streams,
    experiment: &str,
) -> Result<MiEstimate> {
    if n == 0 {
        return Ok(MiEstimate {
            mi_per_sample: 0.0,
            std_err: 0.0,
            term_conditional: 0.0,
            term_free_entropy: 0.0,
            flags: Vec::new(),
        });
    }
    let mut cond_terms = Vec::with_capacity(config.n_instances);
    let mut fe_terms = Vec::with_capacity(config.n_instances);
    let mut flags = Vec::new();
    for inst in 0..config.n_instances {
        let (teacher, data) =
            sample_dataset(spec, n, streams, &format!("{experiment}.mi"), inst as u64)?;
        // First term at the true channel argument, using the stored latents.
        let post = propagate(&data.inputs, &teacher, spec)?;
        let xi = data
            .latents
            .as_ref()
            .and_then(|l| l.xi.as_ref())
            .map(|v| Array1::from_vec(v.clone()));
        let s = channel_argument(&post, &teacher.readout, &spec.channel, xi.as_ref())?;
        let mut acc = 0.0;
        for mu in 0..n {
            acc += spec.channel.readout.log_density(data.labels[mu], s.s[mu]);
        }
        cond_terms.push(acc / n as f64);
        let z = estimate_log_z(
            &data,
            spec,
            &config.logz,
            streams,
            &format!("{experiment}.mi"),
            inst as u64,
        )?;
        for f in z.flags {
            if !flags.contains(&f) {
                flags.push(f);
            }
        }
        fe_terms.push(z.mean / n as f64);
    }
    let term_conditional = mean(&cond_terms);
    let term_free_entropy = mean(&fe_terms);
    let se = (mean_se(&cond_terms).powi(2) + mean_se(&fe_terms).powi(2)).sqrt();
    Ok(MiEstimate {
        mi_per_sample: term_conditional - term_free_entropy,
        std_err: se,
        term_conditional,
        term_free_entropy,
        flags,
    })
}

/// Monte Carlo draw of E log det for the linear-Gaussian oracle used in tests.
pub fn linear_gaussian_mi_oracle(
    spec: &NetworkSpec,
    n: usize,
    n_instances: usize,
    streams: &Streams,
    experiment: &str,
) -> Result<(f64, f64)> {
    let d0 = spec.input_dim();
    let eta = spec.channel.rho;
    let delta_prime = spec.channel.readout.delta + spec.channel.eps;
    let mut vals = Vec::with_capacity(n_instances);
    for inst in 0..n_instances {
        let mut rng = streams.stream(&format!("{experiment}.mi-oracle"), &[inst as u64]);
        let mut x = vec![0.0; d0 * n];
        for v in x.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        // ½ log det(I + η²/Δ'·XᵀX/d₀) via Cholesky of the n×n Gram matrix.
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut dot = 0.0;
                for k in 0..d0 {
                    dot += x[k * n + i] * x[k * n + j];
                }
                let mut c = eta * eta * dot / (d0 as f64) / delta_prime;
                if i == j {
                    c += 1.0;
                }
                gram[i * n + j] = c;
                gram[j * n + i] = c;
            }
        }
        cholesky(&mut gram, n)?;
        let logdet: f64 = (0..n).map(|i| gram[i * n + i].ln()).sum::<f64>() * 2.0;
        vals.push(0.5 * logdet / n as f64);
    }
    Ok((mean(&vals), mean_se(&vals)))
}
