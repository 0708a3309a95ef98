//! Posterior samplers over student weights (and channel noise coordinates
//! when ε > 0).
//!
//! Two kernels are provided. `RandomWalk` is a preconditioned Crank-Nicolson
//! move, reversible with respect to the standard-normal prior, so its
//! accept ratio involves only the likelihood energy; under a constant
//! likelihood it accepts every proposal and samples the prior exactly.
//! `Langevin` is MALA on the full log-posterior with analytic gradients
//! through the activation chain rule and the mixture channel density.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::forward::propagate_with_preacts;
use crate::model::{sample_teacher, Dataset, NetworkSpec, Weights};
use crate::rng::{fill_normal, normal, Streams};
use crate::stats::split_rhat;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    RandomWalk,
    Langevin,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    /// Post-burn-in steps per replica.
    pub n_steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// At least 2, so two-replica identities can be checked.
    pub n_replicas: usize,
    pub kernel: Kernel,
    /// Defaults to 0.3 for RandomWalk and 0.6 for Langevin.
    pub target_accept: Option<f64>,
    /// Chains with split-R-hat above this are flagged.
    pub rhat_threshold: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_steps: 5000,
            burn_in: 2000,
            thin: 20,
            n_replicas: 2,
            kernel: Kernel::RandomWalk,
            target_accept: None,
            rhat_threshold: 1.2,
        }
    }
}

impl McmcConfig {
    fn target(&self) -> f64 {
        self.target_accept.unwrap_or(match self.kernel {
            Kernel::RandomWalk => 0.3,
            Kernel::Langevin => 0.6,
        })
    }
}

/// One retained posterior draw.
#[derive(Clone, Debug)]
pub struct PosteriorSample {
    pub weights: Weights,
    pub xi: Option<Array1<f64>>,
}

#[derive(Clone, Debug)]
pub struct ReplicaOutput {
    pub samples: Vec<PosteriorSample>,
    pub energy_trace: Vec<f64>,
    pub overlap_trace: Option<Vec<f64>>,
    pub acceptance: f64,
    pub step_size: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McmcDiagnostics {
    pub acceptance: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub rhat_energy: f64,
    pub rhat_overlap: Option<f64>,
    pub flagged: bool,
}

#[derive(Clone, Debug)]
pub struct McmcRun {
    pub replicas: Vec<ReplicaOutput>,
    pub diagnostics: McmcDiagnostics,
}

impl McmcRun {
    pub fn all_samples(&self) -> impl Iterator<Item = &PosteriorSample> {
        self.replicas.iter().flat_map(|r| r.samples.iter())
    }
}

/// Flat coordinate vector: readout, hidden matrices in layer order, then ξ.
struct Layout {
    readout: usize,
    hidden: Vec<(usize, usize)>,
    xi: usize,
}

impl Layout {
    fn of(spec: &NetworkSpec, n: usize) -> Self {
        Layout {
            readout: spec.top_dim(),
            hidden: (1..=spec.depth).map(|l| (spec.dims[l], spec.dims[l - 1])).collect(),
            xi: if spec.channel.eps > 0.0 { n } else { 0 },
        }
    }

    fn len(&self) -> usize {
        self.readout + self.hidden.iter().map(|(r, c)| r * c).sum::<usize>() + self.xi
    }

    fn unflatten(&self, flat: &[f64]) -> (Weights, Option<Array1<f64>>) {
        let mut pos = 0;
        let readout = Array1::from_vec(flat[..self.readout].to_vec());
        pos += self.readout;
        let mut hidden = Vec::with_capacity(self.hidden.len());
        for (r, c) in &self.hidden {
            hidden.push(Array2::from_shape_vec((*r, *c), flat[pos..pos + r * c].to_vec()).unwrap());
            pos += r * c;
        }
        let xi = if self.xi > 0 {
            Some(Array1::from_vec(flat[pos..pos + self.xi].to_vec()))
        } else {
            None
        };
        (Weights { readout, hidden }, xi)
    }
}

/// Likelihood energy and its gradient in flat coordinates.
struct EnergyEval<'a> {
    dataset: &'a Dataset,
    spec: &'a NetworkSpec,
    layout: &'a Layout,
}

impl EnergyEval<'_> {
    fn energy(&self, flat: &[f64]) -> Result<f64> {
        let (w, xi) = self.layout.unflatten(flat);
        super::energy(&w, xi.as_ref(), self.dataset, self.spec)
    }

    /// (−energy gradient), i.e. the gradient of the log-likelihood.
    fn grad_loglik(&self, flat: &[f64]) -> Result<Vec<f64>> {
        let (w, xi) = self.layout.unflatten(flat);
        let spec = self.spec;
        let data = self.dataset;
        let n = data.n();
        let mut grad = vec![0.0; flat.len()];
        if n == 0 {
            return Ok(grad);
        }
        let (post, preacts) = propagate_with_preacts(&data.inputs, &w, spec)?;
        let top = post.top();
        let d_top = top.nrows();
        let scale_top = spec.channel.rho / (d_top as f64).sqrt();
        let readout = &spec.channel.readout;

        // u'_μ = ∂ log P_out(Y_μ | x)/∂x at the student's channel argument.
        let mut uprime = vec![0.0; n];
        for mu in 0..n {
            let mut s = 0.0;
            for i in 0..d_top {
                s += w.readout[i] * top[(i, mu)];
            }
            s *= scale_top;
            if let Some(x) = &xi {
                s += spec.channel.eps.sqrt() * x[mu];
            }
            uprime[mu] = readout.log_density_dx(data.labels[mu], s);
        }

        // Readout gradient: Σ_μ u'_μ·ρ·x^(L)_μ/√d_L.
        for i in 0..d_top {
            let mut acc = 0.0;
            for mu in 0..n {
                acc += uprime[mu] * top[(i, mu)];
            }
            grad[i] = acc * scale_top;
        }

        // Backprop through the hidden stack.
        // delta[l] has shape d_l × n; for the top layer
        // delta_(L) = u'·ρ·a ⊙ φ'(pre_L)/√d_L.
        if spec.depth > 0 {
            let mut delta = Array2::zeros((d_top, n));
            let pre_top = &preacts[spec.depth - 1];
            for i in 0..d_top {
                for mu in 0..n {
                    delta[(i, mu)] =
                        uprime[mu] * scale_top * w.readout[i] * spec.activation.d1(pre_top[(i, mu)]);
                }
            }
            let mut offset = self.layout.readout
                + self.layout.hidden[..spec.depth - 1]
                    .iter()
                    .map(|(r, c)| r * c)
                    .sum::<usize>();
            for l in (1..=spec.depth).rev() {
                let below = &post.layers[l - 1];
                let (rows, cols) = self.layout.hidden[l - 1];
                let scale_in = 1.0 / (cols as f64).sqrt();
                for i in 0..rows {
                    for j in 0..cols {
                        let mut acc = 0.0;
                        for mu in 0..n {
                            acc += delta[(i, mu)] * below[(j, mu)];
                        }
                        grad[offset + i * cols + j] = acc * scale_in;
                    }
                }
                if l > 1 {
                    let w_l = &w.hidden[l - 1];
                    let pre_below = &preacts[l - 2];
                    let d_below = below.nrows();
                    let mut next = Array2::zeros((d_below, n));
                    for j in 0..d_below {
                        for mu in 0..n {
                            let mut acc = 0.0;
                            for i in 0..rows {
                                acc += w_l[(i, j)] * delta[(i, mu)];
                            }
                            next[(j, mu)] =
                                acc * scale_in * spec.activation.d1(pre_below[(j, mu)]);
                        }
                    }
                    delta = next;
                    offset -= self.layout.hidden[l - 2].0 * self.layout.hidden[l - 2].1;
                }
            }
        }

        // ξ gradient: u'_μ·√ε.
        if self.layout.xi > 0 {
            let base = flat.len() - n;
            let se = spec.channel.eps.sqrt();
            for mu in 0..n {
                grad[base + mu] = uprime[mu] * se;
            }
        }
        Ok(grad)
    }
}

struct Chain {
    flat: Vec<f64>,
    energy: f64,
    step: f64,
    accept_count: u64,
    propose_count: u64,
}

const ENERGY_CHECK_PERIOD: u64 = 1000;
const ENERGY_CHECK_TOL: f64 = 1e-8;
const INIT_RETRIES: usize = 16;

fn run_replica(
    dataset: &Dataset,
    spec: &NetworkSpec,
    config: &McmcConfig,
    teacher: Option<&Weights>,
    rng: &mut ChaCha8Rng,
) -> Result<ReplicaOutput> {
    let n = dataset.n();
    let layout = Layout::of(spec, n);
    let eval = EnergyEval {
        dataset,
        spec,
        layout: &layout,
    };
    let dim = layout.len();
    let total = config.burn_in + config.n_steps;
    let d_top = spec.top_dim() as f64;

    // With no data the posterior is the prior: draw it directly.
    if n == 0 {
        let kept = (config.n_steps / config.thin.max(1)).max(1);
        let mut samples = Vec::with_capacity(kept);
        for _ in 0..kept {
            let w = sample_teacher(spec, rng);
            samples.push(PosteriorSample { weights: w, xi: None });
        }
        let overlap_trace = teacher.map(|t| {
            samples
                .iter()
                .map(|s| {
                    s.weights
                        .readout
                        .iter()
                        .zip(t.readout.iter())
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        / d_top
                })
                .collect()
        });
        return Ok(ReplicaOutput {
            energy_trace: vec![0.0; samples.len()],
            overlap_trace,
            acceptance: 1.0,
            step_size: 0.0,
            samples,
        });
    }

    // Initialize from the prior, retrying on a non-finite energy.
    let mut chain = None;
    for _ in 0..INIT_RETRIES {
        let mut flat = vec![0.0; dim];
        fill_normal(rng, &mut flat);
        let e = eval.energy(&flat)?;
        if e.is_finite() {
            chain = Some(Chain {
                flat,
                energy: e,
                step: match config.kernel {
                    Kernel::RandomWalk => 0.1,
                    Kernel::Langevin => 0.5 / (dim as f64).sqrt(),
                },
                accept_count: 0,
                propose_count: 0,
            });
            break;
        }
    }
    let mut chain =
        chain.ok_or_else(|| Error::Numeric("non-finite energy after prior reinits".into()))?;

    let target = config.target();
    let mut grad = match config.kernel {
        Kernel::Langevin => eval.grad_loglik(&chain.flat)?,
        Kernel::RandomWalk => Vec::new(),
    };
    let mut window_accepts = 0u64;
    const WINDOW: u64 = 50;

    let kept = config.n_steps / config.thin.max(1);
    let mut samples = Vec::with_capacity(kept);
    let mut energy_trace = Vec::with_capacity(kept);
    let mut overlap_trace = teacher.map(|_| Vec::with_capacity(kept));
    let mut proposal = vec![0.0; dim];

    for step_ix in 0..total {
        let adapting = step_ix < config.burn_in;
        chain.propose_count += 1;
        let accepted = match config.kernel {
            Kernel::RandomWalk => {
                // pCN: θ' = √(1−β²)θ + βη, prior-reversible.
                let beta = chain.step.min(0.999_999);
                let keep = (1.0 - beta * beta).sqrt();
                for (p, x) in proposal.iter_mut().zip(&chain.flat) {
                    *p = keep * x + beta * normal(rng);
                }
                let e_new = eval.energy(&proposal)?;
                let log_ratio = chain.energy - e_new;
                if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
                    std::mem::swap(&mut chain.flat, &mut proposal);
                    chain.energy = e_new;
                    true
                } else {
                    false
                }
            }
            Kernel::Langevin => {
                // MALA on log π = −½‖θ‖² − energy.
                let tau = chain.step;
                let half = 0.5 * tau * tau;
                let mut noise_sq = 0.0;
                for i in 0..dim {
                    let drift = half * (grad[i] - chain.flat[i]);
                    let z = normal(rng);
                    noise_sq += z * z;
                    proposal[i] = chain.flat[i] + drift + tau * z;
                }
                let e_new = eval.energy(&proposal)?;
                let grad_new = eval.grad_loglik(&proposal)?;
                let mut log_q_fwd = 0.0;
                let mut log_q_rev = 0.0;
                let mut prior_diff = 0.0;
                for i in 0..dim {
                    let mean_fwd = chain.flat[i] + half * (grad[i] - chain.flat[i]);
                    let mean_rev = proposal[i] + half * (grad_new[i] - proposal[i]);
                    log_q_fwd -= (proposal[i] - mean_fwd).powi(2);
                    log_q_rev -= (chain.flat[i] - mean_rev).powi(2);
                    prior_diff += 0.5 * (chain.flat[i].powi(2) - proposal[i].powi(2));
                }
                let _ = noise_sq;
                let log_ratio = (chain.energy - e_new)
                    + prior_diff
                    + (log_q_rev - log_q_fwd) / (2.0 * tau * tau);
                if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
                    std::mem::swap(&mut chain.flat, &mut proposal);
                    chain.energy = e_new;
                    grad = grad_new;
                    true
                } else {
                    false
                }
            }
        };
        if accepted {
            chain.accept_count += 1;
            window_accepts += 1;
        }

        debug_assert!({
            let recomputed = eval.energy(&chain.flat)?;
            (recomputed - chain.energy).abs() <= ENERGY_CHECK_TOL.max(1e-12 * recomputed.abs())
        });
        if chain.propose_count % ENERGY_CHECK_PERIOD == 0 {
            let recomputed = eval.energy(&chain.flat)?;
            if (recomputed - chain.energy).abs() > ENERGY_CHECK_TOL.max(1e-10 * recomputed.abs()) {
                return Err(Error::Numeric(format!(
                    "cached energy {} drifted from recomputed {}",
                    chain.energy, recomputed
                )));
            }
            chain.energy = recomputed;
        }

        if adapting && chain.propose_count % WINDOW == 0 {
            let rate = window_accepts as f64 / WINDOW as f64;
            chain.step = (chain.step * ((rate - target) * 0.5).exp()).clamp(1e-7, 0.999);
            window_accepts = 0;
        }

        if !adapting {
            let k = step_ix - config.burn_in;
            if config.thin.max(1) != 0 && (k + 1) % config.thin.max(1) == 0 {
                let (w, xi) = layout.unflatten(&chain.flat);
                energy_trace.push(chain.energy);
                if let (Some(tr), Some(t)) = (overlap_trace.as_mut(), teacher) {
                    let ov = w
                        .readout
                        .iter()
                        .zip(t.readout.iter())
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        / d_top;
                    tr.push(ov);
                }
                samples.push(PosteriorSample { weights: w, xi });
            }
        }
    }

    Ok(ReplicaOutput {
        samples,
        energy_trace,
        overlap_trace,
        acceptance: chain.accept_count as f64 / chain.propose_count.max(1) as f64,
        step_size: chain.step,
    })
}

/// Run `n_replicas` independent chains targeting exp(−H)·prior. Step sizes
/// adapt toward the target acceptance during burn-in and are frozen after.
/// Diagnostics carry acceptance rates, split-R-hat on the energy trace and,
/// when a teacher is supplied, on the teacher-readout overlap.
pub fn mcmc_run(
    dataset: &Dataset,
    spec: &NetworkSpec,
    config: &McmcConfig,
    teacher: Option<&Weights>,
    streams: &Streams,
    experiment: &str,
    instance: u64,
) -> Result<McmcRun> {
    if config.n_replicas < 2 {
        return Err(Error::Config("n_replicas must be ≥ 2".into()));
    }
    if !(spec.channel.readout.delta > 0.0) {
        return Err(Error::Spec("delta must be > 0".into()));
    }
    let replicas: Vec<Result<ReplicaOutput>> = (0..config.n_replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = streams.stream(&format!("{experiment}.mcmc"), &[instance, r as u64]);
            run_replica(dataset, spec, config, teacher, &mut rng)
        })
        .collect();
    let mut outs = Vec::with_capacity(config.n_replicas);
    for r in replicas {
        outs.push(r?);
    }

    let energy_chains: Vec<Vec<f64>> = outs.iter().map(|o| o.energy_trace.clone()).collect();
    let rhat_energy = split_rhat(&energy_chains);
    let rhat_overlap = if outs.iter().all(|o| o.overlap_trace.is_some()) {
        let chains: Vec<Vec<f64>> = outs
            .iter()
            .map(|o| o.overlap_trace.clone().unwrap())
            .collect();
        Some(split_rhat(&chains))
    } else {
        None
    };
    let worst = rhat_overlap
        .unwrap_or(1.0)
        .max(if rhat_energy.is_nan() { 1.0 } else { rhat_energy });
    let diagnostics = McmcDiagnostics {
        acceptance: outs.iter().map(|o| o.acceptance).collect(),
        step_sizes: outs.iter().map(|o| o.step_size).collect(),
        rhat_energy,
        rhat_overlap,
        flagged: !(worst <= config.rhat_threshold),
    };
    Ok(McmcRun {
        replicas: outs,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::sample_dataset;
    use crate::model::{square_spec, Activation, ReadoutKind};
    use crate::stats::{batch_means_se, mean};

    fn streams() -> Streams {
        Streams::new(20_240_501)
    }

    #[test]
    fn no_data_means_prior_sampling() {
        let spec = square_spec(0, 16, Activation::Tanh, 1.0, 0.0, ReadoutKind::Linear, 0.5);
        let (teacher, data) = sample_dataset(&spec, 0, &streams(), "prior", 0).unwrap();
        let config = McmcConfig {
            n_steps: 4000,
            burn_in: 0,
            thin: 1,
            ..Default::default()
        };
        let run = mcmc_run(&data, &spec, &config, Some(&teacher), &streams(), "prior", 0).unwrap();
        let overlaps: Vec<f64> = run
            .replicas
            .iter()
            .flat_map(|r| r.overlap_trace.clone().unwrap())
            .collect();
        let m = mean(&overlaps);
        let tol = 3.0 / ((overlaps.len() * 16) as f64).sqrt();
        assert!(m.abs() < tol, "overlap {m} tol {tol}");
        assert!(!run.diagnostics.flagged);
    }

    #[test]
    fn zero_readout_random_walk_accepts_everything() {
        let spec = square_spec(0, 8, Activation::Tanh, 1.0, 0.0, ReadoutKind::Zero, 1.0);
        let (_, data) = sample_dataset(&spec, 12, &streams(), "zero", 0).unwrap();
        let config = McmcConfig {
            n_steps: 2000,
            burn_in: 500,
            thin: 5,
            kernel: Kernel::RandomWalk,
            ..Default::default()
        };
        let run = mcmc_run(&data, &spec, &config, None, &streams(), "zero", 0).unwrap();
        for r in &run.replicas {
            assert_eq!(r.acceptance, 1.0);
        }
        // Posterior = prior: readout coordinates have prior moments.
        let coords: Vec<f64> = run
            .all_samples()
            .map(|s| s.weights.readout[0])
            .collect();
        let m = mean(&coords);
        let se = crate::stats::mean_se(&coords);
        assert!(m.abs() < 4.0 * se.max(1e-3), "mean {m} se {se}");
        let v = crate::stats::variance(&coords);
        assert!((v - 1.0).abs() < 0.25, "variance {v}");
    }

    fn conjugate_posterior(data: &Dataset, eta: f64, delta: f64) -> (f64, f64) {
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for mu in 0..data.n() {
            let x = data.inputs[(0, mu)];
            sxx += x * x;
            sxy += x * data.labels[mu];
        }
        let prec = 1.0 + eta * eta * sxx / delta;
        (eta * sxy / delta / prec, 1.0 / prec)
    }

    #[test]
    fn conjugate_gaussian_matches_closed_form_random_walk() {
        let spec = square_spec(0, 1, Activation::Tanh, 1.0, 0.0, ReadoutKind::Linear, 1.0);
        let (_, data) = sample_dataset(&spec, 1, &streams(), "conj", 0).unwrap();
        let (m_true, _) = conjugate_posterior(&data, 1.0, 1.0);
        let config = McmcConfig {
            n_steps: 30_000,
            burn_in: 3000,
            thin: 1,
            kernel: Kernel::RandomWalk,
            ..Default::default()
        };
        let run = mcmc_run(&data, &spec, &config, None, &streams(), "conj", 0).unwrap();
        for r in &run.replicas {
            let trace: Vec<f64> = r.samples.iter().map(|s| s.weights.readout[0]).collect();
            let m = mean(&trace);
            let se = batch_means_se(&trace);
            assert!(
                (m - m_true).abs() < 3.0 * se,
                "chain mean {m} vs {m_true} (se {se})"
            );
        }
        assert!(run.diagnostics.rhat_energy < 1.1);
    }

    #[test]
    fn conjugate_gaussian_matches_closed_form_langevin() {
        let spec = square_spec(0, 1, Activation::Tanh, 1.0, 0.0, ReadoutKind::Linear, 0.5);
        let (_, data) = sample_dataset(&spec, 4, &streams(), "conjl", 1).unwrap();
        let (m_true, _) = conjugate_posterior(&data, 1.0, 0.5);
        let config = McmcConfig {
            n_steps: 20_000,
            burn_in: 4000,
            thin: 1,
            kernel: Kernel::Langevin,
            ..Default::default()
        };
        let run = mcmc_run(&data, &spec, &config, None, &streams(), "conjl", 1).unwrap();
        for r in &run.replicas {
            let trace: Vec<f64> = r.samples.iter().map(|s| s.weights.readout[0]).collect();
            let m = mean(&trace);
            let se = batch_means_se(&trace);
            assert!(
                (m - m_true).abs() < 3.5 * se,
                "chain mean {m} vs {m_true} (se {se})"
            );
        }
        let acc = run.diagnostics.acceptance[0];
        assert!(acc > 0.35 && acc < 0.9, "langevin acceptance {acc}");
    }

    #[test]
    fn langevin_gradient_matches_finite_differences() {
        let spec = square_spec(2, 5, Activation::Tanh, 1.3, 0.4, ReadoutKind::ScaledTanh(0.8), 0.6);
        let (_, data) = sample_dataset(&spec, 6, &streams(), "grad", 0).unwrap();
        let layout = Layout::of(&spec, data.n());
        let eval = EnergyEval {
            dataset: &data,
            spec: &spec,
            layout: &layout,
        };
        let mut flat = vec![0.0; layout.len()];
        fill_normal(&mut streams().stream("grad-point", &[]), &mut flat);
        let grad = eval.grad_loglik(&flat).unwrap();
        let h = 1e-6;
        for ix in [0usize, 3, 7, 30, layout.len() - 1, layout.len() - 4] {
            let mut plus = flat.clone();
            plus[ix] += h;
            let mut minus = flat.clone();
            minus[ix] -= h;
            // grad of log-lik = −grad of energy.
            let fd = -(eval.energy(&plus).unwrap() - eval.energy(&minus).unwrap()) / (2.0 * h);
            assert!(
                (grad[ix] - fd).abs() < 1e-4 * (1.0 + fd.abs()),
                "coordinate {ix}: analytic {} vs fd {fd}",
                grad[ix]
            );
        }
    }

    #[test]
    fn replicas_need_two() {
        let spec = square_spec(0, 2, Activation::Tanh, 1.0, 0.0, ReadoutKind::Linear, 0.5);
        let (_, data) = sample_dataset(&spec, 2, &streams(), "r", 0).unwrap();
        let config = McmcConfig {
            n_replicas: 1,
            ..Default::default()
        };
        assert!(mcmc_run(&data, &spec, &config, None, &streams(), "r", 0).is_err());
    }

    #[test]
    fn xi_coordinates_are_sampled_when_eps_positive() {
        let spec = square_spec(0, 3, Activation::Tanh, 1.0, 0.5, ReadoutKind::Linear, 0.5);
        let (_, data) = sample_dataset(&spec, 5, &streams(), "xi", 0).unwrap();
        let config = McmcConfig {
            n_steps: 500,
            burn_in: 200,
            thin: 10,
            ..Default::default()
        };
        let run = mcmc_run(&data, &spec, &config, None, &streams(), "xi", 0).unwrap();
        for s in run.all_samples() {
            let xi = s.xi.as_ref().expect("xi coordinates present");
            assert_eq!(xi.len(), 5);
        }
    }
}
