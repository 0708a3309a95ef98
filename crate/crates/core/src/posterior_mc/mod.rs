//! Bayes-optimal inference machinery at desk scale: exact channel density,
//! posterior Monte Carlo over student weights, free-entropy and mutual
//! information estimation, Bayes prediction, generalization error, and
//! Nishimori diagnostics.

mod estimate;
mod logz;
mod mcmc;

pub use estimate::{
    gen_error, interp_free_entropy, nishimori_check, predict, GenErrorConfig, GenErrorEstimate,
    InterpConfig, InterpPath, NishimoriConfig, NishimoriReport, NishimoriStat,
};
pub(crate) use estimate::gen_error_instance;
pub use estimate::free_entropy_once;
pub use logz::{
    estimate_log_z, estimate_mi, linear_gaussian_mi_oracle, LogZConfig, LogZEstimate, LogZMethod,
    MiConfig, MiEstimate,
};
pub use mcmc::{mcmc_run, Kernel, McmcConfig, McmcDiagnostics, McmcRun, PosteriorSample};

use ndarray::Array1;

use crate::forward::{channel_argument, propagate};
use crate::model::{Dataset, NetworkSpec, Readout, Weights};
use crate::Result;

/// log P_out(y | x): the finite-mixture channel density, stable for any
/// input magnitude.
pub fn log_pout(y: f64, x: f64, readout: &Readout) -> f64 {
    readout.log_density(y, x)
}

/// H(θ, ξ; data) = −Σ_μ log P_out(Y_μ | s_μ(θ, ξ)), with the channel
/// argument rebuilt by forward propagation of the student weights.
pub fn energy(
    weights: &Weights,
    xi: Option<&Array1<f64>>,
    dataset: &Dataset,
    spec: &NetworkSpec,
) -> Result<f64> {
    if dataset.n() == 0 {
        return Ok(0.0);
    }
    let post = propagate(&dataset.inputs, weights, spec)?;
    let s = channel_argument(&post, &weights.readout, &spec.channel, xi)?;
    Ok(energy_given_argument(&s.s, &dataset.labels, &spec.channel.readout))
}

pub(crate) fn energy_given_argument(s: &Array1<f64>, y: &Array1<f64>, readout: &Readout) -> f64 {
    let mut acc = 0.0;
    for mu in 0..y.len() {
        acc -= log_pout(y[mu], s[mu], readout);
    }
    acc
}
