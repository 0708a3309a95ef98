//! Layer elimination: replace the top hidden layer by its linear-plus-noise
//! equivalent, iterate down to a generalized linear model, and generate
//! matched dataset pairs for side-by-side inference.

use serde::{Deserialize, Serialize};

use crate::coefficients::CoeffTable;
use crate::forward::sample_dataset;
use crate::model::{Dataset, NetworkSpec, Weights};
use crate::rng::Streams;
use crate::{Error, Result};

/// One elimination step: the channel picks up the top layer's coefficients.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReductionStep {
    pub from_depth: usize,
    pub to_depth: usize,
    pub rho_before: f64,
    pub eps_before: f64,
    pub rho_after: f64,
    pub eps_after: f64,
}

/// Remove the top hidden layer: the returned spec has one layer fewer and
/// channel (ρ·ρ_L, ρ²·ε_L + ε); readout and Δ are untouched.
pub fn reduce_once(spec: &NetworkSpec, table: &CoeffTable) -> Result<(NetworkSpec, ReductionStep)> {
    if spec.depth == 0 {
        return Err(Error::Spec("already a GLM".into()));
    }
    if table.depth() != spec.depth {
        return Err(Error::Shape(format!(
            "coefficient table depth {} != spec depth {}",
            table.depth(),
            spec.depth
        )));
    }
    let rho_top = table.rho_l[spec.depth - 1];
    let eps_top = table.eps_l[spec.depth - 1];
    let rho = spec.channel.rho;
    let eps = spec.channel.eps;
    let step = ReductionStep {
        from_depth: spec.depth,
        to_depth: spec.depth - 1,
        rho_before: rho,
        eps_before: eps,
        rho_after: rho * rho_top,
        eps_after: rho * rho * eps_top + eps,
    };
    let mut reduced = spec.clone();
    reduced.depth -= 1;
    reduced.dims.pop();
    reduced.channel.rho = step.rho_after;
    reduced.channel.eps = step.eps_after;
    Ok((reduced, step))
}

/// Iterate `reduce_once` until no hidden layer remains. The resulting GLM
/// channel equals the aggregated coefficients (η_0, γ_0).
pub fn reduce_full(spec: &NetworkSpec, table: &CoeffTable) -> Result<(NetworkSpec, Vec<ReductionStep>)> {
    let mut current = spec.clone();
    let mut trail = Vec::with_capacity(spec.depth);
    let mut remaining_table = table.clone();
    while current.depth > 0 {
        let (next, step) = reduce_once(&current, &remaining_table)?;
        remaining_table.rho_l.pop();
        remaining_table.eps_l.pop();
        remaining_table.sigma.pop();
        remaining_table.eta.pop();
        remaining_table.gamma.pop();
        trail.push(step);
        current = next;
    }
    Ok((current, trail))
}

/// The spec truncated to `k` remaining layers, running with the aggregated
/// channel coefficients (η_k, γ_k).
pub fn reduced_spec(
    spec: &NetworkSpec,
    table: &CoeffTable,
    k: usize,
) -> Result<crate::model::ReducedSpec> {
    if k > spec.depth {
        return Err(Error::Config(format!(
            "k = {k} exceeds depth {}",
            spec.depth
        )));
    }
    let mut base = spec.clone();
    base.dims.truncate(k + 1);
    base.depth = k;
    base.channel.rho = table.eta[k];
    base.channel.eps = table.gamma[k];
    Ok(crate::model::ReducedSpec {
        remaining: k,
        eta: table.eta[k],
        gamma: table.gamma[k],
        base,
    })
}

/// Matched pair of experiments: independent datasets from the deep teacher
/// and from the fully reduced GLM teacher, with disjoint sub-streams.
pub struct PairedExperiment {
    pub deep: (Weights, Dataset),
    pub glm: (Weights, Dataset),
    pub glm_spec: NetworkSpec,
}

pub fn paired_experiment(
    spec: &NetworkSpec,
    table: &CoeffTable,
    n: usize,
    streams: &Streams,
    experiment: &str,
    instance: u64,
) -> Result<PairedExperiment> {
    if spec.depth == 0 {
        return Err(Error::Spec("paired experiment needs depth ≥ 1".into()));
    }
    let (glm_spec, _) = reduce_full(spec, table)?;
    let deep = sample_dataset(spec, n, streams, &format!("{experiment}.deep"), instance)?;
    let glm = sample_dataset(&glm_spec, n, streams, &format!("{experiment}.glm"), instance)?;
    Ok(PairedExperiment {
        deep,
        glm,
        glm_spec,
    })
}
