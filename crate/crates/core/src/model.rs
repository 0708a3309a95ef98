//! Data model: activations, readout channels, network specifications,
//! weight sets, datasets, and spec validation.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{fill_normal, Streams};
use crate::{Error, Result};

/// Component-wise nonlinearity. All shipped kinds are odd C² functions with
/// bounded first and second derivatives; ReLU is deliberately not on the
/// menu (not odd, not smooth).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// φ(x) = c·x. The exactness baseline: its layer noise is zero.
    ScaledLinear(f64),
    /// φ(x) = erf(x/√2).
    Erf,
    /// φ(x) = tanh(x).
    Tanh,
}

impl Activation {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Activation::ScaledLinear(c) => c * x,
            Activation::Erf => libm::erf(x / std::f64::consts::SQRT_2),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match self {
            Activation::ScaledLinear(c) => *c,
            Activation::Erf => (2.0 / std::f64::consts::PI).sqrt() * (-0.5 * x * x).exp(),
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match self {
            Activation::ScaledLinear(_) => 0.0,
            Activation::Erf => -x * (2.0 / std::f64::consts::PI).sqrt() * (-0.5 * x * x).exp(),
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }

    /// Declared sup bounds (|φ'|, |φ''|), with a little slack.
    pub fn derivative_bounds(&self) -> (f64, f64) {
        match self {
            Activation::ScaledLinear(c) => (c.abs(), 0.0),
            // sup|φ'| = √(2/π); sup|φ''| = √(2/π)·e^{-1/2}
            Activation::Erf => (0.7979, 0.4840),
            // sup|φ'| = 1; sup|φ''| = 4/(3√3)
            Activation::Tanh => (1.0, 0.7699),
        }
    }
}

/// One atom of the readout randomness: `f(x; a) = a·f_base(x)` with
/// probability `prob`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    pub value: f64,
    pub prob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutKind {
    /// f_base(x) = x.
    Linear,
    /// f_base ≡ 0: labels are pure noise.
    Zero,
    /// f_base(x) = c·tanh(x).
    ScaledTanh(f64),
}

/// Output channel: y = a·f_base(x) + √Δ·z with a drawn from a finite
/// discrete support and z standard normal. The density is therefore an
/// exact finite mixture of Gaussians.
#[derive(Clone, Debug, PartialEq)]
pub struct Readout {
    pub kind: ReadoutKind,
    /// Finite support of the output randomness; `[(1, 1)]` means none.
    pub a_support: Vec<SupportPoint>,
    /// Label-noise variance Δ. Strictly positive, or the channel density
    /// degenerates to a Dirac mass.
    pub delta: f64,
}

impl Readout {
    pub fn deterministic(kind: ReadoutKind, delta: f64) -> Self {
        Readout {
            kind,
            a_support: vec![SupportPoint {
                value: 1.0,
                prob: 1.0,
            }],
            delta,
        }
    }

    fn base(&self, x: f64) -> f64 {
        match self.kind {
            ReadoutKind::Linear => x,
            ReadoutKind::Zero => 0.0,
            ReadoutKind::ScaledTanh(c) => c * x.tanh(),
        }
    }

    fn base_d1(&self, x: f64) -> f64 {
        match self.kind {
            ReadoutKind::Linear => 1.0,
            ReadoutKind::Zero => 0.0,
            ReadoutKind::ScaledTanh(c) => {
                let t = x.tanh();
                c * (1.0 - t * t)
            }
        }
    }

    fn base_d2(&self, x: f64) -> f64 {
        match self.kind {
            ReadoutKind::Linear | ReadoutKind::Zero => 0.0,
            ReadoutKind::ScaledTanh(c) => {
                let t = x.tanh();
                -2.0 * c * t * (1.0 - t * t)
            }
        }
    }

    pub fn f(&self, x: f64, a: f64) -> f64 {
        a * self.base(x)
    }

    pub fn f_d1(&self, x: f64, a: f64) -> f64 {
        a * self.base_d1(x)
    }

    pub fn f_d2(&self, x: f64, a: f64) -> f64 {
        a * self.base_d2(x)
    }

    /// E_A f(x; A), the posterior-mean label for a given channel argument
    /// (the additive noise is centered).
    pub fn mean_f(&self, x: f64) -> f64 {
        self.a_support
            .iter()
            .map(|p| p.prob * self.f(x, p.value))
            .sum()
    }

    /// log P_out(y | x) = log Σ_i p_i N(y; f(x; a_i), Δ), by log-sum-exp.
    pub fn log_density(&self, y: f64, x: f64) -> f64 {
        if self.a_support.len() == 1 {
            let p = &self.a_support[0];
            return crate::stats::normal_logpdf(y, self.f(x, p.value), self.delta);
        }
        let terms: Vec<f64> = self
            .a_support
            .iter()
            .map(|p| p.prob.ln() + crate::stats::normal_logpdf(y, self.f(x, p.value), self.delta))
            .collect();
        crate::stats::log_sum_exp(&terms)
    }

    /// ∂/∂x log P_out(y | x), used by gradient-based samplers.
    pub fn log_density_dx(&self, y: f64, x: f64) -> f64 {
        if self.a_support.len() == 1 {
            let p = &self.a_support[0];
            return (y - self.f(x, p.value)) / self.delta * self.f_d1(x, p.value);
        }
        let logs: Vec<f64> = self
            .a_support
            .iter()
            .map(|p| p.prob.ln() + crate::stats::normal_logpdf(y, self.f(x, p.value), self.delta))
            .collect();
        let lse = crate::stats::log_sum_exp(&logs);
        self.a_support
            .iter()
            .zip(&logs)
            .map(|(p, lg)| {
                (lg - lse).exp() * (y - self.f(x, p.value)) / self.delta * self.f_d1(x, p.value)
            })
            .sum()
    }
}

/// Channel parameters (ρ, ε) scaling the signal and the latent noise of the
/// output channel argument.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelParams {
    /// Signal scale, > 0.
    pub rho: f64,
    /// Channel-noise variance, ≥ 0.
    pub eps: f64,
    pub readout: Readout,
}

/// Architecture plus channel: `depth` hidden weight matrices, layer widths
/// `dims = [d_0, ..., d_L]`. Depth 0 is a generalized linear model.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub depth: usize,
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub channel: ChannelParams,
}

impl NetworkSpec {
    pub fn new(
        dims: Vec<usize>,
        activation: Activation,
        rho: f64,
        eps: f64,
        readout: Readout,
    ) -> Self {
        NetworkSpec {
            depth: dims.len().saturating_sub(1),
            dims,
            activation,
            channel: ChannelParams { rho, eps, readout },
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn top_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Total number of weights (readout vector plus hidden matrices).
    pub fn weight_count(&self) -> usize {
        let mut c = self.top_dim();
        for l in 1..=self.depth {
            c += self.dims[l] * self.dims[l - 1];
        }
        c
    }
}

/// A weight set (teacher or student): readout vector of length d_L and one
/// d_l × d_{l-1} matrix per hidden layer, all standard normal under the prior.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub readout: Array1<f64>,
    pub hidden: Vec<Array2<f64>>,
}

impl Weights {
    pub fn shape_matches(&self, spec: &NetworkSpec) -> bool {
        if self.readout.len() != spec.top_dim() || self.hidden.len() != spec.depth {
            return false;
        }
        self.hidden
            .iter()
            .enumerate()
            .all(|(i, w)| w.nrows() == spec.dims[i + 1] && w.ncols() == spec.dims[i])
    }

    pub fn n_params(&self) -> usize {
        self.readout.len() + self.hidden.iter().map(|w| w.len()).sum::<usize>()
    }
}

/// Record of how a dataset was generated, for exact replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub labels: Vec<String>,
}

/// Per-sample latent draws retained for diagnostics only; inference
/// operations must never read them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latents {
    /// Channel noise ξ* (present when ε > 0).
    pub xi: Option<Vec<f64>>,
    /// Readout randomness draws A_μ.
    pub a_draw: Vec<f64>,
    /// Label-noise draws Z_μ.
    pub z: Vec<f64>,
}

/// Inputs, responses, and provenance.
#[derive(Clone, Debug)]
pub struct Dataset {
    /// d_0 × n input matrix.
    pub inputs: Array2<f64>,
    /// Responses, length n.
    pub labels: Array1<f64>,
    pub latents: Option<Latents>,
    pub seed_record: SeedRecord,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.labels.len()
    }
}

/// A spec truncated to `remaining` layers together with the aggregated
/// channel coefficients it should run with.
#[derive(Clone, Debug)]
pub struct ReducedSpec {
    pub remaining: usize,
    pub eta: f64,
    pub gamma: f64,
    pub base: NetworkSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

/// Outcome of `validate_spec`: failures are reported, not thrown.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub pass: bool,
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    fn push(&mut self, field: &str, message: impl Into<String>) {
        self.pass = false;
        self.diagnostics.push(Diagnostic {
            field: field.to_string(),
            message: message.into(),
        });
    }
}

const ODDNESS_TOL: f64 = 1e-12;
const FD_TOL: f64 = 1e-6;
const FD_STEP: f64 = 1e-5;

fn grid() -> impl Iterator<Item = f64> {
    (0..=100).map(|i| -5.0 + 0.1 * i as f64)
}

/// Check every type invariant of a spec and report per-field diagnostics.
pub fn validate_spec(spec: &NetworkSpec) -> ValidationReport {
    let mut report = ValidationReport {
        pass: true,
        diagnostics: Vec::new(),
    };

    if spec.dims.len() != spec.depth + 1 {
        report.push("dims", "dims/L mismatch");
    }
    if spec.dims.iter().any(|&d| d == 0) {
        report.push("dims", "all dims must be ≥ 1");
    }
    if !(spec.channel.rho > 0.0) {
        report.push("rho", "rho must be > 0");
    }
    if spec.channel.eps < 0.0 {
        report.push("eps", "eps must be ≥ 0");
    }
    let readout = &spec.channel.readout;
    if !(readout.delta > 0.0) {
        report.push("delta", "delta must be > 0");
    }
    if readout.a_support.is_empty() {
        report.push("A_support", "support must be non-empty");
    }
    let psum: f64 = readout.a_support.iter().map(|p| p.prob).sum();
    if (psum - 1.0).abs() > 1e-12 {
        report.push("A_support", format!("probabilities sum to {psum}, not 1"));
    }
    if readout.a_support.iter().any(|p| p.prob < 0.0) {
        report.push("A_support", "probabilities must be ≥ 0");
    }

    // Oddness and derivative checks on the test grid.
    let phi = &spec.activation;
    let (b1, b2) = phi.derivative_bounds();
    for x in grid() {
        if (phi.value(x) + phi.value(-x)).abs() > ODDNESS_TOL {
            report.push("activation", format!("not odd at x = {x}"));
            break;
        }
    }
    for x in grid() {
        let fd1 = (phi.value(x + FD_STEP) - phi.value(x - FD_STEP)) / (2.0 * FD_STEP);
        let fd2 = (phi.d1(x + FD_STEP) - phi.d1(x - FD_STEP)) / (2.0 * FD_STEP);
        if (phi.d1(x) - fd1).abs() > FD_TOL || (phi.d2(x) - fd2).abs() > FD_TOL {
            report.push("activation", format!("derivative mismatch at x = {x}"));
            break;
        }
        if phi.d1(x).abs() > b1 + 1e-9 || phi.d2(x).abs() > b2 + 1e-9 {
            report.push("activation", format!("derivative bound exceeded at x = {x}"));
            break;
        }
    }
    for p in &readout.a_support {
        let a = p.value;
        let mut bad = false;
        for x in grid() {
            if (readout.f(x, a) + readout.f(-x, a)).abs() > ODDNESS_TOL {
                report.push("readout", format!("f(·; {a}) not odd at x = {x}"));
                bad = true;
                break;
            }
            let fd1 = (readout.f(x + FD_STEP, a) - readout.f(x - FD_STEP, a)) / (2.0 * FD_STEP);
            let fd2 = (readout.f_d1(x + FD_STEP, a) - readout.f_d1(x - FD_STEP, a)) / (2.0 * FD_STEP);
            if (readout.f_d1(x, a) - fd1).abs() > FD_TOL || (readout.f_d2(x, a) - fd2).abs() > FD_TOL
            {
                report.push("readout", format!("f(·; {a}) derivative mismatch at x = {x}"));
                bad = true;
                break;
            }
        }
        if bad {
            break;
        }
    }

    report
}

fn validated(spec: &NetworkSpec) -> Result<()> {
    let report = validate_spec(spec);
    if report.pass {
        Ok(())
    } else {
        let msgs: Vec<String> = report
            .diagnostics
            .iter()
            .map(|d| format!("{}: {}", d.field, d.message))
            .collect();
        Err(Error::Spec(msgs.join("; ")))
    }
}

/// Draw a fresh weight set with i.i.d. standard normal entries from the
/// given stream. Deterministic given (seed, stream label).
pub fn sample_teacher(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Weights {
    let mut readout = vec![0.0; spec.top_dim()];
    fill_normal(rng, &mut readout);
    let mut hidden = Vec::with_capacity(spec.depth);
    for l in 1..=spec.depth {
        let (r, c) = (spec.dims[l], spec.dims[l - 1]);
        let mut buf = vec![0.0; r * c];
        fill_normal(rng, &mut buf);
        hidden.push(Array2::from_shape_vec((r, c), buf).unwrap());
    }
    Weights {
        readout: Array1::from_vec(readout),
        hidden,
    }
}

/// `sample_teacher` behind a validity check, for callers holding untrusted specs.
pub fn sample_teacher_checked(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Result<Weights> {
    validated(spec)?;
    Ok(sample_teacher(spec, rng))
}

pub use json::{spec_from_json, spec_to_json};

/// Stable JSON contract for `NetworkSpec`:
/// `{"L","dims","activation","readout","rho","eps","delta","A_support"}`.
mod json {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct SpecJson {
        #[serde(rename = "L")]
        l: usize,
        dims: Vec<usize>,
        activation: Activation,
        readout: ReadoutKind,
        rho: f64,
        eps: f64,
        delta: f64,
        #[serde(rename = "A_support", default, skip_serializing_if = "Option::is_none")]
        a_support: Option<Vec<(f64, f64)>>,
    }

    pub fn spec_to_json(spec: &NetworkSpec) -> serde_json::Value {
        let trivial = spec.channel.readout.a_support
            == vec![SupportPoint {
                value: 1.0,
                prob: 1.0,
            }];
        let j = SpecJson {
            l: spec.depth,
            dims: spec.dims.clone(),
            activation: spec.activation,
            readout: spec.channel.readout.kind,
            rho: spec.channel.rho,
            eps: spec.channel.eps,
            delta: spec.channel.readout.delta,
            a_support: if trivial {
                None
            } else {
                Some(
                    spec.channel
                        .readout
                        .a_support
                        .iter()
                        .map(|p| (p.value, p.prob))
                        .collect(),
                )
            },
        };
        serde_json::to_value(&j).expect("spec serialization cannot fail")
    }

    pub fn spec_from_json(v: &serde_json::Value) -> Result<NetworkSpec> {
        let j: SpecJson = serde_json::from_value(v.clone())
            .map_err(|e| Error::Spec(format!("cannot parse spec: {e}")))?;
        let a_support = j
            .a_support
            .unwrap_or_else(|| vec![(1.0, 1.0)])
            .into_iter()
            .map(|(value, prob)| SupportPoint { value, prob })
            .collect();
        let spec = NetworkSpec {
            depth: j.l,
            dims: j.dims,
            activation: j.activation,
            channel: ChannelParams {
                rho: j.rho,
                eps: j.eps,
                readout: Readout {
                    kind: j.readout,
                    a_support,
                    delta: j.delta,
                },
            },
        };
        Ok(spec)
    }
}

/// Parse and validate a spec from a JSON file on disk.
pub fn load_spec(path: &std::path::Path) -> Result<NetworkSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Spec(format!("cannot read {}: {e}", path.display())))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Spec(format!("bad spec json: {e}")))?;
    let spec = spec_from_json(&v)?;
    validated(&spec)?;
    Ok(spec)
}

/// Convenience constructor used all over the tests and suites: a square
/// architecture with a deterministic readout.
pub fn square_spec(
    depth: usize,
    d: usize,
    activation: Activation,
    rho: f64,
    eps: f64,
    kind: ReadoutKind,
    delta: f64,
) -> NetworkSpec {
    NetworkSpec::new(
        vec![d; depth + 1],
        activation,
        rho,
        eps,
        Readout::deterministic(kind, delta),
    )
}

pub fn streams_for_dataset(streams: &Streams, experiment: &str, instance: u64) -> SeedRecord {
    SeedRecord {
        master: streams.master(),
        labels: vec![
            Streams::label(&format!("{experiment}.teacher"), &[instance]),
            Streams::label(&format!("{experiment}.inputs"), &[instance]),
            Streams::label(&format!("{experiment}.channel"), &[instance]),
        ],
    }
}
