//! Layer-coefficient recursion and channel constants.
//!
//! For an activation φ and Z ~ N(0,1) the per-layer coefficients are
//!
//! ```text
//! σ_0 = 1,  σ_l = E φ²(Z√σ_{l-1}),  ρ_l = E φ'(Z√σ_{l-1}),  ε_l = σ_l − σ_{l-1}·ρ_l²,
//! ```
//!
//! and the aggregates after eliminating layers down to k remaining satisfy
//! `η_{k-1} = η_k·ρ_k`, `γ_{k-1} = η_k²·ε_k + γ_k` with `η_L = ρ`, `γ_L = ε`.
//! Expectations over Z are evaluated with probabilists' Gauss-Hermite
//! quadrature (Golub-Welsch on the Jacobi matrix).

use serde::{Deserialize, Serialize};

use crate::model::{Activation, ChannelParams, NetworkSpec, Readout};
use crate::{Error, Result};

pub const MAX_ORDER: usize = 512;
pub const DEFAULT_ORDER: usize = 80;
const DOUBLING_TOL: f64 = 1e-10;

/// Nodes and weights such that Σ w_i g(x_i) ≈ E g(Z), Z ~ N(0,1); exact for
/// polynomials of degree < 2·order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl QuadratureRule {
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut g: F) -> f64 {
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * g(*x);
        }
        acc
    }
}

/// Symmetric tridiagonal QL with implicit shifts, accumulating only the
/// first row of the eigenvector matrix (all that Golub-Welsch needs).
fn tridiag_ql_first_row(d: &mut [f64], e: &mut [f64], z: &mut [f64]) -> Result<()> {
    let n = d.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(Error::Numeric("tridiagonal QL failed to converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0f64, 1.0f64);
            let mut p = 0.0;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                f = z[i + 1];
                z[i + 1] = s * z[i] + c * f;
                z[i] = c * z[i] - s * f;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Probabilists' Gauss-Hermite rule of the given order.
pub fn gauss_hermite(order: usize) -> Result<QuadratureRule> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::Config(format!(
            "quadrature order {order} outside 1..={MAX_ORDER}"
        )));
    }
    let mut d = vec![0.0; order];
    let mut e: Vec<f64> = (0..order).map(|i| ((i + 1) as f64).sqrt()).collect();
    e[order - 1] = 0.0;
    let mut z = vec![0.0; order];
    z[0] = 1.0;
    tridiag_ql_first_row(&mut d, &mut e, &mut z)?;
    let mut pairs: Vec<(f64, f64)> = d.into_iter().zip(z.into_iter().map(|v| v * v)).collect();
    pairs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // The measure is symmetric; enforce it exactly on the computed rule.
    let n = pairs.len();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-x, w);
        pairs[j] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    Ok(QuadratureRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
        order,
    })
}

/// One layer's (σ, ρ, ε) at a given input scale. The linear activation is
/// evaluated in closed form, which keeps its ε at exactly zero.
pub fn layer_coeffs(
    sigma_prev: f64,
    act: &Activation,
    rule: &QuadratureRule,
) -> Result<(f64, f64, f64)> {
    if !(sigma_prev > 0.0) {
        return Err(Error::Numeric(format!("sigma_prev = {sigma_prev} must be > 0")));
    }
    if let Activation::ScaledLinear(c) = act {
        return Ok((c * c * sigma_prev, *c, 0.0));
    }
    let scale = sigma_prev.sqrt();
    let sigma = rule.expect(|x| act.value(scale * x).powi(2));
    let rho = rule.expect(|x| act.d1(scale * x));
    let eps = sigma - sigma_prev * rho * rho;
    if !sigma.is_finite() || !rho.is_finite() {
        return Err(Error::Numeric("non-finite layer coefficients".into()));
    }
    Ok((sigma, rho, eps))
}

/// Per-layer and aggregated coefficients for a whole architecture.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoeffTable {
    /// σ_0..σ_L.
    pub sigma: Vec<f64>,
    /// ρ_1..ρ_L.
    pub rho_l: Vec<f64>,
    /// ε_1..ε_L.
    pub eps_l: Vec<f64>,
    /// η_0..η_L (η_L = ρ).
    pub eta: Vec<f64>,
    /// γ_0..γ_L (γ_L = ε).
    pub gamma: Vec<f64>,
}

impl CoeffTable {
    pub fn depth(&self) -> usize {
        self.rho_l.len()
    }
}

/// Fill σ, ρ_l, ε_l for l = 1..L, then η_k, γ_k for k = L..0.
pub fn coeff_sequence(spec: &NetworkSpec, rule: &QuadratureRule) -> Result<CoeffTable> {
    let depth = spec.depth;
    let mut sigma = vec![1.0];
    let mut rho_l = Vec::with_capacity(depth);
    let mut eps_l = Vec::with_capacity(depth);
    for l in 1..=depth {
        let (s, r, e) = layer_coeffs(sigma[l - 1], &spec.activation, rule)?;
        sigma.push(s);
        rho_l.push(r);
        eps_l.push(e);
    }
    let mut eta = vec![0.0; depth + 1];
    let mut gamma = vec![0.0; depth + 1];
    eta[depth] = spec.channel.rho;
    gamma[depth] = spec.channel.eps;
    for k in (1..=depth).rev() {
        eta[k - 1] = eta[k] * rho_l[k - 1];
        gamma[k - 1] = eta[k] * eta[k] * eps_l[k - 1] + gamma[k];
    }
    Ok(CoeffTable {
        sigma,
        rho_l,
        eps_l,
        eta,
        gamma,
    })
}

/// Coefficient table with automatic order doubling until two successive
/// refinements agree to 1e-10 everywhere.
pub fn coeff_sequence_auto(spec: &NetworkSpec) -> Result<(CoeffTable, usize)> {
    let mut order = DEFAULT_ORDER;
    let mut table = coeff_sequence(spec, &gauss_hermite(order)?)?;
    while order < MAX_ORDER {
        let next_order = (order * 2).min(MAX_ORDER);
        let next = coeff_sequence(spec, &gauss_hermite(next_order)?)?;
        let diff = table
            .sigma
            .iter()
            .chain(&table.rho_l)
            .chain(&table.eps_l)
            .zip(next.sigma.iter().chain(&next.rho_l).chain(&next.eps_l))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        table = next;
        order = next_order;
        if diff < DOUBLING_TOL {
            break;
        }
    }
    Ok((table, order))
}

/// Infinite-width channel constant: E_Z ∫ dy P_out(y | Z·m) log P_out(y | Z·m)
/// with m² = η_k²·σ_k + γ_k. The y-integral is evaluated through the
/// substitution y = f(x; A) + √Δ·z, so only Gauss-Hermite nodes appear.
pub fn psi_constant(
    eta_k: f64,
    gamma_k: f64,
    sigma_k: f64,
    readout: &Readout,
    rule: &QuadratureRule,
) -> Result<f64> {
    if !(readout.delta > 0.0) {
        return Err(Error::Spec("delta must be > 0".into()));
    }
    let m = (eta_k * eta_k * sigma_k + gamma_k).sqrt();
    let psi = channel_entropy_at_scale(m, readout, rule);
    if !psi.is_finite() {
        return Err(Error::Numeric("psi constant is not finite".into()));
    }
    Ok(psi)
}

/// E_Z ∫ dy P_out(y | Z·m) log P_out(y | Z·m) for a fixed argument scale m,
/// by nested quadrature in the Gaussian-mixture representation.
pub fn channel_entropy_at_scale(m: f64, readout: &Readout, rule: &QuadratureRule) -> f64 {
    let sqrt_delta = readout.delta.sqrt();
    let mut psi = 0.0;
    for (xz, wz) in rule.nodes.iter().zip(&rule.weights) {
        let x = m * xz;
        let mut inner = 0.0;
        for p in &readout.a_support {
            let f = readout.f(x, p.value);
            let mut iy = 0.0;
            for (xy, wy) in rule.nodes.iter().zip(&rule.weights) {
                iy += wy * readout.log_density(f + sqrt_delta * xy, x);
            }
            inner += p.prob * iy;
        }
        psi += wz * inner;
    }
    psi
}

/// Limit of I(ξ*; data | teacher)/n: the difference between the channel
/// entropy with ξ marginalized out of the density and the entropy of the
/// channel at the combined argument variance.
pub fn xi_mi_constant(
    channel: &ChannelParams,
    sigma_top: f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    let readout = &channel.readout;
    if !(readout.delta > 0.0) {
        return Err(Error::Spec("delta must be > 0".into()));
    }
    if channel.eps == 0.0 {
        return Ok(0.0);
    }
    if matches!(readout.kind, crate::model::ReadoutKind::Zero) {
        return Ok(0.0);
    }
    let m1 = (channel.rho * channel.rho * sigma_top).sqrt();
    // Entropy term at the combined variance: reuse the Ψ quadrature.
    let e2 = psi_constant(channel.rho, channel.eps, sigma_top, readout, rule)?;

    // ξ-marginalized channel: a finite mixture over (A, ξ-node).
    let xi_rule = gauss_hermite(rule.order.min(40))?;
    let sqrt_eps = channel.eps.sqrt();
    let sqrt_delta = readout.delta.sqrt();
    let mut e1 = 0.0;
    for (xz, wz) in rule.nodes.iter().zip(&rule.weights) {
        let v = m1 * xz;
        // Mixture components of P̃(· | v) = E_ξ P_out(· | v + √ε ξ).
        let mut comp_mu = Vec::with_capacity(readout.a_support.len() * xi_rule.order);
        let mut comp_logw = Vec::with_capacity(comp_mu.capacity());
        for p in &readout.a_support {
            for (xk, wk) in xi_rule.nodes.iter().zip(&xi_rule.weights) {
                comp_mu.push(readout.f(v + sqrt_eps * xk, p.value));
                comp_logw.push((p.prob * wk).ln());
            }
        }
        let log_mix = |y: f64| -> f64 {
            let terms: Vec<f64> = comp_mu
                .iter()
                .zip(&comp_logw)
                .map(|(mu, lw)| lw + crate::stats::normal_logpdf(y, *mu, readout.delta))
                .collect();
            crate::stats::log_sum_exp(&terms)
        };
        let mut acc = 0.0;
        for (mu, lw) in comp_mu.iter().zip(&comp_logw) {
            let mut iy = 0.0;
            for (xy, wy) in rule.nodes.iter().zip(&rule.weights) {
                iy += wy * log_mix(mu + sqrt_delta * xy);
            }
            acc += lw.exp() * iy;
        }
        e1 += wz * acc;
    }
    Ok(e2 - e1)
}
