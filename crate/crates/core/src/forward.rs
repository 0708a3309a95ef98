//! Forward propagation through a weight set, channel-argument computation,
//! label sampling, dataset generation, and the interpolated channel used by
//! the free-entropy path experiments.
//!
//! Every matrix-vector product carries the 1/√d_in normalization, and every
//! column is propagated independently with a fixed summation order, so
//! batched and one-by-one propagation agree bit for bit.

use ndarray::{Array1, Array2, ArrayView1};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{
    streams_for_dataset, ChannelParams, Dataset, Latents, NetworkSpec, Readout, Weights,
};
use crate::rng::{fill_normal, Streams};
use crate::{Error, Result};

/// Hidden representations for a batch: `layers[l]` is d_l × n, `layers[0]`
/// is the input itself.
#[derive(Clone, Debug)]
pub struct PostActivations {
    pub layers: Vec<Array2<f64>>,
}

impl PostActivations {
    pub fn top(&self) -> &Array2<f64> {
        self.layers.last().unwrap()
    }

    pub fn n(&self) -> usize {
        self.layers[0].ncols()
    }
}

/// The per-sample scalar feeding the output channel.
#[derive(Clone, Debug)]
pub struct ChannelArgument {
    pub s: Array1<f64>,
}

/// w·x with a plain sequential accumulation (deterministic order).
fn dot(w: ArrayView1<f64>, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in w.iter().zip(x) {
        acc += a * b;
    }
    acc
}

/// One layer applied to one column: φ(W x / √d_in).
fn layer_column(w: &Array2<f64>, x: &[f64], act: &crate::model::Activation, out: &mut [f64]) {
    let scale = 1.0 / (w.ncols() as f64).sqrt();
    for (i, o) in out.iter_mut().enumerate() {
        *o = act.value(dot(w.row(i), x) * scale);
    }
}

/// Same, also returning the preactivations W x / √d_in (needed by the
/// moment suites and by gradient computations).
fn layer_column_pre(
    w: &Array2<f64>,
    x: &[f64],
    act: &crate::model::Activation,
    pre: &mut [f64],
    out: &mut [f64],
) {
    let scale = 1.0 / (w.ncols() as f64).sqrt();
    for i in 0..out.len() {
        pre[i] = dot(w.row(i), x) * scale;
        out[i] = act.value(pre[i]);
    }
}

fn check_shapes(x0: &Array2<f64>, weights: &Weights, spec: &NetworkSpec) -> Result<()> {
    if x0.nrows() != spec.input_dim() {
        return Err(Error::Shape(format!(
            "input rows {} != d_0 {}",
            x0.nrows(),
            spec.input_dim()
        )));
    }
    if !weights.shape_matches(spec) {
        return Err(Error::Shape("weights do not match spec dims".into()));
    }
    Ok(())
}

/// Propagate a d_0 × n input batch: layers[l] = φ(W^(l) layers[l-1]/√d_{l-1}).
pub fn propagate(x0: &Array2<f64>, weights: &Weights, spec: &NetworkSpec) -> Result<PostActivations> {
    check_shapes(x0, weights, spec)?;
    let n = x0.ncols();
    let mut layers = Vec::with_capacity(spec.depth + 1);
    layers.push(x0.clone());
    let mut col = Vec::new();
    for l in 1..=spec.depth {
        let w = &weights.hidden[l - 1];
        let d_out = spec.dims[l];
        let mut out = Array2::zeros((d_out, n));
        let prev = &layers[l - 1];
        for j in 0..n {
            col.clear();
            col.extend(prev.column(j).iter());
            let mut out_col = vec![0.0; d_out];
            layer_column(w, &col, &spec.activation, &mut out_col);
            for i in 0..d_out {
                out[(i, j)] = out_col[i];
            }
        }
        layers.push(out);
    }
    Ok(PostActivations { layers })
}

/// Propagation that also returns per-layer preactivations (index l-1 holds
/// W^(l) x^(l-1)/√d_{l-1}).
pub fn propagate_with_preacts(
    x0: &Array2<f64>,
    weights: &Weights,
    spec: &NetworkSpec,
) -> Result<(PostActivations, Vec<Array2<f64>>)> {
    check_shapes(x0, weights, spec)?;
    let n = x0.ncols();
    let mut layers = Vec::with_capacity(spec.depth + 1);
    let mut preacts = Vec::with_capacity(spec.depth);
    layers.push(x0.clone());
    let mut col = vec![0.0; 0];
    for l in 1..=spec.depth {
        let w = &weights.hidden[l - 1];
        let d_out = spec.dims[l];
        let mut pre = Array2::zeros((d_out, n));
        let mut out = Array2::zeros((d_out, n));
        let prev = &layers[l - 1];
        for j in 0..n {
            col.clear();
            col.extend(prev.column(j).iter());
            let mut pre_col = vec![0.0; d_out];
            let mut out_col = vec![0.0; d_out];
            layer_column_pre(w, &col, &spec.activation, &mut pre_col, &mut out_col);
            for i in 0..d_out {
                pre[(i, j)] = pre_col[i];
                out[(i, j)] = out_col[i];
            }
        }
        preacts.push(pre);
        layers.push(out);
    }
    Ok((PostActivations { layers }, preacts))
}

/// s_μ = ρ·aᵀX^(L)_μ/√d_L + √ε·ξ*_μ.
pub fn channel_argument(
    post: &PostActivations,
    readout_weights: &Array1<f64>,
    channel: &ChannelParams,
    xi: Option<&Array1<f64>>,
) -> Result<ChannelArgument> {
    let top = post.top();
    if readout_weights.len() != top.nrows() {
        return Err(Error::Shape(format!(
            "readout length {} != top dim {}",
            readout_weights.len(),
            top.nrows()
        )));
    }
    let n = top.ncols();
    if channel.eps > 0.0 {
        match xi {
            Some(x) if x.len() == n => {}
            _ => return Err(Error::Shape("eps > 0 requires xi of length n".into())),
        }
    }
    let scale = channel.rho / (top.nrows() as f64).sqrt();
    let mut s = Array1::zeros(n);
    let a: Vec<f64> = readout_weights.iter().cloned().collect();
    for j in 0..n {
        let mut acc = 0.0;
        for (i, ai) in a.iter().enumerate() {
            acc += ai * top[(i, j)];
        }
        s[j] = acc * scale;
        if channel.eps > 0.0 {
            s[j] += channel.eps.sqrt() * xi.unwrap()[j];
        }
    }
    Ok(ChannelArgument { s })
}

/// Labels with their latent draws.
#[derive(Clone, Debug)]
pub struct SampledLabels {
    pub y: Array1<f64>,
    pub a_draw: Vec<f64>,
    pub z: Vec<f64>,
}

/// Y_μ = f(s_μ; A_μ) + √Δ·Z_μ.
pub fn sample_labels(
    s: &ChannelArgument,
    readout: &Readout,
    rng: &mut ChaCha8Rng,
) -> Result<SampledLabels> {
    if !(readout.delta > 0.0) {
        return Err(Error::Spec("delta must be > 0".into()));
    }
    let n = s.s.len();
    let mut y = Array1::zeros(n);
    let mut a_draw = vec![0.0; n];
    let mut z = vec![0.0; n];
    let sqrt_delta = readout.delta.sqrt();
    for mu in 0..n {
        let a = draw_support(readout, rng);
        let zz: f64 = StandardNormal.sample(rng);
        a_draw[mu] = a;
        z[mu] = zz;
        y[mu] = readout.f(s.s[mu], a) + sqrt_delta * zz;
    }
    Ok(SampledLabels { y, a_draw, z })
}

fn draw_support(readout: &Readout, rng: &mut ChaCha8Rng) -> f64 {
    if readout.a_support.len() == 1 {
        return readout.a_support[0].value;
    }
    let u: f64 = rand::Rng::random(rng);
    let mut acc = 0.0;
    for p in &readout.a_support {
        acc += p.prob;
        if u <= acc {
            return p.value;
        }
    }
    readout.a_support.last().unwrap().value
}

/// Fresh teacher plus a dataset of size n drawn through its channel.
/// Sub-streams are labelled per purpose so the pair is replayable.
pub fn sample_dataset(
    spec: &NetworkSpec,
    n: usize,
    streams: &Streams,
    experiment: &str,
    instance: u64,
) -> Result<(Weights, Dataset)> {
    let teacher = crate::model::sample_teacher(
        spec,
        &mut streams.stream(&format!("{experiment}.teacher"), &[instance]),
    );
    let mut x0 = vec![0.0; spec.input_dim() * n];
    fill_normal(
        &mut streams.stream(&format!("{experiment}.inputs"), &[instance]),
        &mut x0,
    );
    let inputs = Array2::from_shape_vec((spec.input_dim(), n), x0).unwrap();
    let mut chan_rng = streams.stream(&format!("{experiment}.channel"), &[instance]);
    let xi = if spec.channel.eps > 0.0 {
        let mut v = vec![0.0; n];
        fill_normal(&mut chan_rng, &mut v);
        Some(Array1::from_vec(v))
    } else {
        None
    };
    let post = propagate(&inputs, &teacher, spec)?;
    let s = channel_argument(&post, &teacher.readout, &spec.channel, xi.as_ref())?;
    let labels = sample_labels(&s, &spec.channel.readout, &mut chan_rng)?;
    let dataset = Dataset {
        inputs,
        labels: labels.y,
        latents: Some(Latents {
            xi: xi.map(|v| v.to_vec()),
            a_draw: labels.a_draw,
            z: labels.z,
        }),
        seed_record: streams_for_dataset(streams, experiment, instance),
    };
    Ok((teacher, dataset))
}

/// The interpolated channel argument of the layer-elimination path.
#[derive(Clone, Debug)]
pub struct InterpArgument {
    pub t: f64,
    pub s_t: Array1<f64>,
}

/// S_{tμ} = √(1-t)·aᵀX^(L)_μ/√d_L + √t·ρ_L·vᵀX^(L-1)_μ/√d_{L-1} + √(t·ε_L)·ζ_μ.
///
/// The convention here is ρ = 1, ε = 0: the interpolation normalizes the
/// outer channel scales away. At t = 0 this is exactly the L-layer channel
/// argument; at t = 1 exactly the one-step-reduced argument with (ρ_L, ε_L).
pub fn interp_channel_argument(
    t: f64,
    post: &PostActivations,
    readout_weights: &Array1<f64>,
    v: &Array1<f64>,
    zeta: &Array1<f64>,
    coeffs: (f64, f64),
) -> Result<InterpArgument> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("t = {t} outside [0, 1]")));
    }
    if post.layers.len() < 2 {
        return Err(Error::Shape("interpolation needs at least one hidden layer".into()));
    }
    let (rho_l, eps_l) = coeffs;
    let top = post.top();
    let below = &post.layers[post.layers.len() - 2];
    let n = top.ncols();
    if readout_weights.len() != top.nrows() || v.len() != below.nrows() || zeta.len() != n {
        return Err(Error::Shape("interp argument lengths inconsistent".into()));
    }
    let w_top = (1.0 - t).sqrt() / (top.nrows() as f64).sqrt();
    let w_mid = t.sqrt() * rho_l / (below.nrows() as f64).sqrt();
    let w_noise = (t * eps_l).sqrt();
    let mut s_t = Array1::zeros(n);
    for j in 0..n {
        let mut acc_top = 0.0;
        for (i, ai) in readout_weights.iter().enumerate() {
            acc_top += ai * top[(i, j)];
        }
        let mut acc_mid = 0.0;
        for (i, vi) in v.iter().enumerate() {
            acc_mid += vi * below[(i, j)];
        }
        s_t[j] = w_top * acc_top + w_mid * acc_mid + w_noise * zeta[j];
    }
    Ok(InterpArgument { t, s_t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{square_spec, Activation, ReadoutKind, Readout};
    use approx::assert_abs_diff_eq;

    fn streams() -> Streams {
        Streams::new(1234)
    }

    #[test]
    fn linear_propagation_extracts_column() {
        // ScaledLinear(1), X0 = e_1·√d_0: layers[1] equals the first column of W.
        let d = 4;
        let spec = square_spec(1, d, Activation::ScaledLinear(1.0), 1.0, 0.0, ReadoutKind::Linear, 1.0);
        let teacher = crate::model::sample_teacher(&spec, &mut streams().stream("t", &[0]));
        let mut x0 = Array2::zeros((d, 1));
        x0[(0, 0)] = (d as f64).sqrt();
        let post = propagate(&x0, &teacher, &spec).unwrap();
        for i in 0..d {
            assert_abs_diff_eq!(post.layers[1][(i, 0)], teacher.hidden[0][(i, 0)], epsilon = 1e-12);
        }
    }

    #[test]
    fn tanh_outputs_in_open_unit_interval() {
        let spec = square_spec(1, 8, Activation::Tanh, 1.0, 0.0, ReadoutKind::Linear, 1.0);
        let teacher = crate::model::sample_teacher(&spec, &mut streams().stream("t", &[1]));
        let mut x0 = vec![0.0; 8 * 5];
        fill_normal(&mut streams().stream("x", &[1]), &mut x0);
        let x0 = Array2::from_shape_vec((8, 5), x0).unwrap();
        let post = propagate(&x0, &teacher, &spec).unwrap();
        assert!(post.layers[1].iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn tanh_second_moment_matches_quadrature() {
        // d_0 = d_1 = 512: mean over units of (X^(1)_i)² ≈ E tanh²(Z) = 0.3943.
        let d = 512;
        let spec = square_spec(1, d, Activation::Tanh, 1.0, 0.0, ReadoutKind::Linear, 1.0);
        let teacher = crate::model::sample_teacher(&spec, &mut streams().stream("t", &[2]));
        let mut x0 = vec![0.0; d];
        fill_normal(&mut streams().stream("x", &[2]), &mut x0);
        let x0 = Array2::from_shape_vec((d, 1), x0).unwrap();
        let post = propagate(&x0, &teacher, &spec).unwrap();
        let m: f64 = post.layers[1].column(0).iter().map(|v| v * v).sum::<f64>() / d as f64;
        assert!((m - 0.3943).abs() < 0.02, "second moment {m}");
    }

    #[test]
    fn column_independence_is_bit_exact() {
        let spec = square_spec(2, 16, Activation::Tanh, 1.0, 0.0, ReadoutKind::Linear, 1.0);
        let teacher = crate::model::sample_teacher(&spec, &mut streams().stream("t", &[3]));
        let mut buf = vec![0.0; 16 * 7];
        fill_normal(&mut streams().stream("x", &[3]), &mut buf);
        let x0 = Array2::from_shape_vec((16, 7), buf).unwrap();
        let joint = propagate(&x0, &teacher, &spec).unwrap();
        for j in 0..7 {
            let col = x0.column(j).insert_axis(ndarray::Axis(1)).to_owned();
            let single = propagate(&col, &teacher, &spec).unwrap();
            for l in 0..=2 {
                for i in 0..16 {
                    assert_eq!(joint.layers[l][(i, j)], single.layers[l][(i, 0)]);
                }
            }
        }
    }

    #[test]
    fn channel_argument_zero_and_scaling() {
        let d = 8;
        let spec = square_spec(1, d, Activation::Tanh, 1.0, 0.0, ReadoutKind::Linear, 1.0);
        let teacher = crate::model::sample_teacher(&spec, &mut streams().stream("t", &[4]));
        let mut buf = vec![0.0; d * 3];
        fill_normal(&mut streams().stream("x", &[4]), &mut buf);
        let x0 = Array2::from_shape_vec((d, 3), buf).unwrap();
        let post = propagate(&x0, &teacher, &spec).unwrap();

        let zeros = Array1::zeros(d);
        let s0 = channel_argument(&post, &zeros, &spec.channel, None).unwrap();
        assert!(s0.s.iter().all(|v| *v == 0.0));

        let mut chan2 = spec.channel.clone();
        chan2.rho = 2.0;
        let s1 = channel_argument(&post, &teacher.readout, &spec.channel, None).unwrap();
        let s2 = channel_argument(&post, &teacher.readout, &chan2, None).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(s2.s[j], 2.0 * s1.s[j], epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_readout_labels_are_noise() {
        let s = ChannelArgument {
            s: Array1::from_vec(vec![3.0, -2.0, 0.5]),
        };
        let readout = Readout::deterministic(ReadoutKind::Zero, 1.0);
        let lab = sample_labels(&s, &readout, &mut streams().stream("l", &[0])).unwrap();
        for mu in 0..3 {
            assert_abs_diff_eq!(lab.y[mu], lab.z[mu], epsilon = 1e-15);
        }
    }

    #[test]
    fn tiny_delta_labels_track_signal() {
        let s = ChannelArgument {
            s: Array1::from_vec(vec![0.7; 64]),
        };
        let readout = Readout::deterministic(ReadoutKind::Linear, 1e-6);
        let lab = sample_labels(&s, &readout, &mut streams().stream("l", &[1])).unwrap();
        for mu in 0..64 {
            assert!((lab.y[mu] - 0.7).abs() < 3e-3);
        }
    }

    #[test]
    fn label_variance_matches_delta() {
        let n = 100_000;
        let s = ChannelArgument {
            s: Array1::zeros(n),
        };
        let readout = Readout::deterministic(ReadoutKind::Linear, 0.25);
        let lab = sample_labels(&s, &readout, &mut streams().stream("l", &[2])).unwrap();
        let v = crate::stats::variance(&lab.y.to_vec());
        assert!((v - 0.25).abs() < 0.005, "Var(Y) = {v}");
    }

    #[test]
    fn delta_zero_rejected() {
        let s = ChannelArgument {
            s: Array1::zeros(1),
        };
        let readout = Readout::deterministic(ReadoutKind::Linear, 0.0);
        assert!(sample_labels(&s, &readout, &mut streams().stream("l", &[3])).is_err());
    }

    #[test]
    fn empty_dataset_still_samples_teacher() {
        let spec = square_spec(1, 4, Activation::Tanh, 1.0, 0.0, ReadoutKind::Linear, 0.5);
        let (teacher, data) = sample_dataset(&spec, 0, &streams(), "empty", 0).unwrap();
        assert_eq!(data.n(), 0);
        assert_eq!(teacher.readout.len(), 4);
    }

    #[test]
    fn dataset_replays_exactly() {
        let spec = square_spec(1, 6, Activation::Erf, 1.0, 0.3, ReadoutKind::Linear, 0.5);
        let (t1, d1) = sample_dataset(&spec, 9, &streams(), "rep", 5).unwrap();
        let (t2, d2) = sample_dataset(&spec, 9, &streams(), "rep", 5).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(d1.inputs, d2.inputs);
        assert_eq!(d1.labels, d2.labels);
    }

    #[test]
    fn input_moments() {
        let spec = square_spec(0, 256, Activation::Tanh, 1.0, 0.0, ReadoutKind::Linear, 0.5);
        let (_, data) = sample_dataset(&spec, 512, &streams(), "mom", 0).unwrap();
        let entries: Vec<f64> = data.inputs.iter().cloned().collect();
        let m = crate::stats::mean(&entries);
        assert!(m.abs() < 0.01, "mean {m}");
    }

    #[test]
    fn interp_endpoints_exact() {
        let d = 12;
        let n = 5;
        let spec = square_spec(1, d, Activation::Tanh, 1.0, 0.0, ReadoutKind::Linear, 0.5);
        let teacher = crate::model::sample_teacher(&spec, &mut streams().stream("t", &[9]));
        let mut buf = vec![0.0; d * n];
        fill_normal(&mut streams().stream("x", &[9]), &mut buf);
        let x0 = Array2::from_shape_vec((d, n), buf).unwrap();
        let post = propagate(&x0, &teacher, &spec).unwrap();
        let mut vbuf = vec![0.0; d];
        fill_normal(&mut streams().stream("v", &[9]), &mut vbuf);
        let v = Array1::from_vec(vbuf);
        let mut zbuf = vec![0.0; n];
        fill_normal(&mut streams().stream("z", &[9]), &mut zbuf);
        let zeta = Array1::from_vec(zbuf);
        let coeffs = (0.605, 0.0274);

        let s0 = interp_channel_argument(0.0, &post, &teacher.readout, &v, &zeta, coeffs).unwrap();
        let chan = crate::model::ChannelParams {
            rho: 1.0,
            eps: 0.0,
            readout: spec.channel.readout.clone(),
        };
        let direct = channel_argument(&post, &teacher.readout, &chan, None).unwrap();
        for j in 0..n {
            assert_abs_diff_eq!(s0.s_t[j], direct.s[j], epsilon = 1e-15);
        }

        let s1 = interp_channel_argument(1.0, &post, &teacher.readout, &v, &zeta, coeffs).unwrap();
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..d {
                acc += v[i] * post.layers[0][(i, j)];
            }
            let expect = coeffs.0 * acc / (d as f64).sqrt() + coeffs.1.sqrt() * zeta[j];
            assert_abs_diff_eq!(s1.s_t[j], expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn interp_t_out_of_range_rejected() {
        let spec = square_spec(1, 4, Activation::Tanh, 1.0, 0.0, ReadoutKind::Linear, 0.5);
        let teacher = crate::model::sample_teacher(&spec, &mut streams().stream("t", &[10]));
        let x0 = Array2::zeros((4, 2));
        let post = propagate(&x0, &teacher, &spec).unwrap();
        let v = Array1::zeros(4);
        let zeta = Array1::zeros(2);
        assert!(
            interp_channel_argument(1.5, &post, &teacher.readout, &v, &zeta, (1.0, 0.0)).is_err()
        );
    }

    #[test]
    fn scaled_linear_interp_variances_match() {
        // With φ = id both endpoints are Gaussian with variance ‖x‖²/d.
        let d = 256;
        let n_draws = 4000;
        let spec = square_spec(1, d, Activation::ScaledLinear(1.0), 1.0, 0.0, ReadoutKind::Linear, 0.5);
        let st = streams();
        let mut v0 = Vec::with_capacity(n_draws);
        let mut v1 = Vec::with_capacity(n_draws);
        for i in 0..n_draws {
            let teacher = crate::model::sample_teacher(&spec, &mut st.stream("t", &[11, i as u64]));
            let mut xb = vec![0.0; d];
            fill_normal(&mut st.stream("x", &[11, i as u64]), &mut xb);
            let x0 = Array2::from_shape_vec((d, 1), xb).unwrap();
            let post = propagate(&x0, &teacher, &spec).unwrap();
            let mut vb = vec![0.0; d];
            fill_normal(&mut st.stream("v", &[11, i as u64]), &mut vb);
            let v = Array1::from_vec(vb);
            let zeta = Array1::zeros(1);
            let s0 =
                interp_channel_argument(0.0, &post, &teacher.readout, &v, &zeta, (1.0, 0.0)).unwrap();
            let s1 =
                interp_channel_argument(1.0, &post, &teacher.readout, &v, &zeta, (1.0, 0.0)).unwrap();
            v0.push(s0.s_t[0]);
            v1.push(s1.s_t[0]);
        }
        let var0 = crate::stats::variance(&v0);
        let var1 = crate::stats::variance(&v1);
        assert!(
            (var0 - var1).abs() < 5.0 / (d as f64).sqrt(),
            "var0 {var0} var1 {var1}"
        );
    }
}
