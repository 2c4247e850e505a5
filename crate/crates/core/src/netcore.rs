//! Dense feed-forward networks with explicit forward and reverse passes.
//!
//! Parameters are stored per layer as a row-major `out x in` weight matrix and
//! a bias vector. The flat parameter order used by [`DenseNet::params`] and by
//! gradient buffers is layer by layer, weights then bias.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Logistic,
}

impl Activation {
    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Identity => a,
            Activation::Relu => a.max(0.0),
            Activation::Tanh => a.tanh(),
            Activation::Logistic => logistic(a),
        }
    }

    /// Derivative at pre-activation `a`. The relu subgradient at 0 is 0.
    #[inline]
    pub fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => sech2(a),
            Activation::Logistic => logistic_derivative(a),
        }
    }
}

/// Logistic function `1 / (1 + e^-s)`, evaluated without overflow.
#[inline]
pub fn logistic(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn logistic_derivative(s: f64) -> f64 {
    let e = (-s.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// `1 - tanh^2(a)` as `1 / cosh^2(a)`, which stays positive where
/// `tanh(a)` has already rounded to 1.
#[inline]
pub fn sech2(a: f64) -> f64 {
    let c = a.cosh();
    1.0 / (c * c)
}

/// `log(1 + e^s)`.
#[inline]
pub fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

/// Max-subtracted softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    v.iter().map(|&x| x - lse).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let layer = Self { in_dim, out_dim, activation, weights, bias };
        layer.validate()?;
        Ok(layer)
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self { in_dim, out_dim, activation, weights: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    /// He-scaled Gaussian weights for relu, Glorot-style otherwise; zero bias.
    pub fn random(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut Rng) -> Self {
        let scale = match activation {
            Activation::Relu => (2.0 / in_dim as f64).sqrt(),
            _ => (1.0 / in_dim as f64).sqrt(),
        };
        let weights = (0..in_dim * out_dim)
            .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        Self { in_dim, out_dim, activation, weights, bias: vec![0.0; out_dim] }
    }

    fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(invalid("layer dimensions must be positive"));
        }
        if self.weights.len() != self.in_dim * self.out_dim || self.bias.len() != self.out_dim {
            return Err(invalid(format!(
                "layer {}x{} has {} weights and {} biases",
                self.out_dim,
                self.in_dim,
                self.weights.len(),
                self.bias.len()
            )));
        }
        if !self.weights.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(invalid("non-finite layer parameter"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.in_dim)) {
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        out
    }
}

/// Activations recorded by [`DenseNet::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the network input.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pub pre: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter and input gradients of one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub param_grads: Vec<LayerGradient>,
    pub input_grad: Vec<f64>,
}

impl GradientBundle {
    /// Parameter gradients in the flat order of [`DenseNet::params`].
    pub fn flat_params(&self) -> Vec<f64> {
        self.param_grads
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

impl DenseNet {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("network needs at least one layer"));
        }
        for l in &layers {
            l.validate()?;
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(invalid(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Random network with the given layer widths (`dims[0]` is the input) and
    /// one activation per layer.
    pub fn random(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || activations.len() + 1 != dims.len() {
            return Err(invalid("need one activation per layer and at least one layer"));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &a)| DenseLayer::random(d[0], d[1], a, rng))
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(invalid(format!("expected {} parameters, got {}", self.param_count(), params.len())));
        }
        if !params.iter().all(|v| v.is_finite()) {
            return Err(invalid("non-finite parameter"));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(invalid(format!("input has {} features, network expects {}", x.len(), self.input_dim())));
        }
        Ok(())
    }

    /// Output only.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l.affine(&h).into_iter().map(|a| l.activation.apply(a)).collect();
        }
        Ok(h)
    }

    /// Output plus the activations needed by [`DenseNet::backward`].
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for l in &self.layers {
            let a = l.affine(&h);
            let out: Vec<f64> = a.iter().map(|&v| l.activation.apply(v)).collect();
            inputs.push(h);
            pre.push(a);
            h = out;
        }
        Ok((h, ForwardCache { inputs, pre }))
    }

    fn check_cache(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<()> {
        if cache.inputs.len() != self.layers.len() || cache.pre.len() != self.layers.len() {
            return Err(invalid("forward cache does not match network depth"));
        }
        for (l, (i, p)) in self.layers.iter().zip(cache.inputs.iter().zip(&cache.pre)) {
            if i.len() != l.in_dim || p.len() != l.out_dim {
                return Err(invalid("forward cache does not match layer shapes"));
            }
        }
        if upstream.len() != self.output_dim() {
            return Err(invalid(format!(
                "upstream gradient has length {}, network output is {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Gradients of `output . upstream` with respect to every parameter and the input.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<GradientBundle> {
        let mut flat = vec![0.0; self.param_count()];
        let input_grad = self.backward_accumulate(cache, upstream, &mut flat)?;
        let mut off = 0;
        let param_grads = self
            .layers
            .iter()
            .map(|l| {
                let w = flat[off..off + l.weights.len()].to_vec();
                off += l.weights.len();
                let b = flat[off..off + l.bias.len()].to_vec();
                off += l.bias.len();
                LayerGradient { weights: w, bias: b }
            })
            .collect();
        Ok(GradientBundle { param_grads, input_grad })
    }

    /// Adds parameter gradients into `acc` (flat order) and returns the input gradient.
    pub fn backward_accumulate(&self, cache: &ForwardCache, upstream: &[f64], acc: &mut [f64]) -> Result<Vec<f64>> {
        if acc.len() != self.param_count() {
            return Err(invalid("gradient buffer has the wrong length"));
        }
        self.backward_impl(cache, upstream, Some(acc))
    }

    /// Input gradient only; skips the parameter gradients.
    pub fn backward_input(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Vec<f64>> {
        self.backward_impl(cache, upstream, None)
    }

    fn backward_impl(&self, cache: &ForwardCache, upstream: &[f64], mut acc: Option<&mut [f64]>) -> Result<Vec<f64>> {
        self.check_cache(cache, upstream)?;
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.param_count();
        }
        let mut grad = upstream.to_vec();
        for (idx, l) in self.layers.iter().enumerate().rev() {
            let delta: Vec<f64> = grad
                .iter()
                .zip(&cache.pre[idx])
                .map(|(g, &a)| g * l.activation.derivative(a))
                .collect();
            if let Some(acc) = acc.as_deref_mut() {
                let input = &cache.inputs[idx];
                let base = offsets[idx];
                let (wg, bg) = acc[base..base + l.param_count()].split_at_mut(l.weights.len());
                for (o, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        let row = &mut wg[o * l.in_dim..(o + 1) * l.in_dim];
                        for (w, &v) in row.iter_mut().zip(input) {
                            *w += d * v;
                        }
                    }
                    bg[o] += d;
                }
            }
            let mut next = vec![0.0; l.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    for (n, &w) in next.iter_mut().zip(&l.weights[o * l.in_dim..(o + 1) * l.in_dim]) {
                        *n += d * w;
                    }
                }
            }
            grad = next;
        }
        Ok(grad)
    }

    /// Smallest `|pre-activation|` over relu units for input `x`; used to keep
    /// finite-difference probes away from kinks.
    pub fn relu_margin(&self, x: &[f64]) -> Result<f64> {
        let (_, cache) = self.forward(x)?;
        let mut margin = f64::INFINITY;
        for (l, pre) in self.layers.iter().zip(&cache.pre) {
            if l.activation == Activation::Relu {
                for &a in pre {
                    margin = margin.min(a.abs());
                }
            }
        }
        Ok(margin)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: DenseNet = serde_json::from_str(text)?;
        Self::new(raw.layers)
    }
}

/// Result of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffReport {
    pub passed: bool,
    pub max_rel_error: f64,
    /// Index into params followed by inputs of the worst entry.
    pub worst_index: usize,
    pub checked: usize,
}

/// Relative error with a floor on the denominator so entries that are zero in
/// both gradients compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Checks parameter and input gradients of `loss_fn(net(x))`.
///
/// `loss_fn` returns the loss and its gradient with respect to the network
/// output. Parameters come first in `worst_index`, then inputs.
pub fn finite_diff_check<L>(net: &DenseNet, x: &[f64], loss_fn: L, step: f64, tol: f64) -> Result<FiniteDiffReport>
where
    L: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (out, cache) = net.forward(x)?;
    let (_, upstream) = loss_fn(&out);
    let bundle = net.backward(&cache, &upstream)?;
    let mut analytic = bundle.flat_params();
    analytic.extend_from_slice(&bundle.input_grad);
    check_against_central_differences(net, x, &loss_fn, &analytic, step, tol)
}

/// Same as [`finite_diff_check`] but with caller-supplied analytic gradients
/// (params then inputs), so corrupted gradients can be fed in.
pub fn check_against_central_differences<L>(
    net: &DenseNet,
    x: &[f64],
    loss_fn: &L,
    analytic: &[f64],
    step: f64,
    tol: f64,
) -> Result<FiniteDiffReport>
where
    L: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let np = net.param_count();
    if analytic.len() != np + x.len() {
        return Err(Error::InvalidArgument("analytic gradient has the wrong length".into()));
    }
    let eval = |n: &DenseNet, input: &[f64]| -> Result<f64> { Ok(loss_fn(&n.apply(input)?).0) };
    let params = net.params();
    let mut probe = net.clone();
    let mut worst = (0.0f64, 0usize);
    for i in 0..np {
        let mut p = params.clone();
        p[i] = params[i] + step;
        probe.set_params(&p)?;
        let up = eval(&probe, x)?;
        p[i] = params[i] - step;
        probe.set_params(&p)?;
        let down = eval(&probe, x)?;
        let numeric = (up - down) / (2.0 * step);
        let e = relative_error(analytic[i], numeric);
        if e > worst.0 {
            worst = (e, i);
        }
    }
    for j in 0..x.len() {
        let mut xp = x.to_vec();
        xp[j] = x[j] + step;
        let up = eval(net, &xp)?;
        xp[j] = x[j] - step;
        let down = eval(net, &xp)?;
        let numeric = (up - down) / (2.0 * step);
        let e = relative_error(analytic[np + j], numeric);
        if e > worst.0 {
            worst = (e, np + j);
        }
    }
    Ok(FiniteDiffReport { passed: worst.0 <= tol, max_rel_error: worst.0, worst_index: worst.1, checked: np + x.len() })
}

/// Shifts any input whose first-layer relu pre-activations sit within
/// `margin` of zero, by resampling a small random nudge. Returns `None` when no
/// nudge in 100 tries clears every kink.
pub fn nudge_off_kinks(net: &DenseNet, x: &[f64], margin: f64, rng: &mut Rng) -> Result<Option<Vec<f64>>> {
    if net.relu_margin(x)? > margin {
        return Ok(Some(x.to_vec()));
    }
    for _ in 0..100 {
        let candidate: Vec<f64> = x.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect();
        if net.relu_margin(&candidate)? > margin {
            return Ok(Some(candidate));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn half_squared(out: &[f64]) -> (f64, Vec<f64>) {
        (0.5 * out.iter().map(|v| v * v).sum::<f64>(), out.to_vec())
    }

    #[test]
    fn identity_net_is_identity() {
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let net = DenseNet::new(vec![DenseLayer::new(3, 3, Activation::Identity, w, vec![0.0; 3]).unwrap()]).unwrap();
        assert_eq!(net.apply(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn logistic_unit_at_zero() {
        let net = DenseNet::new(vec![DenseLayer::zeros(1, 1, Activation::Logistic)]).unwrap();
        assert_eq!(net.apply(&[3.0]).unwrap(), vec![0.5]);
        assert_eq!(logistic(0.0), 0.5);
        assert!(net.apply(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn two_layer_matches_hand_multiplication() {
        let l1 = DenseLayer::new(2, 2, Activation::Relu, vec![1.0, -2.0, 0.5, 3.0], vec![0.1, -0.2]).unwrap();
        let l2 = DenseLayer::new(2, 1, Activation::Tanh, vec![0.7, -1.1], vec![0.05]).unwrap();
        let net = DenseNet::new(vec![l1, l2]).unwrap();
        let x = [0.3, -0.4];
        // hidden: relu(0.3 + 0.8 + 0.1) = 1.2 ; relu(0.15 - 1.2 - 0.2) = 0
        let expected = (0.7 * 1.2 - 1.1 * 0.0 + 0.05f64).tanh();
        assert!((net.apply(&x).unwrap()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn linear_backward_is_transpose() {
        let w = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let net = DenseNet::new(vec![DenseLayer::new(3, 2, Activation::Identity, w, vec![0.0; 2]).unwrap()]).unwrap();
        let (_, cache) = net.forward(&[1.0, 1.0, 1.0]).unwrap();
        let g = net.backward(&cache, &[1.0, -1.0]).unwrap();
        assert_eq!(g.input_grad, vec![-3.0, -3.0, -3.0]);
        assert!(net.backward(&cache, &[1.0]).is_err());
    }

    #[test]
    fn tanh_derivative_at_zero() {
        assert_eq!(Activation::Tanh.derivative(0.0), 1.0);
        assert!(Activation::Tanh.derivative(30.0) > 0.0);
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let a = softmax(&[1.0, -2.0, 0.5]);
        let b = softmax(&[101.0, 98.0, 100.5]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        let ls = log_softmax(&[1.0, -2.0, 0.5]);
        for (l, p) in ls.iter().zip(&a) {
            assert!((l.exp() - p).abs() < 1e-15);
        }
    }

    #[test]
    fn random_net_gradients_match_finite_differences() {
        let mut r = rng::seeded(4);
        let acts = [Activation::Tanh, Activation::Logistic, Activation::Identity];
        for _ in 0..5 {
            let net = DenseNet::random(&[4, 6, 5, 3], &acts, &mut r).unwrap();
            let x: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
            let rep = finite_diff_check(&net, &x, half_squared, 1e-4, 1e-5).unwrap();
            assert!(rep.passed, "{rep:?}");
            assert_eq!(rep.checked, net.param_count() + 4);
        }
    }

    #[test]
    fn finite_diff_examples() {
        let mut r = rng::seeded(5);
        let net = DenseNet::random(&[3, 5, 2], &[Activation::Relu, Activation::Tanh], &mut r).unwrap();
        let x = nudge_off_kinks(&net, &[0.2, -0.1, 0.4], 1e-2, &mut r).unwrap().unwrap();
        let rep = finite_diff_check(&net, &x, half_squared, 1e-4, 1e-4).unwrap();
        assert!(rep.passed, "{rep:?}");

        // negative control
        let (out, cache) = net.forward(&x).unwrap();
        let g = net.backward(&cache, &half_squared(&out).1).unwrap();
        let mut bad = g.flat_params();
        bad.extend_from_slice(&g.input_grad);
        bad[0] += 0.1;
        let rep = check_against_central_differences(&net, &x, &half_squared, &bad, 1e-4, 1e-4).unwrap();
        assert!(!rep.passed);
        assert_eq!(rep.worst_index, 0);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut r = rng::seeded(6);
        let net = DenseNet::random(&[5, 7, 2], &[Activation::Relu, Activation::Identity], &mut r).unwrap();
        let back = DenseNet::from_json(&net.to_json()).unwrap();
        assert_eq!(back, net);
        let bad = r#"{"layers":[{"in_dim":2,"out_dim":1,"activation":"relu","weights":[1.0],"bias":[0.0]}]}"#;
        assert!(DenseNet::from_json(bad).is_err());
    }

    #[test]
    fn mismatched_layers_rejected() {
        let a = DenseLayer::zeros(2, 3, Activation::Relu);
        let b = DenseLayer::zeros(4, 1, Activation::Identity);
        assert!(DenseNet::new(vec![a, b]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            v in proptest::collection::vec(-50.0f64..50.0, 1..12),
            c in -100.0f64..100.0,
        ) {
            let p = softmax(&v);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            for (a, b) in p.iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn forward_is_deterministic(seed in 0u64..1000, x in proptest::collection::vec(-2.0f64..2.0, 3)) {
            let net = DenseNet::random(&[3, 4, 2], &[Activation::Relu, Activation::Tanh], &mut rng::seeded(seed)).unwrap();
            prop_assert_eq!(net.apply(&x).unwrap(), net.forward(&x).unwrap().0);
            prop_assert_eq!(net.apply(&x).unwrap(), net.apply(&x).unwrap());
        }
    }
}
