//! The ECNN encoder/decoder pair.
//!
//! A shared front network `g1` feeds `N` branch networks `g2_n`; every branch
//! feature `f_n` goes through the same linear head `phi` to give the logits
//! `z_n`. A binary head emits one logit per branch and meta-class
//! probabilities `[1 - nu(z), nu(z)]`; a q-ary head emits `q` logits with a
//! per-branch softmax. The decoder correlates the (scaled) logits with the
//! signed codewords and applies a softmax over classes.

use serde::{Deserialize, Serialize};

use crate::codebook::CodeMatrix;
use crate::error::{invalid, Error, Result};
use crate::netcore::{self, logistic, softmax, softplus, Activation, DenseLayer, DenseNet, ForwardCache};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// One logit per branch; requires a binary code matrix.
    Binary,
    /// `q` logits per branch.
    Qary,
}

/// Layer widths of a freshly initialised model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// Widths of the relu layers of the shared front network.
    pub front_widths: Vec<usize>,
    /// Branch feature dimension `F`.
    pub feature_dim: usize,
    pub head: HeadKind,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { front_widths: vec![32, 32], feature_dim: 8, head: HeadKind::Binary }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Hinge,
    CrossEntropy,
    MulticlassHinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Diversity weight.
    pub gamma: f64,
    /// Confidence margin of the multiclass hinge.
    pub kappa: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { kind: LossKind::CrossEntropy, gamma: 0.0, kappa: 0.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(invalid(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(invalid(format!("kappa must be finite and >= 0, got {}", self.kappa)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// `z_n` per branch: one entry for a binary head, `q` for a q-ary head.
    pub logits: Vec<Vec<f64>>,
    /// `f_n` per branch.
    pub features: Vec<Vec<f64>>,
}

/// Activations kept by [`EcnnModel::forward_cached`].
#[derive(Debug, Clone)]
pub struct EcnnCache {
    front: ForwardCache,
    branches: Vec<ForwardCache>,
    heads: Vec<ForwardCache>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EcnnModel {
    front: DenseNet,
    branches: Vec<DenseNet>,
    head: DenseNet,
    code_matrix: CodeMatrix,
}

impl EcnnModel {
    /// Assembles a model. The head must be a single bias-free identity layer
    /// with 1 output (binary code matrices only) or `q` outputs.
    pub fn new(front: DenseNet, branches: Vec<DenseNet>, head: DenseNet, code_matrix: CodeMatrix) -> Result<Self> {
        if branches.len() != code_matrix.code_length() {
            return Err(invalid(format!(
                "{} branches for a code of length {}",
                branches.len(),
                code_matrix.code_length()
            )));
        }
        let mid = front.output_dim();
        let feat = head.input_dim();
        for (n, b) in branches.iter().enumerate() {
            if b.input_dim() != mid || b.output_dim() != feat {
                return Err(invalid(format!(
                    "branch {n} maps {} -> {}, expected {mid} -> {feat}",
                    b.input_dim(),
                    b.output_dim()
                )));
            }
        }
        let hl = head.layers();
        if hl.len() != 1 || hl[0].activation != Activation::Identity || hl[0].bias.iter().any(|&b| b != 0.0) {
            return Err(invalid("head must be one linear layer without bias"));
        }
        match head.output_dim() {
            1 if code_matrix.alphabet() == 2 => {}
            1 => return Err(invalid("single-logit head needs a binary code matrix")),
            k if k == code_matrix.alphabet() => {}
            k => {
                return Err(invalid(format!(
                    "head emits {k} logits but the alphabet has {} symbols",
                    code_matrix.alphabet()
                )))
            }
        }
        Ok(Self { front, branches, head, code_matrix })
    }

    pub fn random(input_dim: usize, code_matrix: CodeMatrix, arch: &ArchConfig, rng: &mut Rng) -> Result<Self> {
        if input_dim == 0 || arch.feature_dim == 0 || arch.front_widths.is_empty() || arch.front_widths.contains(&0) {
            return Err(invalid("architecture widths must be positive and the front needs a layer"));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&arch.front_widths);
        let front = DenseNet::random(&dims, &vec![Activation::Relu; arch.front_widths.len()], rng)?;
        let mid = front.output_dim();
        let branches = (0..code_matrix.code_length())
            .map(|_| DenseNet::random(&[mid, arch.feature_dim], &[Activation::Relu], rng))
            .collect::<Result<Vec<_>>>()?;
        let out = match arch.head {
            HeadKind::Binary => 1,
            HeadKind::Qary => code_matrix.alphabet(),
        };
        let head = DenseNet::new(vec![DenseLayer::random(arch.feature_dim, out, Activation::Identity, rng)])?;
        Self::new(front, branches, head, code_matrix)
    }

    pub fn code_matrix(&self) -> &CodeMatrix {
        &self.code_matrix
    }

    pub fn front(&self) -> &DenseNet {
        &self.front
    }

    pub fn branches(&self) -> &[DenseNet] {
        &self.branches
    }

    pub fn head(&self) -> &DenseNet {
        &self.head
    }

    pub fn head_kind(&self) -> HeadKind {
        if self.head.output_dim() == 1 {
            HeadKind::Binary
        } else {
            HeadKind::Qary
        }
    }

    pub fn input_dim(&self) -> usize {
        self.front.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.code_matrix.num_classes()
    }

    pub fn code_length(&self) -> usize {
        self.code_matrix.code_length()
    }

    pub fn feature_dim(&self) -> usize {
        self.head.input_dim()
    }

    pub fn param_count(&self) -> usize {
        self.front.param_count() + self.branches.iter().map(DenseNet::param_count).sum::<usize>() + self.head.param_count()
    }

    /// Flat parameters: front, then each branch, then the head.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.front.params();
        for b in &self.branches {
            p.extend(b.params());
        }
        p.extend(self.head.params());
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(invalid(format!("expected {} parameters, got {}", self.param_count(), params.len())));
        }
        let mut off = 0;
        let n = self.front.param_count();
        self.front.set_params(&params[off..off + n])?;
        off += n;
        for b in &mut self.branches {
            let n = b.param_count();
            b.set_params(&params[off..off + n])?;
            off += n;
        }
        let n = self.head.param_count();
        self.head.set_params(&params[off..off + n])?;
        let bias_len = self.head.output_dim();
        if params[off + n - bias_len..off + n].iter().any(|&b| b != 0.0) {
            return Err(invalid("head bias must stay zero"));
        }
        Ok(())
    }

    pub fn encode(&self, x: &[f64]) -> Result<EncoderOutput> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(EncoderOutput, EcnnCache)> {
        let (h, front) = self.front.forward(x)?;
        let mut logits = Vec::with_capacity(self.branches.len());
        let mut features = Vec::with_capacity(self.branches.len());
        let mut branches = Vec::with_capacity(self.branches.len());
        let mut heads = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let (f, bc) = b.forward(&h)?;
            let (z, hc) = self.head.forward(&f)?;
            logits.push(z);
            features.push(f);
            branches.push(bc);
            heads.push(hc);
        }
        Ok((EncoderOutput { logits, features }, EcnnCache { front, branches, heads }))
    }

    /// Pulls a cotangent on the logits back to the input. Parameter gradients
    /// are added into `param_acc` (flat order) when given. Branches whose
    /// cotangent is all zero are skipped.
    pub fn backward(&self, cache: &EcnnCache, dlogits: &[Vec<f64>], mut param_acc: Option<&mut [f64]>) -> Result<Vec<f64>> {
        if dlogits.len() != self.branches.len() {
            return Err(invalid("logit cotangent has the wrong number of branches"));
        }
        if let Some(acc) = param_acc.as_deref() {
            if acc.len() != self.param_count() {
                return Err(invalid("gradient buffer has the wrong length"));
            }
        }
        let front_len = self.front.param_count();
        let head_off = self.param_count() - self.head.param_count();
        let mut dh = vec![0.0; self.front.output_dim()];
        let mut off = front_len;
        for (n, b) in self.branches.iter().enumerate() {
            let blen = b.param_count();
            if dlogits[n].iter().any(|&v| v != 0.0) {
                let df = match param_acc.as_deref_mut() {
                    Some(acc) => self.head.backward_accumulate(&cache.heads[n], &dlogits[n], &mut acc[head_off..])?,
                    None => self.head.backward_input(&cache.heads[n], &dlogits[n])?,
                };
                let g = match param_acc.as_deref_mut() {
                    Some(acc) => b.backward_accumulate(&cache.branches[n], &df, &mut acc[off..off + blen])?,
                    None => b.backward_input(&cache.branches[n], &df)?,
                };
                for (a, v) in dh.iter_mut().zip(g) {
                    *a += v;
                }
            }
            off += blen;
        }
        if let Some(acc) = param_acc.as_deref_mut() {
            // phi is linear: its bias gradient is discarded
            let end = acc.len();
            let nb = self.head.output_dim();
            acc[end - nb..].fill(0.0);
        }
        match param_acc {
            Some(acc) => self.front.backward_accumulate(&cache.front, &dh, &mut acc[..front_len]),
            None => self.front.backward_input(&cache.front, &dh),
        }
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        decoder_scores(&self.encode(x)?.logits, &self.code_matrix)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.scores(x)?))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.scores(x)?))
    }

    /// Meta-class decision of every branch.
    pub fn meta_predictions(&self, x: &[f64]) -> Result<Vec<usize>> {
        Ok(self.encode(x)?.logits.iter().map(|z| meta_class(z)).collect())
    }

    /// Joint loss of one sample (weighted `1/N`) and its parameter gradient.
    pub fn sample_gradient(&self, x: &[f64], class: usize, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
        let labels = meta_labels(&self.code_matrix, class)?;
        let (out, cache) = self.forward_cached(x)?;
        let (value, dz) = joint_loss_sample(&out, &labels, cfg)?;
        let mut grad = vec![0.0; self.param_count()];
        self.backward(&cache, &dz, Some(&mut grad))?;
        Ok((value, grad))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: EcnnModel = serde_json::from_str(text)?;
        Self::new(
            DenseNet::new(raw.front.layers().to_vec())?,
            raw.branches
                .into_iter()
                .map(|b| DenseNet::new(b.layers().to_vec()))
                .collect::<Result<_>>()?,
            DenseNet::new(raw.head.layers().to_vec())?,
            raw.code_matrix,
        )
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Meta-class decided by one branch's logits (`z > 0` for a single logit).
pub fn meta_class(z: &[f64]) -> usize {
    if z.len() == 1 {
        usize::from(z[0] > 0.0)
    } else {
        argmax(z)
    }
}

/// Row `y` of the code matrix.
pub fn meta_labels(m: &CodeMatrix, y: usize) -> Result<Vec<usize>> {
    if y >= m.num_classes() {
        return Err(invalid(format!("class {y} out of range for {} classes", m.num_classes())));
    }
    Ok(m.row(y).to_vec())
}

fn check_logits(logits: &[Vec<f64>], m: &CodeMatrix) -> Result<bool> {
    if logits.len() != m.code_length() {
        return Err(invalid(format!("{} logit blocks for a code of length {}", logits.len(), m.code_length())));
    }
    let width = logits.first().map_or(0, Vec::len);
    if logits.iter().any(|z| z.len() != width) {
        return Err(invalid("logit blocks have different widths"));
    }
    match width {
        1 if m.alphabet() == 2 => Ok(true),
        w if w == m.alphabet() => Ok(false),
        w => Err(invalid(format!("logit block width {w} does not fit alphabet {}", m.alphabet()))),
    }
}

/// Class scores before the final softmax.
///
/// Binary logits: `s = (2M - 1) tanh(z)`. Block logits: the per-branch softmax
/// probabilities are correlated with the signed one-hot expansion of the
/// matrix, i.e. `s_m = sum_n (2 P_n(M(m, n)) - 1)`.
pub fn decoder_scores(logits: &[Vec<f64>], m: &CodeMatrix) -> Result<Vec<f64>> {
    let binary = check_logits(logits, m)?;
    let n = m.code_length();
    let mut s = vec![0.0; m.num_classes()];
    if binary {
        let t: Vec<f64> = logits.iter().map(|z| z[0].tanh()).collect();
        for (c, score) in s.iter_mut().enumerate() {
            *score = m.row(c).iter().zip(&t).map(|(&b, &tv)| if b == 1 { tv } else { -tv }).sum();
        }
    } else {
        let p: Vec<Vec<f64>> = logits.iter().map(|z| softmax(z)).collect();
        for (c, score) in s.iter_mut().enumerate() {
            *score = (0..n).map(|j| 2.0 * p[j][m.get(c, j)] - 1.0).sum();
        }
    }
    Ok(s)
}

/// Vector-Jacobian product of [`decoder_scores`]: cotangent on scores to
/// cotangent on logits.
pub fn decoder_pullback(logits: &[Vec<f64>], m: &CodeMatrix, dscores: &[f64]) -> Result<Vec<Vec<f64>>> {
    let binary = check_logits(logits, m)?;
    if dscores.len() != m.num_classes() {
        return Err(invalid("score cotangent has the wrong length"));
    }
    let q = m.alphabet();
    let mut out = Vec::with_capacity(logits.len());
    for (j, z) in logits.iter().enumerate() {
        if binary {
            let g: f64 = (0..m.num_classes())
                .map(|c| if m.get(c, j) == 1 { dscores[c] } else { -dscores[c] })
                .sum();
            out.push(vec![g * netcore::sech2(z[0])]);
        } else {
            // d s_c / d P_j(a) = 2 [M(c, j) = a]
            let mut g = vec![0.0; q];
            for c in 0..m.num_classes() {
                g[m.get(c, j)] += 2.0 * dscores[c];
            }
            let p = softmax(z);
            let pg: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
            out.push(p.iter().zip(&g).map(|(pi, gi)| pi * (gi - pg)).collect());
        }
    }
    Ok(out)
}

/// Class probabilities `softmax(decoder_scores(z))`.
pub fn decode(logits: &[Vec<f64>], m: &CodeMatrix) -> Result<Vec<f64>> {
    Ok(softmax(&decoder_scores(logits, m)?))
}

/// Loss, entropy, and their gradients for one branch.
struct BranchTerms {
    loss: f64,
    entropy: f64,
    dloss: Vec<f64>,
    dentropy: Vec<f64>,
}

fn branch_terms(z: &[f64], label: usize, cfg: &LossConfig) -> Result<BranchTerms> {
    if z.len() == 1 {
        let z = z[0];
        if label > 1 {
            return Err(invalid(format!("binary meta-label {label} out of range")));
        }
        let sign = if label == 1 { 1.0 } else { -1.0 };
        let nu = logistic(z);
        let (loss, dloss) = match cfg.kind {
            LossKind::Hinge => {
                let m = 1.0 - z * sign;
                if m > 0.0 {
                    (m, -sign)
                } else {
                    (0.0, 0.0)
                }
            }
            // -log nu(z) for label 1, -log(1 - nu(z)) for label 0
            LossKind::CrossEntropy => (softplus(-sign * z), nu - label as f64),
            LossKind::MulticlassHinge => return Err(invalid("multiclass hinge needs a q-ary head")),
        };
        let entropy = nu * softplus(-z) + (1.0 - nu) * softplus(z);
        let dentropy = -z * netcore::logistic_derivative(z);
        Ok(BranchTerms { loss, entropy, dloss: vec![dloss], dentropy: vec![dentropy] })
    } else {
        let q = z.len();
        if label >= q {
            return Err(invalid(format!("meta-label {label} out of range for {q} logits")));
        }
        let logp = netcore::log_softmax(z);
        let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let mut dloss = vec![0.0; q];
        let loss = match cfg.kind {
            LossKind::Hinge => return Err(invalid("binary hinge needs a single-logit head")),
            LossKind::CrossEntropy => {
                for (d, &pi) in dloss.iter_mut().zip(&p) {
                    *d = pi;
                }
                dloss[label] -= 1.0;
                -logp[label]
            }
            LossKind::MulticlassHinge => {
                let mut other = if label == 0 { 1 } else { 0 };
                for i in 0..q {
                    if i != label && z[i] > z[other] {
                        other = i;
                    }
                }
                let m = z[other] - z[label] + cfg.kappa;
                if m > 0.0 {
                    dloss[other] = 1.0;
                    dloss[label] = -1.0;
                    m
                } else {
                    0.0
                }
            }
        };
        let entropy: f64 = -p.iter().zip(&logp).map(|(pi, li)| if *pi > 0.0 { pi * li } else { 0.0 }).sum::<f64>();
        let dentropy = p.iter().zip(&logp).map(|(pi, li)| -pi * (li + entropy)).collect();
        Ok(BranchTerms { loss, entropy, dloss, dentropy })
    }
}

fn check_labels(out: &EncoderOutput, labels: &[usize]) -> Result<()> {
    if labels.len() != out.logits.len() {
        return Err(invalid(format!("{} meta-labels for {} branches", labels.len(), out.logits.len())));
    }
    Ok(())
}

fn check_batch(outputs: &[EncoderOutput], labels: &[Vec<usize>]) -> Result<()> {
    if outputs.is_empty() || outputs.len() != labels.len() {
        return Err(invalid("need one label vector per output and at least one sample"));
    }
    Ok(())
}

/// Encoder loss averaged over branches and samples (weight `1/(NK)`).
pub fn encoder_loss(outputs: &[EncoderOutput], labels: &[Vec<usize>], cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    check_batch(outputs, labels)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (out, lab) in outputs.iter().zip(labels) {
        check_labels(out, lab)?;
        for (z, &y) in out.logits.iter().zip(lab) {
            total += branch_terms(z, y, cfg)?.loss;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean Shannon entropy (nats) of the branch meta-class distributions.
pub fn diversity_term(outputs: &[EncoderOutput]) -> f64 {
    let probe = LossConfig::default();
    let mut total = 0.0;
    let mut count = 0usize;
    for out in outputs {
        for z in &out.logits {
            total += branch_terms(z, 0, &probe).expect("label 0 is always valid").entropy;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// `encoder_loss - gamma * diversity_term`.
pub fn joint_loss(outputs: &[EncoderOutput], labels: &[Vec<usize>], cfg: &LossConfig) -> Result<f64> {
    Ok(encoder_loss(outputs, labels, cfg)? - cfg.gamma * diversity_term(outputs))
}

/// Per-sample joint loss (weight `1/N`) and its gradient with respect to the logits.
pub fn joint_loss_sample(out: &EncoderOutput, labels: &[usize], cfg: &LossConfig) -> Result<(f64, Vec<Vec<f64>>)> {
    cfg.validate()?;
    check_labels(out, labels)?;
    let w = 1.0 / out.logits.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(out.logits.len());
    for (z, &y) in out.logits.iter().zip(labels) {
        let t = branch_terms(z, y, cfg)?;
        value += w * (t.loss - cfg.gamma * t.entropy);
        grads.push(t.dloss.iter().zip(&t.dentropy).map(|(dl, dh)| w * (dl - cfg.gamma * dh)).collect());
    }
    Ok((value, grads))
}

/// Optimum of the smoothed cross entropy `-log z - gamma H(z)` over the
/// probability `z` of the true meta-class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub zeta: f64,
    /// `log(zeta / (1 - zeta))`; carried separately because `1 - zeta`
    /// underflows relative precision for small `gamma`.
    pub logit: f64,
    /// `1/zeta - gamma log(zeta / (1 - zeta))` at the root.
    pub residual: f64,
}

/// Solves `1/zeta = gamma log(zeta / (1 - zeta))` on `(0.5, 1)` by bisection.
///
/// The bisection runs on the logit `t`, where the residual reads
/// `1 + e^-t - gamma t` and is strictly decreasing from 2 at `t = 0`.
pub fn smoothing_fixed_point(gamma: f64) -> Result<FixedPoint> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::NoRoot(format!("gamma must be positive and finite, got {gamma}")));
    }
    let r = |t: f64| 1.0 + (-t).exp() - gamma * t;
    let mut lo = 0.0;
    let mut hi = 1.0;
    while r(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::NoRoot("bracket diverged".into()));
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if r(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = if r(lo).abs() <= r(hi).abs() { lo } else { hi };
    Ok(FixedPoint { zeta: logistic(t), logit: t, residual: r(t) })
}
