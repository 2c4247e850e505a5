//! White-box attacks: FGSM, BIM, PGD (cross entropy, decoder hinge and
//! branch-logit hinge), JSMA and C&W L2.
//!
//! Attacks see a model through [`ScoreModel`], which exposes class scores
//! (the inputs to the final softmax) and vector-Jacobian products back to the
//! input. For an ECNN the scores are the decoder correlations `s`; no log is
//! taken before the softmax.

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ecnn::{self, argmax, EcnnModel};
use crate::error::{invalid, Error, Result};
use crate::netcore::{log_softmax, sech2, softmax};
use crate::rng;
use crate::trainer::Dataset;

/// A differentiable classifier as seen by the attacks.
pub trait ScoreModel: Sync {
    fn input_dim(&self) -> usize;

    fn num_scores(&self) -> usize;

    fn scores(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Scores at `x` and the input gradient of `c . scores`, where the
    /// cotangent `c` is chosen by `cotangent` after seeing the scores.
    fn scores_pullback(&self, x: &[f64], cotangent: &mut dyn FnMut(&[f64]) -> Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)>;

    fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.scores(x)?))
    }
}

impl ScoreModel for EcnnModel {
    fn input_dim(&self) -> usize {
        EcnnModel::input_dim(self)
    }

    fn num_scores(&self) -> usize {
        self.num_classes()
    }

    fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        EcnnModel::scores(self, x)
    }

    fn scores_pullback(&self, x: &[f64], cotangent: &mut dyn FnMut(&[f64]) -> Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let (out, cache) = self.forward_cached(x)?;
        let s = ecnn::decoder_scores(&out.logits, self.code_matrix())?;
        let ds = cotangent(&s);
        let dz = ecnn::decoder_pullback(&out.logits, self.code_matrix(), &ds)?;
        let g = self.backward(&cache, &dz, None)?;
        Ok((s, g))
    }
}

/// One branch of an ECNN as a meta-classifier. A single-logit branch scores
/// its two meta-classes as `[0, z]`, so the softmax is `[1 - nu(z), nu(z)]`.
#[derive(Debug, Clone, Copy)]
pub struct BranchScores<'a> {
    pub model: &'a EcnnModel,
    pub branch: usize,
}

impl<'a> BranchScores<'a> {
    pub fn new(model: &'a EcnnModel, branch: usize) -> Result<Self> {
        if branch >= model.code_length() {
            return Err(invalid(format!("branch {branch} out of range")));
        }
        Ok(Self { model, branch })
    }
}

fn meta_scores(z: &[f64]) -> Vec<f64> {
    if z.len() == 1 {
        vec![0.0, z[0]]
    } else {
        z.to_vec()
    }
}

fn meta_cotangent(width: usize, ds: &[f64]) -> Vec<f64> {
    if width == 1 {
        vec![ds[1]]
    } else {
        ds.to_vec()
    }
}

impl ScoreModel for BranchScores<'_> {
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn num_scores(&self) -> usize {
        self.model.code_matrix().alphabet()
    }

    fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(meta_scores(&self.model.encode(x)?.logits[self.branch]))
    }

    fn scores_pullback(&self, x: &[f64], cotangent: &mut dyn FnMut(&[f64]) -> Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let (out, cache) = self.model.forward_cached(x)?;
        let z = &out.logits[self.branch];
        let s = meta_scores(z);
        let ds = cotangent(&s);
        let mut dz: Vec<Vec<f64>> = out.logits.iter().map(|l| vec![0.0; l.len()]).collect();
        dz[self.branch] = meta_cotangent(z.len(), &ds);
        let g = self.model.backward(&cache, &dz, None)?;
        Ok((s, g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackFamily {
    Fgsm,
    Bim,
    Pgd,
    PgdHinge,
    PgdLogits,
    Jsma,
    CwL2,
}

impl AttackFamily {
    pub fn name(self) -> &'static str {
        match self {
            AttackFamily::Fgsm => "fgsm",
            AttackFamily::Bim => "bim",
            AttackFamily::Pgd => "pgd",
            AttackFamily::PgdHinge => "pgd_hinge",
            AttackFamily::PgdLogits => "pgd_logits",
            AttackFamily::Jsma => "jsma",
            AttackFamily::CwL2 => "cw_l2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub family: AttackFamily,
    /// L-infinity budget.
    pub epsilon: f64,
    pub step_alpha: f64,
    pub iterations: usize,
    /// Start PGD from a uniform point in the epsilon box.
    pub random_start: bool,
    /// Confidence margin for C&W and logit-level PGD.
    pub kappa: f64,
    pub jsma_theta: f64,
    /// Largest fraction of features JSMA may modify.
    pub jsma_gamma: f64,
    pub jsma_max_iterations: usize,
    pub cw_c: f64,
    pub cw_step: f64,
    pub cw_iterations: usize,
    /// Constant of the decoder-level hinge.
    pub hinge_c: f64,
    pub seed: u64,
    /// Per-feature bounds; a single value applies to every feature.
    pub clip_min: Vec<f64>,
    pub clip_max: Vec<f64>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            family: AttackFamily::Pgd,
            epsilon: 0.1,
            step_alpha: 0.01,
            iterations: 20,
            random_start: true,
            kappa: 0.0,
            jsma_theta: 1.0,
            jsma_gamma: 0.6,
            jsma_max_iterations: 1000,
            cw_c: 1.0,
            cw_step: 1e-2,
            cw_iterations: 1000,
            hinge_c: 50.0,
            seed: 0,
            clip_min: vec![0.0],
            clip_max: vec![1.0],
        }
    }
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite and >= 0, got {v}")))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite and > 0, got {v}")))
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        nonneg("epsilon", self.epsilon)?;
        positive("step_alpha", self.step_alpha)?;
        if self.iterations == 0 || self.cw_iterations == 0 {
            return Err(invalid("iteration counts must be positive"));
        }
        nonneg("kappa", self.kappa)?;
        if !self.jsma_theta.is_finite() {
            return Err(invalid("jsma_theta must be finite"));
        }
        if !(self.jsma_gamma > 0.0 && self.jsma_gamma <= 1.0) {
            return Err(invalid(format!("jsma_gamma must lie in (0, 1], got {}", self.jsma_gamma)));
        }
        nonneg("cw_c", self.cw_c)?;
        positive("cw_step", self.cw_step)?;
        positive("hinge_c", self.hinge_c)?;
        if self.clip_min.is_empty() || self.clip_min.len() != self.clip_max.len() {
            return Err(invalid("clip_min and clip_max need matching, non-empty lengths"));
        }
        if self.clip_min.iter().zip(&self.clip_max).any(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
            return Err(invalid("clip bounds must be finite with clip_min <= clip_max"));
        }
        Ok(())
    }

    /// Per-feature bounds for a `dim`-dimensional input.
    pub fn bounds(&self, dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let expand = |v: &[f64]| -> Result<Vec<f64>> {
            match v.len() {
                1 => Ok(vec![v[0]; dim]),
                n if n == dim => Ok(v.to_vec()),
                n => Err(invalid(format!("{n} clip bounds for {dim} features"))),
            }
        };
        Ok((expand(&self.clip_min)?, expand(&self.clip_max)?))
    }
}

/// Result of one attack invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub adversarial: Vec<f64>,
    /// The attacked input is no longer classified as the true class.
    pub success: bool,
    pub predicted: usize,
    pub l2: f64,
    pub linf: f64,
    /// Features changed (JSMA bookkeeping; counts nonzero changes for others).
    pub modified: usize,
}

fn outcome(model: &(impl ScoreModel + ?Sized), x: &[f64], adv: Vec<f64>, y: usize) -> Result<AttackOutcome> {
    let predicted = model.predict(&adv)?;
    let (mut l2, mut linf, mut modified) = (0.0f64, 0.0f64, 0);
    for (a, b) in adv.iter().zip(x) {
        let d = (a - b).abs();
        l2 += d * d;
        linf = linf.max(d);
        modified += usize::from(d != 0.0);
    }
    Ok(AttackOutcome { adversarial: adv, success: predicted != y, predicted, l2: l2.sqrt(), linf, modified })
}

/// `sign` with `sign(0) = 0`.
#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `min{hi, x + eps, max{lo, x - eps, v}}` per feature.
pub fn clip_eps(v: &mut [f64], x: &[f64], eps: f64, lo: &[f64], hi: &[f64]) {
    for i in 0..v.len() {
        v[i] = hi[i].min(x[i] + eps).min(lo[i].max(x[i] - eps).max(v[i]));
    }
}

fn check_input(model: &(impl ScoreModel + ?Sized), x: &[f64], y: usize, cfg: &AttackConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    if x.len() != model.input_dim() {
        return Err(invalid(format!("input has {} features, model expects {}", x.len(), model.input_dim())));
    }
    if y >= model.num_scores() {
        return Err(invalid(format!("label {y} out of range")));
    }
    let (lo, hi) = cfg.bounds(x.len())?;
    if x.iter().zip(lo.iter().zip(&hi)).any(|(v, (l, h))| !(v >= l && v <= h)) {
        return Err(invalid("input lies outside the clip bounds"));
    }
    Ok((lo, hi))
}

/// Cross entropy `-log softmax(s)_y` and its input gradient.
pub fn ce_objective(model: &(impl ScoreModel + ?Sized), x: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
    let mut value = 0.0;
    let (_, g) = model.scores_pullback(x, &mut |s| {
        value = -log_softmax(s)[y];
        let mut d = softmax(s);
        d[y] -= 1.0;
        d
    })?;
    Ok((value, g))
}

/// Largest score other than `y`, lowest index on ties.
fn runner_up(s: &[f64], y: usize) -> usize {
    let mut best = if y == 0 { 1 } else { 0 };
    for (i, &v) in s.iter().enumerate() {
        if i != y && v > s[best] {
            best = i;
        }
    }
    best
}

/// `-max(s_y - max_{i != y} s_i + c, 0)`, the quantity hinge-PGD ascends.
pub fn hinge_objective(model: &(impl ScoreModel + ?Sized), x: &[f64], y: usize, c: f64) -> Result<(f64, Vec<f64>)> {
    let mut value = 0.0;
    let (_, g) = model.scores_pullback(x, &mut |s| {
        let o = runner_up(s, y);
        let m = s[y] - s[o] + c;
        let mut d = vec![0.0; s.len()];
        if m > 0.0 {
            value = -m;
            d[y] = -1.0;
            d[o] = 1.0;
        }
        d
    })?;
    Ok((value, g))
}

/// `-sum_n max(z_n(y_n) - max_{i != y_n} z_n(i) + kappa, 0)` over branch
/// meta-scores, with `y_n` the meta-labels of class `y`.
pub fn logits_hinge_objective(model: &EcnnModel, x: &[f64], y: usize, kappa: f64) -> Result<(f64, Vec<f64>)> {
    let labels = ecnn::meta_labels(model.code_matrix(), y)?;
    let (out, cache) = model.forward_cached(x)?;
    let mut value = 0.0;
    let mut dz = Vec::with_capacity(out.logits.len());
    for (z, &t) in out.logits.iter().zip(&labels) {
        let s = meta_scores(z);
        let o = runner_up(&s, t);
        let m = s[t] - s[o] + kappa;
        let mut d = vec![0.0; s.len()];
        if m > 0.0 {
            value -= m;
            d[t] = -1.0;
            d[o] = 1.0;
        }
        dz.push(meta_cotangent(z.len(), &d));
    }
    let g = model.backward(&cache, &dz, None)?;
    Ok((value, g))
}

/// Iterated signed-gradient ascent from `start`, projected with `clip_eps`.
fn ascend<G>(x: &[f64], start: Vec<f64>, cfg: &AttackConfig, alpha: f64, steps: usize, lo: &[f64], hi: &[f64], mut grad: G) -> Result<Vec<f64>>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut adv = start;
    for _ in 0..steps {
        let g = grad(&adv)?;
        for (a, gi) in adv.iter_mut().zip(&g) {
            *a += alpha * sign(*gi);
        }
        clip_eps(&mut adv, x, cfg.epsilon, lo, hi);
    }
    Ok(adv)
}

fn random_start(x: &[f64], cfg: &AttackConfig, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    if !cfg.random_start || cfg.epsilon == 0.0 {
        return x.to_vec();
    }
    let mut r = rng::stream(cfg.seed, "pgd-start");
    let mut v: Vec<f64> = x.iter().map(|&xi| xi + r.random_range(-cfg.epsilon..=cfg.epsilon)).collect();
    clip_eps(&mut v, x, cfg.epsilon, lo, hi);
    v
}

pub fn fgsm(model: &(impl ScoreModel + ?Sized), x: &[f64], y: usize, cfg: &AttackConfig) -> Result<AttackOutcome> {
    let (lo, hi) = check_input(model, x, y, cfg)?;
    let adv = ascend(x, x.to_vec(), cfg, cfg.epsilon, 1, &lo, &hi, |v| Ok(ce_objective(model, v, y)?.1))?;
    outcome(model, x, adv, y)
}

pub fn bim(model: &(impl ScoreModel + ?Sized), x: &[f64], y: usize, cfg: &AttackConfig) -> Result<AttackOutcome> {
    let (lo, hi) = check_input(model, x, y, cfg)?;
    let adv = ascend(x, x.to_vec(), cfg, cfg.step_alpha, cfg.iterations, &lo, &hi, |v| Ok(ce_objective(model, v, y)?.1))?;
    outcome(model, x, adv, y)
}

pub fn pgd(model: &(impl ScoreModel + ?Sized), x: &[f64], y: usize, cfg: &AttackConfig) -> Result<AttackOutcome> {
    let (lo, hi) = check_input(model, x, y, cfg)?;
    let start = random_start(x, cfg, &lo, &hi);
    let adv = ascend(x, start, cfg, cfg.step_alpha, cfg.iterations, &lo, &hi, |v| Ok(ce_objective(model, v, y)?.1))?;
    outcome(model, x, adv, y)
}

pub fn pgd_hinge(model: &(impl ScoreModel + ?Sized), x: &[f64], y: usize, cfg: &AttackConfig) -> Result<AttackOutcome> {
    let (lo, hi) = check_input(model, x, y, cfg)?;
    let start = random_start(x, cfg, &lo, &hi);
    let adv = ascend(x, start, cfg, cfg.step_alpha, cfg.iterations, &lo, &hi, |v| {
        Ok(hinge_objective(model, v, y, cfg.hinge_c)?.1)
    })?;
    outcome(model, x, adv, y)
}

pub fn pgd_logits(model: &EcnnModel, x: &[f64], y: usize, cfg: &AttackConfig) -> Result<AttackOutcome> {
    let (lo, hi) = check_input(model, x, y, cfg)?;
    let start = random_start(x, cfg, &lo, &hi);
    let adv = ascend(x, start, cfg, cfg.step_alpha, cfg.iterations, &lo, &hi, |v| {
        Ok(logits_hinge_objective(model, v, y, cfg.kappa)?.1)
    })?;
    outcome(model, x, adv, y)
}

/// `alpha = dZ_t/dx` and `beta = sum_{j != t} dZ_j/dx` over the class scores.
pub fn saliency_terms(model: &(impl ScoreModel + ?Sized), x: &[f64], target: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (_, alpha) = model.scores_pullback(x, &mut |s| {
        let mut d = vec![0.0; s.len()];
        d[target] = 1.0;
        d
    })?;
    let (_, total) = model.scores_pullback(x, &mut |s| vec![1.0; s.len()])?;
    let beta = total.iter().zip(&alpha).map(|(t, a)| t - a).collect();
    Ok((alpha, beta))
}

/// `S = -alpha beta [alpha > 0] [beta < 0]` per feature.
pub fn saliency_map(model: &(impl ScoreModel + ?Sized), x: &[f64], target: usize) -> Result<Vec<f64>> {
    let (alpha, beta) = saliency_terms(model, x, target)?;
    Ok(alpha
        .iter()
        .zip(&beta)
        .map(|(&a, &b)| if a > 0.0 && b < 0.0 { -a * b } else { 0.0 })
        .collect())
}

/// Targeted JSMA towards `target`; stops once the prediction leaves `y`.
pub fn jsma(model: &(impl ScoreModel + ?Sized), x: &[f64], y: usize, target: usize, cfg: &AttackConfig) -> Result<AttackOutcome> {
    let (_, hi) = check_input(model, x, y, cfg)?;
    if target >= model.num_scores() || target == y {
        return Err(invalid(format!("JSMA target {target} must be a class other than {y}")));
    }
    let budget = (cfg.jsma_gamma * x.len() as f64).floor() as usize;
    let mut adv = x.to_vec();
    let mut used = vec![false; x.len()];
    let mut changed = 0;
    for _ in 0..cfg.jsma_max_iterations {
        if changed >= budget || model.predict(&adv)? != y {
            break;
        }
        let s = saliency_map(model, &adv, target)?;
        let mut pick = None;
        let mut best = 0.0;
        for (i, &v) in s.iter().enumerate() {
            if !used[i] && adv[i] < hi[i] && v > best {
                best = v;
                pick = Some(i);
            }
        }
        let Some(i) = pick else { break };
        adv[i] = hi[i].min(adv[i] + cfg.jsma_theta);
        used[i] = true;
        changed += 1;
    }
    outcome(model, x, adv, y)
}

/// Untargeted JSMA: the target is drawn uniformly from the other classes.
pub fn jsma_untargeted(model: &(impl ScoreModel + ?Sized), x: &[f64], y: usize, cfg: &AttackConfig) -> Result<AttackOutcome> {
    let m = model.num_scores();
    if m < 2 {
        return Err(invalid("JSMA needs at least two classes"));
    }
    let mut r = rng::stream(cfg.seed, "jsma-target");
    let mut t = r.random_range(0..m - 1);
    if t >= y {
        t += 1;
    }
    jsma(model, x, y, t, cfg)
}

/// Lower bound applied to inputs at exactly 0 or 1 before `arctanh`.
const CW_EDGE: f64 = 1e-9;

/// Change of variables `x' = x + (tanh w - tanh w0) / 2` with `w0 = arctanh(2x - 1)`,
/// which equals `(tanh w + 1) / 2` and gives `x' = x` exactly at `w = w0`.
fn cw_image(x: &[f64], w: &[f64], w0: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(w.iter().zip(w0))
        .map(|(&xi, (&wi, &w0i))| (xi + 0.5 * (wi.tanh() - w0i.tanh())).clamp(0.0, 1.0))
        .collect()
}

pub fn cw_start(x: &[f64]) -> Result<Vec<f64>> {
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid("C&W needs features scaled to [0, 1]"));
    }
    Ok(x.iter().map(|&v| (2.0 * v.clamp(CW_EDGE, 1.0 - CW_EDGE) - 1.0).atanh()).collect())
}

/// `||x' - x||^2 + c max(Z_y - max_{i != y} Z_i + kappa, 0)` at `x'(w)` and its
/// gradient with respect to `w`.
pub fn cw_objective(
    model: &(impl ScoreModel + ?Sized),
    x: &[f64],
    w: &[f64],
    w0: &[f64],
    y: usize,
    c: f64,
    kappa: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let adv = cw_image(x, w, w0);
    let mut penalty = 0.0;
    let (_, g) = model.scores_pullback(&adv, &mut |s| {
        let o = runner_up(s, y);
        let m = s[y] - s[o] + kappa;
        let mut d = vec![0.0; s.len()];
        if m > 0.0 {
            penalty = m;
            d[y] = c;
            d[o] = -c;
        }
        d
    })?;
    let mut dist = 0.0;
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let diff = adv[i] - x[i];
        dist += diff * diff;
        grad.push((2.0 * diff + g[i]) * 0.5 * sech2(w[i]));
    }
    Ok((dist + c * penalty, grad, adv))
}

/// Plain gradient descent on the C&W L2 objective; returns the successful
/// iterate with the least distortion, else the final iterate. The tanh box
/// covers `[0, 1]`; iterates are clipped to the configured bounds before they
/// are scored.
pub fn cw_l2(model: &(impl ScoreModel + ?Sized), x: &[f64], y: usize, cfg: &AttackConfig) -> Result<AttackOutcome> {
    cfg.validate()?;
    if x.len() != model.input_dim() || y >= model.num_scores() {
        return Err(invalid("input or label does not match the model"));
    }
    let (lo, hi) = cfg.bounds(x.len())?;
    let w0 = cw_start(x)?;
    let mut w = w0.clone();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut last = x.to_vec();
    for it in 0..=cfg.cw_iterations {
        let (_, grad, mut adv) = cw_objective(model, x, &w, &w0, y, cfg.cw_c, cfg.kappa)?;
        for ((a, l), h) in adv.iter_mut().zip(&lo).zip(&hi) {
            *a = a.clamp(*l, *h);
        }
        if model.predict(&adv)? != y {
            let d: f64 = adv.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, adv.clone()));
            }
        }
        last = adv;
        if it == cfg.cw_iterations {
            break;
        }
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= cfg.cw_step * gi;
        }
    }
    let adv = best.map_or(last, |(_, a)| a);
    outcome(model, x, adv, y)
}

/// Runs the configured attack family against an ECNN.
pub fn run_attack(model: &EcnnModel, x: &[f64], y: usize, cfg: &AttackConfig) -> Result<AttackOutcome> {
    match cfg.family {
        AttackFamily::Fgsm => fgsm(model, x, y, cfg),
        AttackFamily::Bim => bim(model, x, y, cfg),
        AttackFamily::Pgd => pgd(model, x, y, cfg),
        AttackFamily::PgdHinge => pgd_hinge(model, x, y, cfg),
        AttackFamily::PgdLogits => pgd_logits(model, x, y, cfg),
        AttackFamily::Jsma => jsma_untargeted(model, x, y, cfg),
        AttackFamily::CwL2 => cw_l2(model, x, y, cfg),
    }
}

/// Config for sample `i` of a batch: same parameters, per-sample seed.
pub fn per_sample(cfg: &AttackConfig, i: usize) -> AttackConfig {
    AttackConfig { seed: rng::derive_seed(cfg.seed, &format!("sample-{i}")), ..cfg.clone() }
}

/// Attacks every sample of `data` in parallel.
pub fn attack_dataset(model: &EcnnModel, data: &Dataset, cfg: &AttackConfig) -> Result<Vec<AttackOutcome>> {
    cfg.validate()?;
    (0..data.len())
        .into_par_iter()
        .map(|i| run_attack(model, &data.features[i], data.labels[i], &per_sample(cfg, i)))
        .collect()
}

/// Fraction of attacked samples still classified correctly.
pub fn adversarial_accuracy(model: &EcnnModel, data: &Dataset, cfg: &AttackConfig) -> Result<f64> {
    if data.is_empty() {
        return Err(invalid("empty dataset"));
    }
    let outcomes = attack_dataset(model, data, cfg)?;
    let correct = outcomes.iter().zip(&data.labels).filter(|(o, &y)| o.predicted == y).count();
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Serialize)]
struct AttackRow<'a> {
    sample_id: usize,
    family: &'a str,
    epsilon: f64,
    step_alpha: f64,
    iterations: usize,
    kappa: f64,
    cw_c: f64,
    hinge_c: f64,
    jsma_theta: f64,
    jsma_gamma: f64,
    true_label: usize,
    predicted: usize,
    success: bool,
    l2: f64,
    linf: f64,
}

/// Writes one CSV row per outcome.
pub fn write_csv<W: Write>(out: W, cfg: &AttackConfig, labels: &[usize], outcomes: &[AttackOutcome]) -> Result<()> {
    if labels.len() != outcomes.len() {
        return Err(invalid("one label per outcome required"));
    }
    let mut w = csv::Writer::from_writer(out);
    for (i, (o, &y)) in outcomes.iter().zip(labels).enumerate() {
        w.serialize(AttackRow {
            sample_id: i,
            family: cfg.family.name(),
            epsilon: cfg.epsilon,
            step_alpha: cfg.step_alpha,
            iterations: cfg.iterations,
            kappa: cfg.kappa,
            cw_c: cfg.cw_c,
            hinge_c: cfg.hinge_c,
            jsma_theta: cfg.jsma_theta,
            jsma_gamma: cfg.jsma_gamma,
            true_label: y,
            predicted: o.predicted,
            success: o.success,
            l2: o.l2,
            linf: o.linf,
        })
        .map_err(|e| Error::Parse { row: Some(i), message: e.to_string() })?;
    }
    w.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })?;
    Ok(())
}

pub fn save_csv(path: &Path, cfg: &AttackConfig, labels: &[usize], outcomes: &[AttackOutcome]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    write_csv(std::io::BufWriter::new(f), cfg, labels, outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::CodeMatrix;
    use crate::ecnn::{ArchConfig, HeadKind};
    use crate::netcore::{relative_error, Activation, DenseLayer, DenseNet};
    use proptest::prelude::*;

    /// Scores `s = W x + b`.
    struct Linear {
        w: Vec<Vec<f64>>,
        b: Vec<f64>,
    }

    impl ScoreModel for Linear {
        fn input_dim(&self) -> usize {
            self.w[0].len()
        }
        fn num_scores(&self) -> usize {
            self.w.len()
        }
        fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(self.w.iter().zip(&self.b).map(|(r, b)| r.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b).collect())
        }
        fn scores_pullback(&self, x: &[f64], cot: &mut dyn FnMut(&[f64]) -> Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
            let s = self.scores(x)?;
            let d = cot(&s);
            let mut g = vec![0.0; x.len()];
            for (r, di) in self.w.iter().zip(&d) {
                for (gi, wi) in g.iter_mut().zip(r) {
                    *gi += di * wi;
                }
            }
            Ok((s, g))
        }
    }

    fn toy_model(seed: u64, n: usize, dim: usize) -> EcnnModel {
        let mut r = rng::seeded(seed);
        let code = crate::annealer::random_matrix(4, n, 2, &mut r).unwrap();
        let arch = ArchConfig { front_widths: vec![8], feature_dim: 4, head: HeadKind::Binary };
        EcnnModel::random(dim, code, &arch, &mut r).unwrap()
    }

    fn cfg(family: AttackFamily) -> AttackConfig {
        AttackConfig { family, epsilon: 0.1, step_alpha: 0.02, iterations: 10, ..Default::default() }
    }

    #[test]
    fn fgsm_zero_epsilon_is_identity() {
        let m = toy_model(1, 5, 3);
        let x = [0.2, 0.5, 0.9];
        let o = fgsm(&m, &x, 1, &AttackConfig { epsilon: 0.0, ..cfg(AttackFamily::Fgsm) }).unwrap();
        assert_eq!(o.adversarial, x.to_vec());
    }

    #[test]
    fn fgsm_sign_on_one_feature_logistic_model() {
        // scores [0, w x]: CE for label 1 is softplus(-w x), gradient -w nu(-w x)
        for w in [2.0, -3.0] {
            let m = Linear { w: vec![vec![0.0], vec![w]], b: vec![0.0, 0.0] };
            let o = fgsm(&m, &[0.5], 1, &cfg(AttackFamily::Fgsm)).unwrap();
            assert_eq!(sign(o.adversarial[0] - 0.5), -sign(w));
            assert!((o.linf - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn bim_single_step_equals_fgsm() {
        let m = toy_model(2, 6, 4);
        let x = [0.3, 0.6, 0.05, 0.99];
        let c = AttackConfig { iterations: 1, step_alpha: 0.1, ..cfg(AttackFamily::Bim) };
        assert_eq!(bim(&m, &x, 2, &c).unwrap(), fgsm(&m, &x, 2, &c).unwrap());
    }

    #[test]
    fn bim_loss_non_decreasing_on_quadratic_toy() {
        // concave score margin: CE on linear scores is convex in x and steps of
        // size alpha along the sign never overshoot for a separable linear model
        let m = Linear { w: vec![vec![1.0, -0.5], vec![-1.0, 0.5]], b: vec![0.0, 0.0] };
        let x = [0.5, 0.5];
        let mut prev = ce_objective(&m, &x, 0).unwrap().0;
        for k in 1..8 {
            let c = AttackConfig { iterations: k, step_alpha: 0.01, epsilon: 0.1, ..Default::default() };
            let o = bim(&m, &x, 0, &c).unwrap();
            let v = ce_objective(&m, &o.adversarial, 0).unwrap().0;
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    #[test]
    fn pgd_determinism_and_degenerate_start() {
        let m = toy_model(3, 5, 3);
        let x = [0.4, 0.4, 0.4];
        let c = cfg(AttackFamily::Pgd);
        assert_eq!(pgd(&m, &x, 0, &c).unwrap(), pgd(&m, &x, 0, &c).unwrap());
        let start = random_start(&x, &c, &[0.0; 3], &[1.0; 3]);
        assert!(start.iter().zip(&x).all(|(a, b)| (a - b).abs() <= 0.1));
        assert_ne!(start, x.to_vec());
        let flat = AttackConfig { random_start: false, ..c.clone() };
        assert_eq!(pgd(&m, &x, 0, &flat).unwrap(), bim(&m, &x, 0, &flat).unwrap());
    }

    #[test]
    fn hinge_flat_region_only_moves_by_start() {
        // margin of class 0 is -100 < -c: the hinge is inactive everywhere in the box
        let m = Linear { w: vec![vec![0.0, 0.0], vec![0.0, 0.0]], b: vec![0.0, 100.0] };
        let c = AttackConfig { hinge_c: 50.0, ..cfg(AttackFamily::PgdHinge) };
        let x = [0.5, 0.5];
        let (v, g) = hinge_objective(&m, &x, 0, 50.0).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
        let o = pgd_hinge(&m, &x, 0, &c).unwrap();
        assert_eq!(o.adversarial, random_start(&x, &c, &[0.0; 2], &[1.0; 2]));
    }

    #[test]
    fn hinge_objective_matches_direct_formula() {
        let m = toy_model(4, 6, 3);
        let x = [0.1, 0.7, 0.3];
        let s = ScoreModel::scores(&m, &x).unwrap();
        let y = 2;
        let other = (0..4).filter(|&i| i != y).map(|i| s[i]).fold(f64::NEG_INFINITY, f64::max);
        let manual = -(s[y] - other + 50.0).max(0.0);
        assert!((hinge_objective(&m, &x, y, 50.0).unwrap().0 - manual).abs() < 1e-14);
    }

    #[test]
    fn pgd_logits_single_branch_is_branch_hinge() {
        let mut r = rng::seeded(5);
        let code = CodeMatrix::new(2, vec![vec![0], vec![1]]).unwrap();
        let arch = ArchConfig { front_widths: vec![6], feature_dim: 3, head: HeadKind::Binary };
        let m = EcnnModel::random(3, code, &arch, &mut r).unwrap();
        let c = AttackConfig { kappa: 0.7, hinge_c: 0.7, ..cfg(AttackFamily::PgdLogits) };
        let x = [0.5, 0.2, 0.8];
        let a = pgd_logits(&m, &x, 1, &c).unwrap();
        let view = BranchScores::new(&m, 0).unwrap();
        let b = pgd_hinge(&view, &x, 1, &c).unwrap();
        assert_eq!(a.adversarial, b.adversarial);
    }

    #[test]
    fn jsma_gating_and_budget() {
        // every alpha is negative: nothing to modify
        let m = Linear { w: vec![vec![1.0, 1.0], vec![-1.0, -1.0]], b: vec![1.0, 0.0] };
        let o = jsma(&m, &[0.2, 0.2], 0, 1, &AttackConfig::default()).unwrap();
        assert!(!o.success);
        assert_eq!(o.modified, 0);
        assert!(saliency_map(&m, &[0.2, 0.2], 1).unwrap().iter().all(|&v| v == 0.0));

        let model = toy_model(6, 6, 10);
        let c = AttackConfig { jsma_gamma: 0.3, jsma_theta: 0.5, ..Default::default() };
        for i in 0..10 {
            let x: Vec<f64> = (0..10).map(|k| ((i * 7 + k * 3) % 10) as f64 / 10.0).collect();
            let y = model.predict(&x).unwrap();
            let o = jsma_untargeted(&model, &x, y, &per_sample(&c, i)).unwrap();
            assert!(o.modified <= 3);
        }
    }

    #[test]
    fn saliency_matches_finite_differences() {
        let model = toy_model(7, 6, 5);
        let x = [0.3, 0.5, 0.7, 0.2, 0.6];
        let (alpha, beta) = saliency_terms(&model, &x, 1).unwrap();
        for i in 0..5 {
            let mut up = x;
            up[i] += 1e-6;
            let mut dn = x;
            dn[i] -= 1e-6;
            let su = ScoreModel::scores(&model, &up).unwrap();
            let sd = ScoreModel::scores(&model, &dn).unwrap();
            let na = (su[1] - sd[1]) / 2e-6;
            let nb = (su.iter().sum::<f64>() - su[1] - sd.iter().sum::<f64>() + sd[1]) / 2e-6;
            assert!(relative_error(alpha[i], na) < 1e-6);
            assert!(relative_error(beta[i], nb) < 1e-6);
        }
    }

    #[test]
    fn cw_start_and_zero_penalty() {
        let m = toy_model(8, 5, 4);
        let x = [0.0, 0.25, 1.0, 0.6];
        let w0 = cw_start(&x).unwrap();
        assert_eq!(cw_image(&x, &w0, &w0), x.to_vec());
        let c = AttackConfig { cw_c: 0.0, cw_iterations: 50, ..Default::default() };
        let y = m.predict(&x).unwrap();
        let o = cw_l2(&m, &x, y, &c).unwrap();
        assert_eq!(o.adversarial, x.to_vec());
        assert!(cw_start(&[1.5]).is_err());
    }

    #[test]
    fn cw_respects_clip_bounds() {
        let m = toy_model(8, 5, 4);
        let x = [0.3, 0.5, 0.45, 0.6];
        let c = AttackConfig { cw_c: 50.0, cw_step: 0.1, cw_iterations: 200, clip_min: vec![0.25], clip_max: vec![0.65], ..Default::default() };
        let y = m.predict(&x).unwrap();
        let o = cw_l2(&m, &x, y, &c).unwrap();
        assert!(o.adversarial.iter().all(|v| (0.25..=0.65).contains(v)));
    }

    #[test]
    fn cw_objective_matches_direct_formula_and_gradient() {
        let m = toy_model(9, 6, 3);
        let x = [0.2, 0.5, 0.8];
        let w0 = cw_start(&x).unwrap();
        let w: Vec<f64> = w0.iter().map(|v| v + 0.3).collect();
        let y = 0;
        let (v, g, adv) = cw_objective(&m, &x, &w, &w0, y, 2.0, 0.5).unwrap();
        let s = ScoreModel::scores(&m, &adv).unwrap();
        let other = (1..4).map(|i| s[i]).fold(f64::NEG_INFINITY, f64::max);
        let manual: f64 = adv.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() + 2.0 * (s[0] - other + 0.5).max(0.0);
        assert!((v - manual).abs() < 1e-13);
        for i in 0..3 {
            let mut up = w.clone();
            up[i] += 1e-6;
            let mut dn = w.clone();
            dn[i] -= 1e-6;
            let num = (cw_objective(&m, &x, &up, &w0, y, 2.0, 0.5).unwrap().0 - cw_objective(&m, &x, &dn, &w0, y, 2.0, 0.5).unwrap().0) / 2e-6;
            assert!(relative_error(g[i], num) < 1e-6, "{} vs {num}", g[i]);
        }
    }

    #[test]
    fn csv_export_has_one_row_per_sample() {
        let o = AttackOutcome { adversarial: vec![0.0], success: true, predicted: 1, l2: 0.5, linf: 0.5, modified: 1 };
        let mut buf = Vec::new();
        write_csv(&mut buf, &AttackConfig::default(), &[0, 2], &[o.clone(), o]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("sample_id,family,epsilon"));
    }

    #[test]
    fn identity_front_model_gradients() {
        // a model whose front is the identity keeps attack gradients exact
        let front = DenseNet::new(vec![DenseLayer::new(2, 2, Activation::Relu, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap()]).unwrap();
        let branch = DenseNet::new(vec![DenseLayer::new(2, 1, Activation::Relu, vec![1.0, -1.0], vec![0.5]).unwrap()]).unwrap();
        let head = DenseNet::new(vec![DenseLayer::new(1, 1, Activation::Identity, vec![2.0], vec![0.0]).unwrap()]).unwrap();
        let code = CodeMatrix::new(2, vec![vec![0], vec![1]]).unwrap();
        let m = EcnnModel::new(front, vec![branch], head, code).unwrap();
        let x = [0.6, 0.3];
        let (_, g) = ce_objective(&m, &x, 1).unwrap();
        // z = 2 (x0 - x1 + 0.5), s = (-tanh z, tanh z), CE = -log softmax(s)_1
        let z: f64 = 2.0 * (0.6 - 0.3 + 0.5);
        let t = z.tanh();
        let p1 = 1.0 / (1.0 + (-2.0 * t).exp());
        let dz = -(1.0 - p1) * 2.0 * sech2(z);
        assert!(relative_error(g[0], dz * 2.0) < 1e-12);
        assert!(relative_error(g[1], -dz * 2.0) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn linf_attacks_respect_box(
            seed in 0u64..1000,
            eps in 0.0f64..0.3,
            x in proptest::collection::vec(0.0f64..1.0, 3),
            fam in 0usize..5,
        ) {
            let m = toy_model(seed % 7, 5, 3);
            let family = [AttackFamily::Fgsm, AttackFamily::Bim, AttackFamily::Pgd, AttackFamily::PgdHinge, AttackFamily::PgdLogits][fam];
            let c = AttackConfig { family, epsilon: eps, step_alpha: 0.05, iterations: 5, seed, ..Default::default() };
            let o = run_attack(&m, &x, (seed % 4) as usize, &c).unwrap();
            prop_assert!(o.linf <= eps + 1e-12);
            prop_assert!(o.adversarial.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
