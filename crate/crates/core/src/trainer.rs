//! Datasets, mini-batch training of the joint objective, adversarial
//! training, evaluation and the branch transfer study.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{self, AttackConfig, AttackFamily, BranchScores};
use crate::ecnn::{self, EcnnModel, LossConfig};
use crate::error::{invalid, Error, Result};
use crate::rng;

/// Labelled feature vectors with per-feature bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(invalid("one label per sample required"));
        }
        let dim = lower.len();
        if dim == 0 || upper.len() != dim {
            return Err(invalid("bounds must be non-empty and of equal length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(invalid("lower bound above upper bound"));
        }
        for (i, (f, &y)) in features.iter().zip(&labels).enumerate() {
            if f.len() != dim {
                return Err(invalid(format!("sample {i} has {} features, expected {dim}", f.len())));
            }
            if y >= num_classes {
                return Err(invalid(format!("sample {i} has label {y} with {num_classes} classes")));
            }
            if f.iter().zip(lower.iter().zip(&upper)).any(|(v, (l, u))| !(v >= l && v <= u)) {
                return Err(invalid(format!("sample {i} lies outside the declared bounds")));
            }
        }
        Ok(Self { features, labels, num_classes, lower, upper })
    }

    /// Bounds taken from the data.
    pub fn with_inferred_bounds(features: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let dim = features.first().map_or(0, Vec::len);
        let mut lower = vec![f64::INFINITY; dim];
        let mut upper = vec![f64::NEG_INFINITY; dim];
        for f in &features {
            if f.len() != dim {
                return Err(invalid("samples have different lengths"));
            }
            for (k, &v) in f.iter().enumerate() {
                if !v.is_finite() {
                    return Err(invalid("non-finite feature"));
                }
                lower[k] = lower[k].min(v);
                upper[k] = upper[k].max(v);
            }
        }
        Self::new(features, labels, num_classes, lower, upper)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        }
    }

    /// Seeded shuffle split; the first part holds `fraction` of the samples.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(invalid("split fraction must lie in (0, 1)"));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng::stream(seed, "split"));
        let cut = (fraction * self.len() as f64).round() as usize;
        Ok((self.subset(&idx[..cut]), self.subset(&idx[cut..])))
    }

    /// Min-max scales every feature to `[0, 1]` using the declared bounds.
    /// Constant features map to 0.
    pub fn scaled_unit(&self) -> Dataset {
        let features = self
            .features
            .iter()
            .map(|f| {
                f.iter()
                    .zip(self.lower.iter().zip(&self.upper))
                    .map(|(&v, (&l, &u))| if u > l { ((v - l) / (u - l)).clamp(0.0, 1.0) } else { 0.0 })
                    .collect()
            })
            .collect();
        Dataset {
            features,
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            lower: vec![0.0; self.dim()],
            upper: vec![1.0; self.dim()],
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Gaussian clusters around random centres.
    Blobs,
    /// Concentric rings in the first two features.
    Rings,
    /// Gaussian clusters around the cells of a regular grid.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub noise_sigma: f64,
    pub dim: usize,
    pub seed: u64,
}

/// Samples a synthetic dataset in `[0, 1]^dim`; values are clamped to the box.
///
/// Samples are ordered class by class. With `noise_sigma = 0` every blob or
/// grid sample equals its class centre; ring samples keep a random angle.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let SyntheticSpec { kind, num_classes: m, samples_per_class: k, noise_sigma, dim, seed } = *spec;
    if m < 2 || k == 0 || dim == 0 {
        return Err(invalid("need at least two classes, one sample per class and one feature"));
    }
    if kind == SyntheticKind::Rings && dim < 2 {
        return Err(invalid("rings need at least two features"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(invalid("noise_sigma must be finite and >= 0"));
    }
    let mut r = rng::stream(seed, "synthetic");
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| invalid(e.to_string()))?;
    let centres: Vec<Vec<f64>> = match kind {
        SyntheticKind::Blobs => (0..m).map(|_| (0..dim).map(|_| r.random_range(0.15..0.85)).collect()).collect(),
        SyntheticKind::Grid => {
            let side = (m as f64).sqrt().ceil() as usize;
            (0..m)
                .map(|c| {
                    let mut v = vec![0.5; dim];
                    v[0] = (0.5 + (c % side) as f64) / side as f64;
                    if dim > 1 {
                        v[1] = (0.5 + (c / side) as f64) / side as f64;
                    }
                    v
                })
                .collect()
        }
        SyntheticKind::Rings => Vec::new(),
    };
    let mut features = Vec::with_capacity(m * k);
    let mut labels = Vec::with_capacity(m * k);
    for c in 0..m {
        for _ in 0..k {
            let mut v = match kind {
                SyntheticKind::Rings => {
                    let radius = 0.45 * (c + 1) as f64 / m as f64;
                    let angle = r.random_range(0.0..std::f64::consts::TAU);
                    let rad = radius + noise.sample(&mut r);
                    let mut v = vec![0.5; dim];
                    v[0] += rad * angle.cos();
                    v[1] += rad * angle.sin();
                    for x in v.iter_mut().skip(2) {
                        *x += noise.sample(&mut r);
                    }
                    v
                }
                _ => centres[c].iter().map(|&x| x + noise.sample(&mut r)).collect(),
            };
            for x in &mut v {
                *x = x.clamp(0.0, 1.0);
            }
            features.push(v);
            labels.push(c);
        }
    }
    Dataset::new(features, labels, m, vec![0.0; dim], vec![1.0; dim])
}

fn parse_err(row: usize, message: impl Into<String>) -> Error {
    Error::Parse { row: Some(row), message: message.into() }
}

/// Reads a headed CSV; every column except `label_column` is a feature.
/// Reported row numbers are file line numbers.
pub fn load_csv(path: &Path, label_column: &str, scale_unit: bool) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Parse { row: Some(1), message: format!("no column named {label_column:?}") })?;
    if headers.len() < 2 {
        return Err(parse_err(1, "need at least one feature column"));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != headers.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", headers.len(), rec.len())));
        }
        let mut f = Vec::with_capacity(headers.len() - 1);
        for (i, cell) in rec.iter().enumerate() {
            if i == label_idx {
                let y: usize = cell
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line, format!("label {cell:?} is not a non-negative integer")))?;
                labels.push(y);
            } else {
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line, format!("column {:?}: {cell:?} is not a number", &headers[i])))?;
                if !v.is_finite() {
                    return Err(parse_err(line, format!("column {:?}: non-finite value", &headers[i])));
                }
                f.push(v);
            }
        }
        features.push(f);
    }
    if features.is_empty() {
        return Err(Error::Parse { row: None, message: "no data rows".into() });
    }
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let data = Dataset::with_inferred_bounds(features, labels, num_classes)?;
    Ok(if scale_unit { data.scaled_unit() } else { data })
}

/// Writes features `f0..f{D-1}` followed by `label`.
pub fn save_csv(path: &Path, data: &Dataset) -> Result<()> {
    let io = |e: std::io::Error| Error::Io { path: path.to_path_buf(), source: e };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    let mut header: Vec<String> = (0..data.dim()).map(|k| format!("f{k}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| io(e.into()))?;
    for (f, y) in data.features.iter().zip(&data.labels) {
        let mut row: Vec<String> = f.iter().map(|v| v.to_string()).collect();
        row.push(y.to_string());
        w.write_record(&row).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub loss: LossConfig,
    /// Enables adversarial training with PGD examples built from these settings.
    pub adversarial: Option<AttackConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            loss: LossConfig::default(),
            adversarial: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("epochs and batch_size must be positive"));
        }
        if self.batch_size > data.len() {
            return Err(invalid(format!("batch_size {} exceeds dataset size {}", self.batch_size, data.len())));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum must lie in [0, 1)"));
        }
        self.loss.validate()?;
        if let Some(a) = &self.adversarial {
            a.validate()?;
        }
        Ok(())
    }

    /// Halved after each third of training.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let stage = (3 * epoch) / self.epochs;
        self.learning_rate * 0.5f64.powi(stage as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean joint loss over the epoch's batches, measured before each update.
    pub loss: f64,
}

fn check_model(model: &EcnnModel, data: &Dataset) -> Result<()> {
    if model.input_dim() != data.dim() {
        return Err(invalid(format!("model expects {} features, dataset has {}", model.input_dim(), data.dim())));
    }
    if model.num_classes() != data.num_classes {
        return Err(invalid(format!("model has {} classes, dataset {}", model.num_classes(), data.num_classes)));
    }
    Ok(())
}

/// Mean joint loss and parameter gradient over the given samples. Per-sample
/// gradients run in parallel and are summed in sample order.
pub fn batch_gradient(model: &EcnnModel, xs: &[&[f64]], ys: &[usize], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(invalid("batch needs matching, non-empty samples and labels"));
    }
    let parts: Vec<(f64, Vec<f64>)> = xs
        .par_iter()
        .zip(ys.par_iter())
        .map(|(x, &y)| model.sample_gradient(x, y, cfg))
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; model.param_count()];
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let w = 1.0 / xs.len() as f64;
    for g in &mut grad {
        *g *= w;
    }
    Ok((loss * w, grad))
}

fn run_training(model: &mut EcnnModel, data: &Dataset, cfg: &TrainConfig, adversarial: Option<&AttackConfig>) -> Result<Vec<EpochStats>> {
    cfg.validate(data)?;
    check_model(model, data)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = rng::stream(cfg.seed, "train");
    let mut params = model.params();
    let mut velocity = vec![0.0; params.len()];
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut xs: Vec<Vec<f64>> = chunk.iter().map(|&i| data.features[i].clone()).collect();
            let mut ys: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            if let Some(att) = adversarial {
                let batch_seed = rng::derive_seed(cfg.seed, &format!("adv-{epoch}-{b}"));
                let snapshot = &*model;
                let adv: Vec<Vec<f64>> = chunk
                    .par_iter()
                    .enumerate()
                    .map(|(k, &i)| {
                        let c = AttackConfig { family: AttackFamily::Pgd, seed: rng::derive_seed(batch_seed, &k.to_string()), ..att.clone() };
                        Ok(attacks::pgd(snapshot, &data.features[i], data.labels[i], &c)?.adversarial)
                    })
                    .collect::<Result<_>>()?;
                xs.extend(adv);
                ys.extend(chunk.iter().map(|&i| data.labels[i]));
            }
            let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let (loss, grad) = batch_gradient(model, &refs, &ys, &cfg.loss)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v - lr * g;
                *p += *v;
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence { epoch, batch: b, loss: f64::NAN });
            }
            model.set_params(&params)?;
            total += loss;
            batches += 1;
        }
        history.push(EpochStats { epoch, learning_rate: lr, loss: total / batches as f64 });
    }
    Ok(history)
}

/// Mini-batch SGD with momentum on the joint loss; updates `model` in place.
pub fn train(model: &mut EcnnModel, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochStats>> {
    run_training(model, data, cfg, None)
}

/// Training where every mini-batch is joined 1:1 by PGD (cross entropy)
/// examples crafted against the current parameters.
pub fn adversarial_train(model: &mut EcnnModel, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochStats>> {
    let att = cfg.adversarial.as_ref().ok_or_else(|| invalid("adversarial training needs an attack config"))?;
    run_training(model, data, cfg, Some(att))
}

/// Writes `epoch,learning_rate,loss` rows.
pub fn save_loss_log(path: &Path, history: &[EpochStats]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io { path: path.to_path_buf(), source: e };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    for h in history {
        w.serialize(h).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class_accuracy: Vec<f64>,
}

/// Clean accuracy, or accuracy on attacked inputs when `attack` is given.
pub fn evaluate(model: &EcnnModel, data: &Dataset, attack: Option<&AttackConfig>) -> Result<Evaluation> {
    check_model(model, data)?;
    if data.is_empty() {
        return Err(invalid("empty dataset"));
    }
    let preds: Vec<usize> = match attack {
        None => data.features.par_iter().map(|x| model.predict(x)).collect::<Result<_>>()?,
        Some(cfg) => attacks::attack_dataset(model, data, cfg)?.into_iter().map(|o| o.predicted).collect(),
    };
    let m = data.num_classes;
    let mut confusion = vec![vec![0usize; m]; m];
    for (&y, &p) in data.labels.iter().zip(&preds) {
        confusion[y][p] += 1;
    }
    let correct: usize = (0..m).map(|c| confusion[c][c]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            if n == 0 {
                0.0
            } else {
                row[c] as f64 / n as f64
            }
        })
        .collect();
    Ok(Evaluation { accuracy: correct as f64 / data.len() as f64, confusion, per_class_accuracy })
}

/// Entry `(i, j)`: meta-class accuracy of branch `j` on PGD examples crafted
/// against branch `i` alone (cross entropy on that branch's meta-classes).
pub fn transfer_matrix(model: &EcnnModel, data: &Dataset, cfg: &AttackConfig) -> Result<Vec<Vec<f64>>> {
    check_model(model, data)?;
    cfg.validate()?;
    if data.is_empty() {
        return Err(invalid("empty dataset"));
    }
    let n = model.code_length();
    let code = model.code_matrix();
    let mut out = vec![vec![0.0; n]; n];
    for (i, row) in out.iter_mut().enumerate() {
        let view = BranchScores::new(model, i)?;
        let hits: Vec<Vec<usize>> = (0..data.len())
            .into_par_iter()
            .map(|k| {
                let y = data.labels[k];
                let c = AttackConfig { family: AttackFamily::Pgd, ..attacks::per_sample(cfg, k) };
                let adv = attacks::pgd(&view, &data.features[k], code.get(y, i), &c)?.adversarial;
                let z = model.encode(&adv)?.logits;
                Ok((0..n).map(|j| usize::from(ecnn::meta_class(&z[j]) == code.get(y, j))).collect())
            })
            .collect::<Result<_>>()?;
        for (j, v) in row.iter_mut().enumerate() {
            *v = hits.iter().map(|h| h[j]).sum::<usize>() as f64 / data.len() as f64;
        }
    }
    Ok(out)
}

/// Mean of the off-diagonal entries of a square matrix.
pub fn off_diagonal_mean(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n < 2 {
        return f64::NAN;
    }
    let mut s = 0.0;
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                s += v;
            }
        }
    }
    s / (n * (n - 1)) as f64
}
