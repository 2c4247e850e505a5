use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use ecnn_core::annealer::{self, AnnealSchedule};
use ecnn_core::attacks::{self, AttackConfig, AttackFamily, AttackOutcome};
use ecnn_core::codebook::{self, CodeMatrix};
use ecnn_core::ecnn::{self, ArchConfig, EcnnModel, HeadKind, LossConfig, LossKind};
use ecnn_core::lemmalab;
use ecnn_core::rng;
use ecnn_core::trainer::{self, Dataset, SyntheticKind, SyntheticSpec, TrainConfig};
use serde::Serialize;
use serde_json::{json, Value};

use crate::params::{set_fields, AttackArgs, DataArgs, DesignArgs, ModelArgs, RunArgs, TrainArgs, TransferArgs, VerifyArgs};
use crate::CliError;

/// Files read and written by one command.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Artifacts {
    fn write(&mut self, path: PathBuf, text: &str) -> Result<(), CliError> {
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path);
        Ok(())
    }

    fn write_json(&mut self, path: PathBuf, v: &impl Serialize) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(v).expect("report serializes");
        self.write(path, &text)
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T, CliError> {
    v.clone().ok_or_else(|| CliError::Usage(format!("missing required --{flag}")))
}

fn parse_enum<T: serde::de::DeserializeOwned>(v: &str, flag: &str) -> Result<T, CliError> {
    serde_json::from_value(Value::String(v.to_string())).map_err(|_| CliError::Usage(format!("invalid value `{v}` for --{flag}")))
}

/// Seed and output directory, with defaults filled in.
fn prepare_run(run: &mut RunArgs) -> Result<(u64, PathBuf), CliError> {
    let seed = *run.seed.get_or_insert(0);
    let out = run.out.get_or_insert_with(|| PathBuf::from(".")).clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok((seed, out))
}

pub fn design(a: &mut DesignArgs) -> Result<(Artifacts, String), CliError> {
    let classes = required(&a.classes, "classes")?;
    let length = required(&a.length, "length")?;
    let alphabet = *a.alphabet.get_or_insert(2);
    let d = AnnealSchedule::default();
    let (seed, out) = prepare_run(&mut a.run)?;
    let schedule = AnnealSchedule {
        initial_temperature: *a.initial_temperature.get_or_insert(d.initial_temperature),
        cooling_factor: *a.cooling_factor.get_or_insert(d.cooling_factor),
        steps_per_temperature: *a.steps_per_temperature.get_or_insert(d.steps_per_temperature),
        num_temperatures: *a.num_temperatures.get_or_insert(d.num_temperatures),
        seed: rng::derive_seed(seed, "design"),
    };
    schedule.validate().map_err(usage)?;
    let result = annealer::design_matrix(classes, length, alphabet, &schedule).map_err(usage)?;
    let mut art = Artifacts::default();
    art.write(out.join("matrix.txt"), &result.matrix.to_text())?;
    art.write(out.join("design_report.json"), &result.report_json())?;
    let summary = format!("designed {classes}x{length} q={alphabet}: min_hamming {}, min_vi {:.6}", result.min_hamming, result.min_vi);
    Ok((art, summary))
}

fn load_data(d: &mut DataArgs, seed: u64, art: &mut Artifacts) -> Result<Dataset, CliError> {
    match (&d.data, &d.synthetic) {
        (Some(_), Some(_)) => Err(usage("--data and --synthetic are mutually exclusive")),
        (Some(path), None) => {
            let label = d.label_column.get_or_insert_with(|| "label".into()).clone();
            let scale = *d.scale_unit.get_or_insert(false);
            art.inputs.push(path.clone());
            Ok(trainer::load_csv(path, &label, scale).with_context(|| format!("reading {}", path.display()))?)
        }
        (None, Some(kind)) => {
            let kind: SyntheticKind = parse_enum(kind, "synthetic")?;
            let spec = SyntheticSpec {
                kind,
                num_classes: *d.classes.get_or_insert(4),
                samples_per_class: *d.samples_per_class.get_or_insert(100),
                noise_sigma: *d.noise_sigma.get_or_insert(0.05),
                dim: *d.dim.get_or_insert(2),
                seed: rng::derive_seed(seed, "data"),
            };
            trainer::make_synthetic(&spec).map_err(usage)
        }
        (None, None) => Err(usage("one of --data or --synthetic is required")),
    }
}

/// Splits off the held-out part when `--test-fraction` is set and writes both
/// halves to `out`. Returns (training, evaluation) sets.
fn split_data(d: &mut DataArgs, data: Dataset, seed: u64, out: &Path, art: &mut Artifacts) -> Result<(Dataset, Dataset), CliError> {
    let tf = *d.test_fraction.get_or_insert(0.0);
    if tf == 0.0 {
        return Ok((data.clone(), data));
    }
    if !(0.0..1.0).contains(&tf) {
        return Err(usage("--test-fraction must lie in [0, 1)"));
    }
    let (train, test) = data.split(1.0 - tf, rng::derive_seed(seed, "split")).map_err(usage)?;
    for (name, part) in [("train.csv", &train), ("test.csv", &test)] {
        let path = out.join(name);
        trainer::save_csv(&path, part).with_context(|| format!("writing {}", path.display()))?;
        art.outputs.push(path);
    }
    Ok((train, test))
}

fn fit(m: &mut ModelArgs, data: &Dataset, seed: u64, out: &Path, art: &mut Artifacts) -> Result<EcnnModel, CliError> {
    let code = match &m.matrix {
        Some(path) => {
            art.inputs.push(path.clone());
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            CodeMatrix::from_text(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let length = *m.length.get_or_insert(8);
            let alphabet = *m.alphabet.get_or_insert(2);
            let schedule = AnnealSchedule { seed: rng::derive_seed(seed, "design"), ..Default::default() };
            annealer::design_matrix(data.num_classes, length, alphabet, &schedule).map_err(usage)?.matrix
        }
    };
    if code.num_classes() != data.num_classes {
        return Err(usage(format!("code matrix has {} rows but the data has {} classes", code.num_classes(), data.num_classes)));
    }
    art.write(out.join("matrix.txt"), &code.to_text())?;
    let default_head = if code.alphabet() == 2 { "binary" } else { "qary" };
    let head: HeadKind = parse_enum(m.head.get_or_insert_with(|| default_head.into()), "head")?;
    let d = ArchConfig::default();
    let arch = ArchConfig {
        front_widths: m.front_widths.get_or_insert(d.front_widths).clone(),
        feature_dim: *m.feature_dim.get_or_insert(d.feature_dim),
        head,
    };
    let kind: LossKind = parse_enum(m.loss.get_or_insert_with(|| "cross_entropy".into()), "loss")?;
    let t = TrainConfig::default();
    let adversarial = if *m.adversarial.get_or_insert(false) {
        let eps = *m.adv_epsilon.get_or_insert(0.1);
        Some(AttackConfig {
            family: AttackFamily::Pgd,
            epsilon: eps,
            step_alpha: *m.adv_step_alpha.get_or_insert(eps / 4.0),
            iterations: *m.adv_iterations.get_or_insert(10),
            seed: rng::derive_seed(seed, "attack"),
            ..Default::default()
        })
    } else {
        None
    };
    let cfg = TrainConfig {
        epochs: *m.epochs.get_or_insert(t.epochs),
        batch_size: *m.batch_size.get_or_insert(t.batch_size),
        learning_rate: *m.learning_rate.get_or_insert(t.learning_rate),
        momentum: *m.momentum.get_or_insert(t.momentum),
        loss: LossConfig { kind, gamma: *m.gamma.get_or_insert(0.0), kappa: *m.kappa.get_or_insert(0.0) },
        adversarial,
        seed: rng::derive_seed(seed, "train"),
    };
    cfg.validate(data).map_err(usage)?;
    let mut model = EcnnModel::random(data.dim(), code, &arch, &mut rng::stream(seed, "init")).map_err(usage)?;
    let history = if cfg.adversarial.is_some() {
        trainer::adversarial_train(&mut model, data, &cfg)?
    } else {
        trainer::train(&mut model, data, &cfg)?
    };
    let log = out.join("loss_log.csv");
    trainer::save_loss_log(&log, &history)?;
    art.outputs.push(log);
    art.write(out.join("checkpoint.json"), &model.to_json())?;
    Ok(model)
}

pub fn train(a: &mut TrainArgs) -> Result<(Artifacts, String), CliError> {
    let (seed, out) = prepare_run(&mut a.run)?;
    let mut art = Artifacts::default();
    let data = load_data(&mut a.data, seed, &mut art)?;
    let (train_set, test_set) = split_data(&mut a.data, data, seed, &out, &mut art)?;
    let model = fit(&mut a.model, &train_set, seed, &out, &mut art)?;
    let train_acc = trainer::evaluate(&model, &train_set, None)?.accuracy;
    let test_acc = trainer::evaluate(&model, &test_set, None)?.accuracy;
    art.write_json(out.join("train_report.json"), &json!({ "train_accuracy": train_acc, "test_accuracy": test_acc }))?;
    Ok((art, format!("train accuracy {train_acc:.4}, test accuracy {test_acc:.4}")))
}

fn load_model(path: &Path, art: &mut Artifacts) -> Result<EcnnModel, CliError> {
    art.inputs.push(path.to_path_buf());
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(EcnnModel::from_json(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn attack_config(a: &mut AttackArgs, seed: u64) -> Result<AttackConfig, CliError> {
    let mut fields = set_fields(&a.attack);
    fields.insert("seed".into(), json!(rng::derive_seed(seed, "attack")));
    let cfg: AttackConfig = serde_json::from_value(Value::Object(fields)).map_err(|e| usage(format!("attack parameters: {e}")))?;
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

/// Records the resolved attack settings back into the parameters.
fn record_attack(a: &mut AttackArgs, cfg: &AttackConfig) {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    v.as_object_mut().expect("object").remove("seed");
    a.attack = serde_json::from_value(v).expect("attack keys match");
}

#[derive(Serialize)]
struct AttackSummary {
    family: &'static str,
    samples: usize,
    clean_accuracy: f64,
    adversarial_accuracy: f64,
    success_rate: f64,
    mean_l2: f64,
    mean_linf: f64,
}

fn summarize(model: &EcnnModel, data: &Dataset, cfg: &AttackConfig, outcomes: &[AttackOutcome]) -> Result<AttackSummary, CliError> {
    let n = data.len() as f64;
    let clean = trainer::evaluate(model, data, None)?.accuracy;
    let correct = outcomes.iter().zip(&data.labels).filter(|(o, &y)| o.predicted == y).count();
    Ok(AttackSummary {
        family: cfg.family.name(),
        samples: data.len(),
        clean_accuracy: clean,
        adversarial_accuracy: correct as f64 / n,
        success_rate: outcomes.iter().filter(|o| o.success).count() as f64 / n,
        mean_l2: outcomes.iter().map(|o| o.l2).sum::<f64>() / n,
        mean_linf: outcomes.iter().map(|o| o.linf).sum::<f64>() / n,
    })
}

pub fn attack(a: &mut AttackArgs) -> Result<(Artifacts, String), CliError> {
    let path = required(&a.checkpoint, "checkpoint")?;
    let (seed, out) = prepare_run(&mut a.run)?;
    let cfg = attack_config(a, seed)?;
    record_attack(a, &cfg);
    let mut art = Artifacts::default();
    let model = load_model(&path, &mut art)?;
    let data = load_data(&mut a.data, seed, &mut art)?;
    let outcomes = attacks::attack_dataset(&model, &data, &cfg).map_err(usage)?;
    let csv = out.join("attacks.csv");
    attacks::save_csv(&csv, &cfg, &data.labels, &outcomes)?;
    art.outputs.push(csv);
    let summary = summarize(&model, &data, &cfg, &outcomes)?;
    art.write_json(out.join("attack_report.json"), &summary)?;
    let line = format!(
        "{}: clean accuracy {:.4}, adversarial accuracy {:.4}",
        summary.family, summary.clean_accuracy, summary.adversarial_accuracy
    );
    Ok((art, line))
}

pub fn eval(a: &mut AttackArgs) -> Result<(Artifacts, String), CliError> {
    let path = required(&a.checkpoint, "checkpoint")?;
    let (seed, out) = prepare_run(&mut a.run)?;
    let attacked = a.attack.family.is_some();
    let cfg = if attacked {
        let cfg = attack_config(a, seed)?;
        record_attack(a, &cfg);
        Some(cfg)
    } else {
        None
    };
    let mut art = Artifacts::default();
    let model = load_model(&path, &mut art)?;
    let data = load_data(&mut a.data, seed, &mut art)?;
    let clean = trainer::evaluate(&model, &data, None)?;
    let under_attack = cfg.as_ref().map(|c| trainer::evaluate(&model, &data, Some(c))).transpose().map_err(usage)?;
    let mut line = format!("clean accuracy {:.4}", clean.accuracy);
    if let Some(e) = &under_attack {
        line.push_str(&format!(", attacked accuracy {:.4}", e.accuracy));
    }
    art.write_json(out.join("eval_report.json"), &json!({ "clean": clean, "attacked": under_attack }))?;
    Ok((art, line))
}

pub fn transfer(a: &mut TransferArgs) -> Result<(Artifacts, String), CliError> {
    let (seed, out) = prepare_run(&mut a.run)?;
    let mut art = Artifacts::default();
    let d = AttackConfig::default();
    let eps = *a.attack.epsilon.get_or_insert(d.epsilon);
    let cfg = AttackConfig {
        family: AttackFamily::Pgd,
        epsilon: eps,
        step_alpha: *a.attack.step_alpha.get_or_insert(eps / 8.0),
        iterations: *a.attack.iterations.get_or_insert(40),
        random_start: *a.attack.random_start.get_or_insert(d.random_start),
        seed: rng::derive_seed(seed, "attack"),
        ..d
    };
    cfg.validate().map_err(usage)?;
    let data = load_data(&mut a.data, seed, &mut art)?;
    let (model, eval_set) = match &a.checkpoint {
        Some(path) => {
            if a.data.test_fraction.is_some() || a.model.epochs.is_some() {
                return Err(usage("training flags cannot be combined with --checkpoint"));
            }
            (load_model(path, &mut art)?, data)
        }
        None => {
            let (train_set, test_set) = split_data(&mut a.data, data, seed, &out, &mut art)?;
            (fit(&mut a.model, &train_set, seed, &out, &mut art)?, test_set)
        }
    };
    let matrix = trainer::transfer_matrix(&model, &eval_set, &cfg).map_err(usage)?;
    let off = trainer::off_diagonal_mean(&matrix);
    let mut csv = String::from("source");
    for j in 0..matrix.len() {
        csv.push_str(&format!(",branch{j}"));
    }
    csv.push('\n');
    for (i, row) in matrix.iter().enumerate() {
        csv.push_str(&format!("branch{i}"));
        for v in row {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    art.write(out.join("transfer.csv"), &csv)?;
    art.write_json(out.join("transfer_report.json"), &json!({ "off_diagonal_mean": off, "matrix": matrix }))?;
    Ok((art, format!("mean off-diagonal meta-accuracy {off:.4}")))
}

#[derive(Serialize)]
struct Lemma4Report {
    gamma: f64,
    zeta: f64,
    logit: f64,
    residual: f64,
}

#[derive(Serialize)]
struct Lemma5Report {
    classes: usize,
    alphabet: usize,
    max_mutual_information: f64,
    log_q: f64,
    abs_difference: f64,
    cluster_sizes: Vec<usize>,
}

pub fn verify(a: &mut VerifyArgs) -> Result<(Artifacts, String), CliError> {
    let lemma = required(&a.lemma, "lemma")?;
    let (seed, out) = prepare_run(&mut a.run)?;
    let stream = rng::derive_seed(seed, "verify");
    let (report, line): (Value, String) = match lemma {
        1 => {
            let r = lemmalab::verify_lemma1(
                *a.feature_dim.get_or_insert(16),
                *a.samples.get_or_insert(8),
                *a.branches.get_or_insert(4),
                *a.classes.get_or_insert(3),
                *a.trials.get_or_insert(50),
                stream,
            )
            .map_err(usage)?;
            let line = format!("a pass rate {}, b pass rate {}, b min residual {:.3e}, c witnessed {}", r.a_pass_rate, r.b_pass_rate, r.b_min_residual, r.c_witnessed);
            (serde_json::to_value(r).expect("report serializes"), line)
        }
        2 => {
            let r = lemmalab::verify_lemma2(
                *a.feature_dim.get_or_insert(4),
                *a.classes.get_or_insert(3),
                *a.branches.get_or_insert(8),
                *a.trials.get_or_insert(50),
                stream,
            )
            .map_err(usage)?;
            let line = format!("a pass rate {}, shared head infeasible rate {} (min residual {:.3e})", r.a_pass_rate, r.b_infeasible_rate, r.b_min_residual);
            (serde_json::to_value(r).expect("report serializes"), line)
        }
        3 => {
            let grid = a.sigma_grid.get_or_insert_with(|| vec![0.0, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0]).clone();
            let r = lemmalab::verify_lemma3(
                *a.feature_dim.get_or_insert(24),
                *a.classes.get_or_insert(3),
                *a.branches.get_or_insert(4),
                &grid,
                *a.trials.get_or_insert(200),
                stream,
            )
            .map_err(usage)?;
            let curve: Vec<String> = r.curve.iter().map(|p| format!("{}:{:.3}", p.sigma, p.meta_accuracy)).collect();
            let line = format!("accuracy below bound {}, curve {}", r.below_bound_accuracy, curve.join(" "));
            (serde_json::to_value(r).expect("report serializes"), line)
        }
        4 => {
            let gamma = *a.gamma.get_or_insert(0.1);
            let fp = ecnn::smoothing_fixed_point(gamma).map_err(usage)?;
            let line = format!("gamma {gamma}: zeta {:.12}, residual {:.3e}", fp.zeta, fp.residual);
            (json!(Lemma4Report { gamma, zeta: fp.zeta, logit: fp.logit, residual: fp.residual }), line)
        }
        5 => {
            let classes = *a.classes.get_or_insert(10);
            let alphabet = *a.alphabet.get_or_insert(2);
            let (v, sizes) = codebook::max_mutual_information(classes, alphabet).map_err(usage)?;
            let log_q = (alphabet as f64).ln();
            let r = Lemma5Report { classes, alphabet, max_mutual_information: v, log_q, abs_difference: (v - log_q).abs(), cluster_sizes: sizes };
            let line = format!("max I = {v:.15}, log q = {log_q:.15}, |difference| = {:.3e}", r.abs_difference);
            (json!(r), line)
        }
        n => return Err(usage(format!("--lemma must be 1 to 5, got {n}"))),
    };
    let mut art = Artifacts::default();
    art.write_json(out.join(format!("verify_lemma{lemma}.json")), &report)?;
    Ok((art, line))
}
