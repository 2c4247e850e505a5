//! Command-line parameters. Every flag has a config-file key of the same name
//! (snake_case); values given on the command line win over the file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "ecnn", version, about = "Error-correcting neural network experiments")]
pub struct Cli {
    /// Worker threads for parallel sections (default: number of cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file of parameters, or a manifest from an earlier run
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Anneal a code matrix
    Design(DesignArgs),
    /// Train an ECNN and write a checkpoint
    Train(TrainArgs),
    /// Attack a trained model and write per-sample results
    Attack(AttackArgs),
    /// Clean (and optionally attacked) accuracy of a checkpoint
    Eval(EvalArgs),
    /// Branch-to-branch transferability matrix
    Transfer(TransferArgs),
    /// Numeric checks of the ensemble lemmas
    Verify(VerifyArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Design(_) => "design",
            Command::Train(_) => "train",
            Command::Attack(_) => "attack",
            Command::Eval(_) => "eval",
            Command::Transfer(_) => "transfer",
            Command::Verify(_) => "verify",
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct RunArgs {
    /// Root seed; components draw from named sub-streams of it
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: current directory)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct DesignArgs {
    #[arg(long)]
    pub classes: Option<usize>,
    /// Code length N
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub alphabet: Option<usize>,
    #[arg(long)]
    pub initial_temperature: Option<f64>,
    #[arg(long)]
    pub cooling_factor: Option<f64>,
    #[arg(long)]
    pub steps_per_temperature: Option<usize>,
    #[arg(long)]
    pub num_temperatures: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// CSV with numeric feature columns and an integer label column
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub label_column: Option<String>,
    /// Min-max scale CSV features to [0, 1]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub scale_unit: Option<bool>,
    /// Generate data instead of reading it: blobs, rings or grid
    #[arg(long)]
    pub synthetic: Option<String>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub samples_per_class: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Held-out fraction; split files are written next to the outputs
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Code matrix file; designed on the fly when absent
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub alphabet: Option<usize>,
    /// binary or qary
    #[arg(long)]
    pub head: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub front_widths: Option<Vec<usize>>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// hinge, cross_entropy or multiclass_hinge
    #[arg(long)]
    pub loss: Option<String>,
    /// Weight of the diversity term
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Mix PGD examples into every batch
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub adversarial: Option<bool>,
    #[arg(long)]
    pub adv_epsilon: Option<f64>,
    #[arg(long)]
    pub adv_step_alpha: Option<f64>,
    #[arg(long)]
    pub adv_iterations: Option<usize>,
}

/// Keys match the attack config; unset values keep its defaults.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct AttackParams {
    /// fgsm, bim, pgd, pgd_hinge, pgd_logits, jsma or cw_l2
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub step_alpha: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub random_start: Option<bool>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub jsma_theta: Option<f64>,
    #[arg(long)]
    pub jsma_gamma: Option<f64>,
    #[arg(long)]
    pub jsma_max_iterations: Option<usize>,
    #[arg(long)]
    pub cw_c: Option<f64>,
    #[arg(long)]
    pub cw_step: Option<f64>,
    #[arg(long)]
    pub cw_iterations: Option<usize>,
    #[arg(long)]
    pub hinge_c: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub clip_min: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub clip_max: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct AttackArgs {
    /// Checkpoint written by `train`
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub attack: AttackParams,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
}

pub type EvalArgs = AttackArgs;

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TransferArgs {
    /// Checkpoint to analyse; a model is trained first when absent
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub attack: TransferAttack,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
}

/// Attack settings for `transfer`; the model flags already claim `kappa`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TransferAttack {
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub step_alpha: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub random_start: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    /// Lemma number, 1 to 5
    #[arg(long)]
    pub lemma: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub branches: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub alphabet: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub sigma_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
}

/// Fills every unset flag from `file`, which may be a plain parameter object
/// or a run manifest for the same command.
pub fn merge<T: Serialize + DeserializeOwned>(command: &str, flags: &T, file: Option<&Value>) -> Result<T, CliError> {
    let Some(file) = file else {
        return Ok(serde_json::from_value(serde_json::to_value(flags).expect("args serialize")).expect("args round trip"));
    };
    let mut params = match file {
        Value::Object(map) if map.contains_key("command") && map.contains_key("parameters") => {
            if map["command"] != command {
                return Err(CliError::Usage(format!("config is a manifest for `{}`, not `{command}`", map["command"])));
            }
            match &map["parameters"] {
                Value::Object(p) => p.clone(),
                _ => return Err(CliError::Usage("manifest parameters must be an object".into())),
            }
        }
        Value::Object(map) => map.clone(),
        _ => return Err(CliError::Usage("config must be a JSON object".into())),
    };
    let Value::Object(given) = serde_json::to_value(flags).expect("args serialize") else {
        unreachable!("args serialize to an object")
    };
    if let Some(unknown) = params.keys().find(|k| !given.contains_key(*k)) {
        return Err(CliError::Usage(format!("unknown config key `{unknown}` for `{command}`")));
    }
    for (k, v) in given {
        if !v.is_null() {
            params.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(params)).map_err(|e| CliError::Usage(format!("config: {e}")))
}

/// Non-null entries of `v` as an object, for deserializing into a library
/// config with its own defaults.
pub fn set_fields(v: &impl Serialize) -> Map<String, Value> {
    match serde_json::to_value(v).expect("args serialize") {
        Value::Object(m) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    }
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    #[test]
    fn flags_win_over_file_values() {
        let flags = DesignArgs { classes: Some(5), ..Default::default() };
        let file = json!({ "classes": 3, "length": 7 });
        let merged = merge("design", &flags, Some(&file)).unwrap();
        assert_eq!(merged.classes, Some(5));
        assert_eq!(merged.length, Some(7));
        assert_eq!(merged.alphabet, None);
    }

    #[test]
    fn flattened_keys_are_accepted_and_unknown_keys_rejected() {
        let merged = merge("design", &DesignArgs::default(), Some(&json!({ "seed": 4, "out": "x" }))).unwrap();
        assert_eq!(merged.run.seed, Some(4));
        assert!(matches!(merge("design", &DesignArgs::default(), Some(&json!({ "epochs": 4 }))), Err(CliError::Usage(_))));
        assert!(matches!(merge("design", &DesignArgs::default(), Some(&json!([1]))), Err(CliError::Usage(_))));
    }

    #[test]
    fn manifests_supply_parameters_for_their_own_command() {
        let manifest = json!({ "command": "verify", "parameters": { "lemma": 4, "gamma": 0.2 } });
        let merged = merge("verify", &VerifyArgs::default(), Some(&manifest)).unwrap();
        assert_eq!((merged.lemma, merged.gamma), (Some(4), Some(0.2)));
        assert!(matches!(merge("design", &DesignArgs::default(), Some(&manifest)), Err(CliError::Usage(_))));
    }

    #[test]
    fn set_fields_drops_unset_values() {
        let a = AttackParams { epsilon: Some(0.2), ..Default::default() };
        let m = set_fields(&a);
        assert_eq!(m.len(), 1);
        assert_eq!(m["epsilon"], json!(0.2));
    }
}
