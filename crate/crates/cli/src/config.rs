//! Flat, layered run configuration.
//!
//! Every setting is a flat key. Values come from a TOML file, then `MEG_<KEY>`
//! environment variables, then `--set key=value` flags; later layers win.
//! Unknown keys are rejected in every layer, and `seed` is mandatory.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use meg_core::data::{CsvColumns, Task, DEFAULT_FRACTIONS};
use meg_core::gnn::TrainConfig;
use meg_core::rl::EpisodeConfig;
use meg_core::similarity::SimilarityWeights;
use meg_core::Element;

pub const ENV_PREFIX: &str = "MEG_";

/// Raw key/value settings from one source.
pub type Layer = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {reason}")]
    File { path: String, reason: String },
    #[error("unknown config key {key:?} (from {source_name})")]
    UnknownKey { key: String, source_name: String },
    #[error("config key {key:?} has invalid value {value:?}: {reason}")]
    Invalid {
        key: String,
        value: String,
        reason: String,
    },
    #[error("config key `seed` is required (no default seed is used)")]
    MissingSeed,
    #[error("malformed override {0:?}, expected key=value")]
    MalformedOverride(String),
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "seed for every random stream (required)"),
    ("task", "classification | regression"),
    ("n_classes", "number of classes for classification"),
    ("smiles_column", "CSV column holding SMILES"),
    ("label_column", "CSV column holding labels"),
    ("split_train", "training fraction"),
    ("split_val", "validation fraction"),
    ("split_test", "test fraction"),
    ("hidden_size", "GraphConv width"),
    ("head_sizes", "hidden widths of the prediction head"),
    ("dropout", "head dropout rate"),
    ("batch_size", "predictor mini-batch size"),
    ("learning_rate", "predictor Adam learning rate"),
    ("epochs", "maximum predictor epochs"),
    ("patience", "early-stopping patience in epochs"),
    ("fingerprint_radius", "Morgan radius"),
    ("fingerprint_width", "fingerprint bits (power of two)"),
    ("alpha_tanimoto", "Tanimoto weight in the similarity"),
    ("alpha_cosine", "embedding-cosine weight in the similarity"),
    ("alpha", "prediction-term weight in the reward"),
    ("max_steps", "edits per episode"),
    ("include_noop", "allow the no-op action"),
    ("gamma", "discount factor"),
    ("epsilon0", "initial exploration rate"),
    ("decay_lambda", "per-episode exploration decay"),
    (
        "decaying_policy",
        "decay epsilon (true) or keep it constant",
    ),
    ("train_epochs", "agent training episodes per explanation"),
    ("top_k", "counterfactuals to report"),
    ("vocab", "elements the agent may add"),
    ("q_hidden", "Q-network hidden widths"),
    ("replay_capacity", "replay memory size"),
    ("q_batch_size", "Q-network replay batch size"),
    ("q_learning_rate", "Q-network Adam learning rate"),
    ("target_sync", "target network sync period in updates"),
    (
        "regression_target",
        "reference score of the regression direction gate",
    ),
];

fn is_known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

fn check_keys(layer: &Layer, source_name: &str) -> Result<(), ConfigError> {
    match layer.keys().find(|k| !is_known(k)) {
        Some(key) => Err(ConfigError::UnknownKey {
            key: key.clone(),
            source_name: source_name.to_string(),
        }),
        None => Ok(()),
    }
}

fn toml_scalar(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Parses a flat TOML document. Arrays become comma-separated values.
pub fn file_layer(text: &str, path: &str) -> Result<Layer, ConfigError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::File {
            path: path.to_string(),
            reason: e.to_string(),
        })?;
    let mut layer = Layer::new();
    for (key, value) in table {
        let text = match &value {
            toml::Value::Array(items) => items
                .iter()
                .map(toml_scalar)
                .collect::<Option<Vec<_>>>()
                .map(|v| v.join(",")),
            other => toml_scalar(other),
        };
        let text = text.ok_or_else(|| ConfigError::Invalid {
            key: key.clone(),
            value: value.to_string(),
            reason: "nested tables are not supported; use flat keys".into(),
        })?;
        layer.insert(key, text);
    }
    check_keys(&layer, path)?;
    Ok(layer)
}

pub fn read_file_layer(path: &Path) -> Result<Layer, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    file_layer(&text, &path.display().to_string())
}

/// `MEG_<KEY>` variables, with the key lower-cased.
pub fn env_layer<I>(vars: I) -> Result<Layer, ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let layer: Layer = vars
        .into_iter()
        .filter_map(|(k, v)| {
            k.strip_prefix(ENV_PREFIX)
                .map(|k| (k.to_ascii_lowercase(), v))
        })
        .collect();
    check_keys(&layer, "environment")?;
    Ok(layer)
}

/// `key=value` overrides from the command line.
pub fn flag_layer(overrides: &[String]) -> Result<Layer, ConfigError> {
    let mut layer = Layer::new();
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| ConfigError::MalformedOverride(o.clone()))?;
        layer.insert(k.trim().to_string(), v.trim().to_string());
    }
    check_keys(&layer, "command line")?;
    Ok(layer)
}

/// Merges layers in increasing precedence: a key set in a later layer
/// replaces the same key from any earlier one.
pub fn merge_layers(layers: &[&Layer]) -> Layer {
    let mut out = Layer::new();
    for layer in layers {
        for (k, v) in *layer {
            out.insert(k.clone(), v.clone());
        }
    }
    out
}

/// Fully validated settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Set only when the `task` key was given explicitly.
    pub task_override: Option<Task>,
    pub task: Task,
    pub columns: CsvColumns,
    pub fractions: (f64, f64, f64),
    pub train: TrainConfig,
    pub episode: EpisodeConfig,
}

fn invalid(key: &str, value: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn parse<T>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e| invalid(key, value, e))
}

fn parse_list<T>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    let inner = value.trim().trim_start_matches('[').trim_end_matches(']');
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|item| parse(key, item.trim().trim_matches('"')))
        .collect()
}

fn parse_fraction(key: &str, value: &str) -> Result<f64, ConfigError> {
    let f: f64 = parse(key, value)?;
    if !(0.0..=1.0).contains(&f) {
        return Err(invalid(key, value, "must be within [0, 1]"));
    }
    Ok(f)
}

impl RunConfig {
    pub fn from_layer(layer: &Layer) -> Result<Self, ConfigError> {
        check_keys(layer, "merged configuration")?;
        let get = |k: &str| layer.get(k).map(String::as_str);
        let seed: u64 = match get("seed") {
            Some(v) => parse("seed", v)?,
            None => return Err(ConfigError::MissingSeed),
        };
        let n_classes: usize = match get("n_classes") {
            Some(v) => parse("n_classes", v)?,
            None => 2,
        };
        if n_classes < 2 {
            return Err(invalid(
                "n_classes",
                &n_classes.to_string(),
                "need at least 2 classes",
            ));
        }
        let task_override = match get("task") {
            None => None,
            Some("classification") => Some(Task::Classification { n_classes }),
            Some("regression") => Some(Task::Regression),
            Some(other) => {
                return Err(invalid(
                    "task",
                    other,
                    "expected classification or regression",
                ))
            }
        };
        let task = task_override.unwrap_or(Task::Classification { n_classes });

        let mut cfg = RunConfig {
            seed,
            task_override,
            task,
            columns: CsvColumns::default(),
            fractions: DEFAULT_FRACTIONS,
            train: TrainConfig {
                seed,
                ..TrainConfig::for_task(task)
            },
            episode: EpisodeConfig {
                seed,
                ..EpisodeConfig::default()
            },
        };
        let (mut alpha_t, mut alpha_c) = (None, None);
        for (key, value) in layer {
            let v = value.as_str();
            let k = key.as_str();
            match k {
                "seed" | "task" | "n_classes" => {}
                "smiles_column" => cfg.columns.smiles = v.to_string(),
                "label_column" => cfg.columns.label = v.to_string(),
                "split_train" => cfg.fractions.0 = parse_fraction(k, v)?,
                "split_val" => cfg.fractions.1 = parse_fraction(k, v)?,
                "split_test" => cfg.fractions.2 = parse_fraction(k, v)?,
                "hidden_size" => cfg.train.hidden_size = parse(k, v)?,
                "head_sizes" => cfg.train.head_sizes = parse_list(k, v)?,
                "dropout" => cfg.train.dropout = parse(k, v)?,
                "batch_size" => cfg.train.batch_size = parse(k, v)?,
                "learning_rate" => cfg.train.learning_rate = parse(k, v)?,
                "epochs" => cfg.train.epochs = parse(k, v)?,
                "patience" => cfg.train.patience = parse(k, v)?,
                "fingerprint_radius" => cfg.episode.fingerprint.radius = parse(k, v)?,
                "fingerprint_width" => cfg.episode.fingerprint.width = parse(k, v)?,
                "alpha_tanimoto" => alpha_t = Some(parse::<f64>(k, v)?),
                "alpha_cosine" => alpha_c = Some(parse::<f64>(k, v)?),
                "alpha" => cfg.episode.alpha = parse(k, v)?,
                "max_steps" => cfg.episode.max_steps = parse(k, v)?,
                "include_noop" => cfg.episode.include_noop = parse(k, v)?,
                "gamma" => cfg.episode.gamma = parse(k, v)?,
                "epsilon0" => cfg.episode.epsilon0 = parse(k, v)?,
                "decay_lambda" => cfg.episode.decay_lambda = parse(k, v)?,
                "decaying_policy" => cfg.episode.decaying_policy = parse(k, v)?,
                "train_epochs" => cfg.episode.train_epochs = parse(k, v)?,
                "top_k" => cfg.episode.top_k = parse(k, v)?,
                "vocab" => cfg.episode.vocab = parse_list::<Element>(k, v)?,
                "q_hidden" => cfg.episode.q_hidden = parse_list(k, v)?,
                "replay_capacity" => cfg.episode.replay_capacity = parse(k, v)?,
                "q_batch_size" => cfg.episode.batch_size = parse(k, v)?,
                "q_learning_rate" => cfg.episode.learning_rate = parse(k, v)?,
                "target_sync" => cfg.episode.target_sync = parse(k, v)?,
                "regression_target" => cfg.episode.regression_target = Some(parse(k, v)?),
                _ => unreachable!("keys checked above"),
            }
        }
        if alpha_t.is_some() || alpha_c.is_some() {
            // one weight given: the other is its complement
            let t = alpha_t.unwrap_or_else(|| 1.0 - alpha_c.unwrap_or(0.5));
            let c = alpha_c.unwrap_or(1.0 - t);
            cfg.episode.similarity_weights = SimilarityWeights::new(t, c)
                .map_err(|e| invalid("alpha_tanimoto", &format!("{t}, {c}"), e))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let (a, b, c) = self.fractions;
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(invalid(
                "split_train",
                &format!("{a}, {b}, {c}"),
                "split fractions must sum to 1",
            ));
        }
        let t = &self.train;
        if t.hidden_size == 0 || t.batch_size == 0 || t.epochs == 0 {
            return Err(invalid(
                "hidden_size",
                &format!("{}/{}/{}", t.hidden_size, t.batch_size, t.epochs),
                "hidden_size, batch_size and epochs must be positive",
            ));
        }
        if t.head_sizes.contains(&0) {
            return Err(invalid(
                "head_sizes",
                &format!("{:?}", t.head_sizes),
                "widths must be positive",
            ));
        }
        if !(0.0..1.0).contains(&t.dropout) {
            return Err(invalid(
                "dropout",
                &t.dropout.to_string(),
                "must be within [0, 1)",
            ));
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(invalid(
                "learning_rate",
                &t.learning_rate.to_string(),
                "must be positive",
            ));
        }
        if self.episode.q_hidden.contains(&0) {
            return Err(invalid(
                "q_hidden",
                &format!("{:?}", self.episode.q_hidden),
                "widths must be positive",
            ));
        }
        self.episode
            .validate()
            .map_err(|e| invalid("episode", "", e))?;
        Ok(())
    }
}

/// Reads and merges all three layers.
pub fn load(
    file: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    overrides: &[String],
) -> Result<RunConfig, ConfigError> {
    let file = match file {
        Some(p) => read_file_layer(p)?,
        None => Layer::new(),
    };
    let env = env_layer(env)?;
    let flags = flag_layer(overrides)?;
    RunConfig::from_layer(&merge_layers(&[&file, &env, &flags]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layer(pairs: &[(&str, &str)]) -> Layer {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn seed_is_required() {
        assert_eq!(
            RunConfig::from_layer(&Layer::new()),
            Err(ConfigError::MissingSeed)
        );
        let cfg = RunConfig::from_layer(&layer(&[("seed", "7")])).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed, cfg.episode.seed), (7, 7, 7));
    }

    #[test]
    fn task_presets() {
        let c = RunConfig::from_layer(&layer(&[("seed", "1")])).unwrap();
        assert_eq!(c.train.hidden_size, 256);
        let r = RunConfig::from_layer(&layer(&[("seed", "1"), ("task", "regression")])).unwrap();
        assert_eq!(r.task, Task::Regression);
        assert_eq!((r.train.hidden_size, r.train.learning_rate), (32, 5e-4));
        let r = RunConfig::from_layer(&layer(&[
            ("seed", "1"),
            ("task", "regression"),
            ("hidden_size", "8"),
        ]))
        .unwrap();
        assert_eq!(r.train.hidden_size, 8);
    }

    #[test]
    fn rejects_unknown_and_bad_values() {
        assert!(matches!(
            RunConfig::from_layer(&layer(&[("seed", "1"), ("colour", "red")])),
            Err(ConfigError::UnknownKey { .. })
        ));
        assert!(matches!(
            RunConfig::from_layer(&layer(&[("seed", "1"), ("split_train", "0.9")])),
            Err(ConfigError::Invalid { .. })
        ));
        assert!(matches!(
            RunConfig::from_layer(&layer(&[("seed", "x")])),
            Err(ConfigError::Invalid { .. })
        ));
        assert!(matches!(
            RunConfig::from_layer(&layer(&[("seed", "1"), ("alpha", "2")])),
            Err(ConfigError::Invalid { .. })
        ));
        assert!(matches!(
            env_layer([("MEG_NOPE".to_string(), "1".to_string())]),
            Err(ConfigError::UnknownKey { .. })
        ));
        assert!(matches!(
            flag_layer(&["seed".to_string()]),
            Err(ConfigError::MalformedOverride(_))
        ));
    }

    #[test]
    fn toml_file_with_lists() {
        let text = "seed = 3\nvocab = [\"C\", \"O\"]\nq_hidden = [64, 32]\nalpha = 0.25\ninclude_noop = true\n";
        let l = file_layer(text, "t.toml").unwrap();
        let cfg = RunConfig::from_layer(&l).unwrap();
        assert_eq!(cfg.episode.vocab, vec![Element::C, Element::O]);
        assert_eq!(cfg.episode.q_hidden, vec![64, 32]);
        assert_eq!(cfg.episode.alpha, 0.25);
        assert!(cfg.episode.include_noop);
        assert!(matches!(
            file_layer("[section]\nseed = 1\n", "t.toml"),
            Err(ConfigError::UnknownKey { .. }) | Err(ConfigError::Invalid { .. })
        ));
    }

    #[test]
    fn single_similarity_weight_implies_the_other() {
        let cfg =
            RunConfig::from_layer(&layer(&[("seed", "1"), ("alpha_tanimoto", "0.3")])).unwrap();
        assert!((cfg.episode.similarity_weights.alpha_cosine() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn env_keys_are_lowercased() {
        let l = env_layer([
            ("MEG_TOP_K".to_string(), "3".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ])
        .unwrap();
        assert_eq!(l, layer(&[("top_k", "3")]));
    }

    const OVERLAP_KEYS: [&str; 4] = ["top_k", "alpha", "seed", "max_steps"];

    fn arb_layer() -> impl Strategy<Value = Layer> {
        proptest::collection::btree_map(
            proptest::sample::select(OVERLAP_KEYS.to_vec()).prop_map(str::to_string),
            "[a-z0-9]{1,4}",
            0..4,
        )
    }

    proptest! {
        #[test]
        fn later_layers_win(file in arb_layer(), env in arb_layer(), flags in arb_layer()) {
            let merged = merge_layers(&[&file, &env, &flags]);
            for key in OVERLAP_KEYS {
                let expected = flags.get(key).or_else(|| env.get(key)).or_else(|| file.get(key));
                prop_assert_eq!(merged.get(key), expected);
            }
            prop_assert!(merged.keys().all(|k| file.contains_key(k) || env.contains_key(k) || flags.contains_key(k)));
        }

        #[test]
        fn typed_precedence(f in 1usize..50, e in 1usize..50, c in 1usize..50, use_env: bool, use_flag: bool) {
            let file = layer(&[("seed", "1"), ("top_k", &f.to_string())]);
            let env: Layer = if use_env { layer(&[("top_k", &e.to_string())]) } else { Layer::new() };
            let flags: Layer = if use_flag { layer(&[("top_k", &c.to_string())]) } else { Layer::new() };
            let cfg = RunConfig::from_layer(&merge_layers(&[&file, &env, &flags])).unwrap();
            let want = if use_flag { c } else if use_env { e } else { f };
            prop_assert_eq!(cfg.episode.top_k, want);
        }
    }
}
