//! Run configuration: JSON text resolved into a fully explicit `RunConfig`.
//!
//! Every sub-config is parsed and validated here, so a run either fails
//! before any compute with a field path or has nothing left to reject.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vrft_core::envs::{
    AttributeEnvConfig, DetectionEnvConfig, EnvError, OrdinalEnvConfig, RecitationEnvConfig,
};
use vrft_core::grpo::{GrpoConfig, GrpoError};
use vrft_core::prompt::KnowledgeBase;
use vrft_core::reward::{preset, RewardSpec};
use vrft_core::sft::SftConfig;
use vrft_core::structured_output::TaskMode;

use crate::knowledge::load_knowledge;
use crate::scoring::{from_json_str, from_json_value, FieldError, Presets, SpecError};

/// Seeds used when neither the config nor `VRFT_SEED` names any.
pub const DEFAULT_SEEDS: usize = 10;
pub const DEFAULT_STEPS: usize = 300;
/// Learning rate the recipes were tuned with.
pub const RECIPE_LEARNING_RATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Plain vs knowledge-augmented prompt on the attribute env.
    PaPrompt,
    /// Localization-only training, zero-shot classification, swept over
    /// training-set size.
    PaPolicy,
    RecitePos,
    ReciteNeg,
    /// Paired graded runs with fuzzy and exact-match credit.
    MfrsVsExact,
    /// Supervised and GRPO arms on the same env.
    SftBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Ordinal,
    Attribute,
    Detection,
    Recitation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Ordinal(OrdinalEnvConfig),
    Attribute(AttributeEnvConfig),
    Detection(DetectionEnvConfig),
    Recitation(RecitationEnvConfig),
}

impl EnvSpec {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvSpec::Ordinal(_) => EnvKind::Ordinal,
            EnvSpec::Attribute(_) => EnvKind::Attribute,
            EnvSpec::Detection(_) => EnvKind::Detection,
            EnvSpec::Recitation(_) => EnvKind::Recitation,
        }
    }

    fn validate(&self) -> Result<(), EnvError> {
        match self {
            EnvSpec::Ordinal(c) => c.validate(),
            EnvSpec::Attribute(c) => c.validate(),
            EnvSpec::Detection(c) => c.validate(),
            EnvSpec::Recitation(c) => c.validate(),
        }
    }

    /// Copy with the data seed replaced.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            EnvSpec::Ordinal(c) => c.seed = seed,
            EnvSpec::Attribute(c) => c.seed = seed,
            EnvSpec::Detection(c) => c.seed = seed,
            EnvSpec::Recitation(c) => c.seed = seed,
        }
        out
    }
}

impl EnvKind {
    fn mode(self) -> TaskMode {
        match self {
            EnvKind::Ordinal => TaskMode::Grading,
            EnvKind::Attribute | EnvKind::Recitation => TaskMode::Classification,
            EnvKind::Detection => TaskMode::Detection,
        }
    }

    fn default_spec(self) -> RewardSpec {
        match self {
            EnvKind::Ordinal => RewardSpec::grading(),
            EnvKind::Attribute | EnvKind::Recitation => RewardSpec::classification(),
            EnvKind::Detection => RewardSpec::detection(),
        }
    }
}

impl Experiment {
    /// Env kinds the recipe can run on; the first is the default.
    pub fn env_kinds(self) -> &'static [EnvKind] {
        match self {
            Experiment::PaPrompt => &[EnvKind::Attribute],
            Experiment::PaPolicy => &[EnvKind::Detection],
            Experiment::RecitePos | Experiment::ReciteNeg => &[EnvKind::Recitation],
            Experiment::MfrsVsExact => &[EnvKind::Ordinal],
            Experiment::SftBaseline => &[EnvKind::Ordinal, EnvKind::Attribute, EnvKind::Detection],
        }
    }

    fn default_spec(self, kind: EnvKind) -> RewardSpec {
        match self {
            Experiment::RecitePos => preset("recite_pos").expect("built-in preset"),
            Experiment::ReciteNeg => preset("recite_neg").expect("built-in preset"),
            _ => kind.default_spec(),
        }
    }
}

/// Fully resolved configuration; serialized as the run's config snapshot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub env: EnvSpec,
    pub reward: RewardSpec,
    pub grpo: GrpoConfig,
    pub sft: SftConfig,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<PathBuf>,
    /// Weight `pa_prompt` gives each attribute its knowledge base names.
    pub prior_strength: f64,
    /// Localization training-set sizes swept by `pa_policy`.
    pub train_sizes: Vec<usize>,
    /// Read from `knowledge` during validation.
    #[serde(skip)]
    pub knowledge_base: Option<KnowledgeBase>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Experiment,
    #[serde(default)]
    env: Option<serde_json::Value>,
    #[serde(default)]
    reward: Option<serde_json::Value>,
    #[serde(default)]
    grpo: Option<serde_json::Value>,
    #[serde(default)]
    sft: Option<SftConfig>,
    #[serde(default)]
    steps: Option<usize>,
    #[serde(default)]
    seeds: Option<Vec<u64>>,
    output_dir: PathBuf,
    #[serde(default)]
    knowledge: Option<PathBuf>,
    #[serde(default)]
    prior_strength: Option<f64>,
    #[serde(default)]
    train_sizes: Option<Vec<usize>>,
}

fn env_error(e: EnvError) -> FieldError {
    match e {
        EnvError::InvalidConfig { field, reason } => FieldError::new(format!("env.{field}"), reason),
        EnvError::BadShots(_) => FieldError::new("env.shots_per_class", e),
        other => FieldError::new("env", other),
    }
}

fn grpo_error(e: GrpoError) -> FieldError {
    FieldError::new("grpo", e)
}

fn parse_env(value: Option<serde_json::Value>, experiment: Experiment) -> Result<EnvSpec, FieldError> {
    let allowed = experiment.env_kinds();
    let mut value = value.unwrap_or_else(|| serde_json::json!({}));
    let obj = value
        .as_object_mut()
        .ok_or_else(|| FieldError::new("env", "expected an object"))?;
    let kind = match obj.remove("kind") {
        None => allowed[0],
        Some(k) => from_json_value::<EnvKind>(k, "env.kind")?,
    };
    if !allowed.contains(&kind) {
        return Err(FieldError::new(
            "env.kind",
            format!("{experiment:?} cannot run on a {kind:?} environment"),
        ));
    }
    Ok(match kind {
        EnvKind::Ordinal => EnvSpec::Ordinal(from_json_value(value, "env")?),
        EnvKind::Attribute => EnvSpec::Attribute(from_json_value(value, "env")?),
        EnvKind::Detection => EnvSpec::Detection(from_json_value(value, "env")?),
        EnvKind::Recitation => EnvSpec::Recitation(from_json_value(value, "env")?),
    })
}

impl RunConfig {
    /// Parses and validates JSON config text.
    pub fn from_json(text: &str) -> Result<Self, FieldError> {
        let raw: RawConfig = from_json_str(text, "")?;
        let env = parse_env(raw.env, raw.experiment)?;
        let kind = env.kind();
        let reward = match raw.reward {
            None => raw.experiment.default_spec(kind),
            Some(v) => Presets::default().resolve(v, "reward").map_err(|e| match e {
                SpecError::Schema(f) | SpecError::Invalid(f) => f,
            })?,
        };
        let grpo = match raw.grpo {
            None => GrpoConfig {
                learning_rate: RECIPE_LEARNING_RATE,
                ..GrpoConfig::default()
            },
            Some(mut v) => {
                if let Some(obj) = v.as_object_mut() {
                    obj.entry("learning_rate").or_insert(RECIPE_LEARNING_RATE.into());
                }
                from_json_value(v, "grpo")?
            }
        };
        let cfg = Self {
            experiment: raw.experiment,
            env,
            reward,
            grpo,
            sft: raw.sft.unwrap_or_default(),
            steps: raw.steps.unwrap_or(DEFAULT_STEPS),
            seeds: raw.seeds.unwrap_or_else(|| (0..DEFAULT_SEEDS as u64).collect()),
            output_dir: raw.output_dir,
            knowledge: raw.knowledge,
            prior_strength: raw.prior_strength.unwrap_or(1.0),
            train_sizes: raw.train_sizes.unwrap_or_else(|| vec![1, 4, 16, 64]),
            knowledge_base: None,
        };
        cfg.validated()
    }

    pub fn load(path: &Path) -> Result<Self, FieldError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FieldError::new(".", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Replaces the seed list with a comma-separated override such as the
    /// value of `VRFT_SEED`.
    pub fn with_seed_override(mut self, seeds: &str) -> Result<Self, FieldError> {
        let parsed: Result<Vec<u64>, _> = seeds.split(',').map(|s| s.trim().parse::<u64>()).collect();
        self.seeds = parsed.map_err(|e| FieldError::new("VRFT_SEED", format!("`{seeds}`: {e}")))?;
        self.validated()
    }

    /// Sets the knowledge file, as `--knowledge` does.
    pub fn with_knowledge(mut self, path: PathBuf) -> Result<Self, FieldError> {
        self.knowledge = Some(path);
        self.validated()
    }

    fn validated(mut self) -> Result<Self, FieldError> {
        self.env.validate().map_err(env_error)?;
        let mode = self.env.kind().mode();
        if self.reward.mode != mode {
            return Err(FieldError::new(
                "reward.mode",
                format!("{:?} env needs a {mode:?} spec", self.env.kind()),
            ));
        }
        match self.experiment {
            Experiment::RecitePos if self.reward.delta <= 0.0 => {
                return Err(FieldError::new("reward.delta", "recite_pos needs delta > 0"));
            }
            Experiment::ReciteNeg if self.reward.delta >= 0.0 => {
                return Err(FieldError::new("reward.delta", "recite_neg needs delta < 0"));
            }
            _ => {}
        }
        self.grpo.validate().map_err(grpo_error)?;
        if !(self.sft.learning_rate > 0.0 && self.sft.learning_rate.is_finite()) {
            return Err(FieldError::new("sft.learning_rate", "must be positive and finite"));
        }
        if self.sft.batch_size == 0 {
            return Err(FieldError::new("sft.batch_size", "must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(FieldError::new("seeds", "must name at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(FieldError::new("seeds", "seeds must be unique"));
        }
        if !self.prior_strength.is_finite() {
            return Err(FieldError::new("prior_strength", "must be finite"));
        }
        if self.experiment == Experiment::PaPolicy {
            if self.train_sizes.is_empty() {
                return Err(FieldError::new("train_sizes", "must not be empty"));
            }
            if let Some(i) = self.train_sizes.iter().position(|&m| m == 0) {
                return Err(FieldError::new(format!("train_sizes[{i}]"), "must be >= 1"));
            }
        }
        self.knowledge_base = match &self.knowledge {
            Some(path) => Some(load_knowledge(path).map_err(|e| FieldError::new("knowledge", e))?),
            None => None,
        };
        Ok(self)
    }
}
