//! Seeded experiment recipes and their on-disk artifacts.
//!
//! Per seed the runner writes `records_<seed>.csv` (metrics, deterministic),
//! `timing_<seed>.csv` (wall clock, not deterministic) and one policy
//! checkpoint per training arm. `config.resolved.json` and `summary.json`
//! cover the whole run. Rows are flushed as they are produced so a failed
//! run keeps everything up to the failing step.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use vrft_core::envs::{
    AttributeEnv, DetectionEnv, Environment, OrdinalEnv, RecitationEnv, ZeroShotClassification,
};
use vrft_core::grpo::GrpoConfig;
use vrft_core::policy::PolicyParams;
use vrft_core::reward::RewardSpec;
use vrft_core::sft::{sft_baseline, SftConfig};
use vrft_core::structured_output::TaskMode;
use vrft_core::train::{evaluate, steps_to_plateau, EvalConfig, GrpoTrainer, RunRecord, TrainError};

use crate::config::{EnvSpec, Experiment, RunConfig};
use crate::dataset::dataset_hash;
use crate::scoring::FieldError;

/// Version of the `records_<seed>.csv` column set.
pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const RECORD_COLUMNS: [&str; 7] = [
    "arm",
    "step",
    "mean_total_reward",
    "mean_format_reward",
    "accuracy",
    "mean_bleu_vs_prompt",
    "mean_kl",
];
/// Draws for the Monte-Carlo Bayes ceiling reported on ordinal runs.
const BAYES_DRAWS: usize = 20_000;
/// Plateau detection: fraction of the climb and smoothing window.
pub const PLATEAU_FRACTION: f64 = 0.9;
pub const PLATEAU_WINDOW: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(#[from] FieldError),
    #[error("seed {seed}, arm `{arm}`: {source}")]
    Train {
        seed: u64,
        arm: String,
        source: TrainError,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunError {
    /// 2 for configuration problems, 3 for failures during training, 1 for IO.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            RunError::Train { .. } => 3,
            RunError::Io { .. } => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_owned(),
        source,
    }
}

/// One CSV row. Arms that only evaluate leave the training columns empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub step: usize,
    pub mean_total_reward: Option<f64>,
    pub mean_format_reward: Option<f64>,
    pub accuracy: f64,
    pub mean_bleu_vs_prompt: Option<f64>,
    pub mean_kl: Option<f64>,
}

impl From<&RunRecord> for Row {
    fn from(r: &RunRecord) -> Self {
        Self {
            step: r.step,
            mean_total_reward: Some(r.mean_total_reward),
            mean_format_reward: Some(r.mean_format_reward),
            accuracy: r.accuracy,
            mean_bleu_vs_prompt: Some(r.mean_bleu_vs_prompt),
            mean_kl: Some(r.mean_kl),
        }
    }
}

impl Row {
    fn eval_only(step: usize, accuracy: f64) -> Self {
        Self {
            step,
            mean_total_reward: None,
            mean_format_reward: None,
            accuracy,
            mean_bleu_vs_prompt: None,
            mean_kl: None,
        }
    }

    fn as_record(&self) -> Option<RunRecord> {
        Some(RunRecord {
            step: self.step,
            mean_total_reward: self.mean_total_reward?,
            mean_format_reward: self.mean_format_reward?,
            accuracy: self.accuracy,
            mean_bleu_vs_prompt: self.mean_bleu_vs_prompt?,
            mean_kl: self.mean_kl?,
            wall_ms: 0,
        })
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:?}")).unwrap_or_default()
}

struct Sink {
    records: csv::Writer<BufWriter<File>>,
    timing: csv::Writer<BufWriter<File>>,
    records_path: PathBuf,
    timing_path: PathBuf,
}

impl Sink {
    fn create(dir: &Path, seed: u64) -> Result<Self, RunError> {
        let records_path = dir.join(format!("records_{seed}.csv"));
        let timing_path = dir.join(format!("timing_{seed}.csv"));
        let open = |p: &Path| -> Result<csv::Writer<BufWriter<File>>, RunError> {
            let f = File::create(p).map_err(io_err(p))?;
            Ok(csv::Writer::from_writer(BufWriter::new(f)))
        };
        let mut sink = Self {
            records: open(&records_path)?,
            timing: open(&timing_path)?,
            records_path,
            timing_path,
        };
        sink.records.write_record(RECORD_COLUMNS).map_err(|e| csv_err(&sink.records_path, e))?;
        sink.timing.write_record(["arm", "step", "wall_ms"]).map_err(|e| csv_err(&sink.timing_path, e))?;
        sink.flush()?;
        Ok(sink)
    }

    fn write(&mut self, arm: &str, row: &Row, wall_ms: u64) -> Result<(), RunError> {
        let step = row.step.to_string();
        self.records
            .write_record([
                arm,
                &step,
                &cell(row.mean_total_reward),
                &cell(row.mean_format_reward),
                &cell(Some(row.accuracy)),
                &cell(row.mean_bleu_vs_prompt),
                &cell(row.mean_kl),
            ])
            .map_err(|e| csv_err(&self.records_path, e))?;
        self.timing
            .write_record([arm, &step, &wall_ms.to_string()])
            .map_err(|e| csv_err(&self.timing_path, e))?;
        self.flush()
    }

    fn flush(&mut self) -> Result<(), RunError> {
        self.records.flush().map_err(io_err(&self.records_path))?;
        self.timing.flush().map_err(io_err(&self.timing_path))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> RunError {
    RunError::Io {
        path: path.to_owned(),
        source: e.into(),
    }
}

/// Per-arm outcome for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub name: String,
    pub rows: Vec<Row>,
    pub init_accuracy: f64,
    pub dataset_hash: String,
    /// Trained parameters, absent for evaluation-only arms.
    pub policy: Option<PolicyParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub dataset_hash: String,
    /// Accuracy before the first step. Not part of the records, which hold
    /// one row per optimization step.
    pub init_accuracy: f64,
    /// Last row of the arm, absent when no steps ran.
    #[serde(rename = "final")]
    pub last: Option<Row>,
    /// First step at which smoothed reward covers 90% of the climb to its
    /// plateau.
    pub steps_to_plateau: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub arm: String,
    /// Another arm, or `"init"` for the arm's own starting accuracy.
    pub baseline: String,
    /// Final accuracy of `arm` minus that of `baseline`.
    pub accuracy_difference: f64,
    /// `pa_policy` only: final zero-shot accuracy never drops as the
    /// localization training set grows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monotone_in_train_size: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub arms: Vec<ArmSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
    /// Accuracy of the Bayes-optimal grader on ordinal data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bayes_accuracy: Option<f64>,
}

impl SeedSummary {
    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.arm == name)
    }

    /// Final accuracy, or the initial one when no steps ran.
    pub fn final_accuracy(&self, arm: &str) -> Option<f64> {
        self.arm(arm).map(|a| a.last.map_or(a.init_accuracy, |r| r.accuracy))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmMean {
    pub arm: String,
    pub mean_final_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub arms: Vec<ArmMean>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison_wins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_accuracy_difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub csv_schema_version: u32,
    pub experiment: Experiment,
    pub steps: usize,
    pub seeds: Vec<SeedSummary>,
    pub aggregate: Aggregate,
}

/// Summary of one arm from its rows.
pub fn summarize_arm(arm: &ArmResult) -> ArmSummary {
    let records: Option<Vec<RunRecord>> = arm.rows.iter().map(Row::as_record).collect();
    ArmSummary {
        arm: arm.name.clone(),
        dataset_hash: arm.dataset_hash.clone(),
        init_accuracy: arm.init_accuracy,
        last: arm.rows.last().copied(),
        steps_to_plateau: records.and_then(|r| steps_to_plateau(&r, PLATEAU_FRACTION, PLATEAU_WINDOW)),
    }
}

fn compare(arms: &[ArmSummary], arm: &str, baseline: &str) -> Comparison {
    let acc = |a: &ArmSummary| a.last.map_or(a.init_accuracy, |r| r.accuracy);
    let a = arms.iter().find(|s| s.arm == arm).expect("arm exists");
    let base = if baseline == "init" {
        a.init_accuracy
    } else {
        acc(arms.iter().find(|s| s.arm == baseline).expect("baseline exists"))
    };
    Comparison {
        arm: arm.to_owned(),
        baseline: baseline.to_owned(),
        accuracy_difference: acc(a) - base,
        monotone_in_train_size: None,
    }
}

/// Aggregates per-seed summaries.
pub fn aggregate(seeds: &[SeedSummary]) -> Aggregate {
    let mut arms = Vec::new();
    if let Some(first) = seeds.first() {
        for a in &first.arms {
            let accs: Vec<f64> = seeds.iter().filter_map(|s| s.final_accuracy(&a.arm)).collect();
            arms.push(ArmMean {
                arm: a.arm.clone(),
                mean_final_accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
            });
        }
    }
    let diffs: Vec<f64> = seeds
        .iter()
        .filter_map(|s| s.comparison.as_ref())
        .map(|c| c.accuracy_difference)
        .collect();
    let (wins, mean_diff) = if diffs.is_empty() {
        (None, None)
    } else {
        (
            Some(diffs.iter().filter(|d| **d > 0.0).count()),
            Some(diffs.iter().sum::<f64>() / diffs.len() as f64),
        )
    };
    Aggregate {
        arms,
        comparison_wins: wins,
        mean_accuracy_difference: mean_diff,
    }
}

struct SeedCtx<'a> {
    cfg: &'a RunConfig,
    seed: u64,
    sink: Sink,
}

impl SeedCtx<'_> {
    fn grpo(&self) -> GrpoConfig {
        GrpoConfig {
            seed: self.seed,
            ..self.cfg.grpo.clone()
        }
    }

    fn eval(&self) -> EvalConfig {
        EvalConfig {
            temperature: self.cfg.grpo.temperature,
            seed: self.seed,
            ..EvalConfig::default()
        }
    }

    fn fail(&self, arm: &str) -> impl FnOnce(TrainError) -> RunError + '_ {
        let arm = arm.to_owned();
        let seed = self.seed;
        move |source| RunError::Train { seed, arm, source }
    }

    /// GRPO training arm. `probe` adds an evaluation-only arm that scores
    /// the current policy on another env after every step.
    fn grpo_arm<E: Environment + ?Sized>(
        &mut self,
        name: &str,
        env: &E,
        policy: PolicyParams,
        spec: RewardSpec,
        probe: Option<(&str, &dyn Environment, &RewardSpec)>,
    ) -> Result<Vec<ArmResult>, RunError> {
        let hash = dataset_hash(env);
        let mut trainer = GrpoTrainer::new(env, policy, spec, self.grpo()).map_err(self.fail(name))?;
        let init = trainer.evaluate().map_err(self.fail(name))?;
        let eval = self.eval();
        let probe_eval = |p: &PolicyParams| -> Result<f64, TrainError> {
            let (_, penv, pspec) = probe.expect("probe present");
            evaluate(penv, p, pspec, &eval)
        };
        let probe_init = match probe {
            Some((pname, _, _)) => Some(probe_eval(trainer.policy()).map_err(self.fail(pname))?),
            None => None,
        };
        let mut rows = Vec::with_capacity(self.cfg.steps);
        let mut probe_rows = Vec::new();
        for _ in 0..self.cfg.steps {
            let start = Instant::now();
            let record = trainer.step().map_err(self.fail(name))?;
            let row = Row::from(&record);
            self.sink.write(name, &row, start.elapsed().as_millis() as u64)?;
            rows.push(row);
            if let Some((pname, _, _)) = probe {
                let start = Instant::now();
                let acc = probe_eval(trainer.policy()).map_err(self.fail(pname))?;
                let row = Row::eval_only(record.step, acc);
                self.sink.write(pname, &row, start.elapsed().as_millis() as u64)?;
                probe_rows.push(row);
            }
        }
        let mut out = vec![ArmResult {
            name: name.to_owned(),
            rows,
            init_accuracy: init,
            dataset_hash: hash.clone(),
            policy: Some(trainer.into_policy()),
        }];
        if let (Some((pname, penv, _)), Some(init)) = (probe, probe_init) {
            out.push(ArmResult {
                name: pname.to_owned(),
                rows: probe_rows,
                init_accuracy: init,
                dataset_hash: dataset_hash(penv),
                policy: None,
            });
        }
        Ok(out)
    }

    fn sft_arm<E: Environment + ?Sized>(&mut self, name: &str, env: &E, policy: PolicyParams, spec: &RewardSpec) -> Result<ArmResult, RunError> {
        let sft = SftConfig {
            seed: self.seed,
            eval_temperature: self.cfg.grpo.temperature,
            ..self.cfg.sft.clone()
        };
        let init = evaluate(env, &policy, spec, &self.eval()).map_err(self.fail(name))?;
        let start = Instant::now();
        let (records, policy) = sft_baseline(env, policy, spec, &sft, self.cfg.steps).map_err(self.fail(name))?;
        // the supervised loop runs in one call, so per-step time is its mean
        let per_step = start.elapsed().as_millis() as u64 / records.len().max(1) as u64;
        let rows: Vec<Row> = records.iter().map(Row::from).collect();
        for row in &rows {
            self.sink.write(name, row, per_step)?;
        }
        Ok(ArmResult {
            name: name.to_owned(),
            rows,
            init_accuracy: init,
            dataset_hash: dataset_hash(env),
            policy: Some(policy),
        })
    }
}

/// Env construction failures cannot happen after validation.
fn built<T>(r: Result<T, vrft_core::envs::EnvError>) -> T {
    r.expect("env config validated")
}

/// Runs one seed of the experiment, writing its CSV files into `dir`.
pub fn run_seed(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<(Vec<ArmResult>, SeedSummary), RunError> {
    let mut ctx = SeedCtx {
        cfg,
        seed,
        sink: Sink::create(dir, seed)?,
    };
    let env_spec = cfg.env.with_seed(seed);
    let spec = cfg.reward.clone();
    let mut bayes = None;
    let (arms, comparison) = match (cfg.experiment, &env_spec) {
        (Experiment::MfrsVsExact, EnvSpec::Ordinal(c)) => {
            let env = built(OrdinalEnv::new(c.clone()));
            bayes = Some(c.bayes_accuracy_mc(BAYES_DRAWS, seed));
            let exact = RewardSpec {
                mfrs_weights: vec![1.0],
                ..spec.clone()
            };
            let mut arms = ctx.grpo_arm("mfrs", &env, PolicyParams::zeros(env.arch()), spec, None)?;
            arms.extend(ctx.grpo_arm("exact", &env, PolicyParams::zeros(env.arch()), exact, None)?);
            (arms, Some(("mfrs", "exact")))
        }
        (Experiment::RecitePos | Experiment::ReciteNeg, EnvSpec::Recitation(c)) => {
            let env = built(RecitationEnv::new(c.clone()));
            let arms = ctx.grpo_arm("grpo", &env, env.initial_policy(), spec, None)?;
            (arms, None)
        }
        (Experiment::PaPrompt, EnvSpec::Attribute(c)) => {
            let plain = built(AttributeEnv::new(c.clone(), None));
            let kb = cfg.knowledge_base.clone().unwrap_or_else(|| plain.reference_knowledge());
            let rich = built(AttributeEnv::new(c.clone(), Some(&kb)));
            let p0 = plain.prior_policy(None, cfg.prior_strength);
            let p1 = rich.prior_policy(Some(&kb), cfg.prior_strength);
            let mut arms = ctx.grpo_arm("plain", &plain, p0, spec.clone(), None)?;
            arms.extend(ctx.grpo_arm("augmented", &rich, p1, spec, None)?);
            (arms, Some(("augmented", "plain")))
        }
        (Experiment::PaPolicy, EnvSpec::Detection(c)) => {
            let zs_spec = RewardSpec {
                mode: TaskMode::Classification,
                ..spec.clone()
            };
            let mut arms = Vec::new();
            for &m in &cfg.train_sizes {
                let env = built(DetectionEnv::new(vrft_core::envs::DetectionEnvConfig {
                    train_samples: m,
                    ..c.clone()
                }));
                let zs = ZeroShotClassification::new(&env);
                let name = format!("m{m}");
                let probe = format!("m{m}_zero_shot");
                let p0 = PolicyParams::zeros(env.arch());
                arms.extend(ctx.grpo_arm(&name, &env, p0, spec.clone(), Some((&probe, &zs, &zs_spec)))?);
            }
            (arms, None)
        }
        (Experiment::SftBaseline, env_spec) => {
            let arms = match env_spec {
                EnvSpec::Ordinal(c) => {
                    let env = built(OrdinalEnv::new(c.clone()));
                    bayes = Some(c.bayes_accuracy_mc(BAYES_DRAWS, seed));
                    paired_sft(&mut ctx, &env, PolicyParams::zeros(env.arch()), spec)?
                }
                EnvSpec::Attribute(c) => {
                    let env = built(AttributeEnv::new(c.clone(), None));
                    paired_sft(&mut ctx, &env, PolicyParams::zeros(env.arch()), spec)?
                }
                EnvSpec::Detection(c) => {
                    let env = built(DetectionEnv::new(c.clone()));
                    paired_sft(&mut ctx, &env, PolicyParams::zeros(env.arch()), spec)?
                }
                EnvSpec::Recitation(_) => unreachable!("rejected by config validation"),
            };
            (arms, Some(("grpo", "sft")))
        }
        _ => unreachable!("config validation pairs experiments with env kinds"),
    };
    ctx.sink.flush()?;
    for arm in &arms {
        if let Some(p) = &arm.policy {
            let path = dir.join(format!("policy_{}_{seed}.txt", arm.name));
            std::fs::write(&path, p.to_checkpoint()).map_err(io_err(&path))?;
        }
    }
    let summaries: Vec<ArmSummary> = arms.iter().map(summarize_arm).collect();
    let comparison = match (cfg.experiment, comparison) {
        (Experiment::PaPolicy, _) => {
            let probes: Vec<&ArmSummary> = summaries.iter().filter(|a| a.arm.ends_with("_zero_shot")).collect();
            let acc = |a: &ArmSummary| a.last.map_or(a.init_accuracy, |r| r.accuracy);
            let largest = probes.last().expect("train_sizes is non-empty");
            let monotone = probes.windows(2).all(|w| acc(w[1]) >= acc(w[0]));
            let mut c = compare(&summaries, &largest.arm, "init");
            c.monotone_in_train_size = Some(monotone);
            Some(c)
        }
        (_, Some((a, b))) => Some(compare(&summaries, a, b)),
        (_, None) => None,
    };
    let summary = SeedSummary {
        seed,
        arms: summaries,
        comparison,
        bayes_accuracy: bayes,
    };
    Ok((arms, summary))
}

fn paired_sft<E: Environment + ?Sized>(ctx: &mut SeedCtx<'_>, env: &E, policy: PolicyParams, spec: RewardSpec) -> Result<Vec<ArmResult>, RunError> {
    let sft = ctx.sft_arm("sft", env, policy.clone(), &spec)?;
    let mut arms = vec![sft];
    arms.extend(ctx.grpo_arm("grpo", env, policy, spec, None)?);
    Ok(arms)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

/// Runs every seed of `cfg`, writing all artifacts under `cfg.output_dir`.
pub fn run(cfg: &RunConfig) -> Result<RunSummary, RunError> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(&dir.join("config.resolved.json"), cfg)?;
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let (_, summary) = run_seed(cfg, seed, dir)?;
        seeds.push(summary);
        let partial = RunSummary {
            csv_schema_version: CSV_SCHEMA_VERSION,
            experiment: cfg.experiment,
            steps: cfg.steps,
            aggregate: aggregate(&seeds),
            seeds: seeds.clone(),
        };
        write_json(&dir.join("summary.json"), &partial)?;
    }
    Ok(RunSummary {
        csv_schema_version: CSV_SCHEMA_VERSION,
        experiment: cfg.experiment,
        steps: cfg.steps,
        aggregate: aggregate(&seeds),
        seeds,
    })
}

/// Reads a `records_<seed>.csv` back into per-arm rows, in file order.
pub fn read_records(path: &Path) -> Result<Vec<(String, Vec<Row>)>, RunError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out: Vec<(String, Vec<Row>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |what: &str| RunError::Io {
            path: path.to_owned(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad {what}")),
        };
        let opt = |i: usize| -> Result<Option<f64>, RunError> {
            match rec.get(i) {
                Some("") => Ok(None),
                Some(s) => s.parse().map(Some).map_err(|_| bad(RECORD_COLUMNS[i])),
                None => Err(bad(RECORD_COLUMNS[i])),
            }
        };
        let arm = rec.get(0).ok_or_else(|| bad("arm"))?.to_owned();
        let row = Row {
            step: rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("step"))?,
            mean_total_reward: opt(2)?,
            mean_format_reward: opt(3)?,
            accuracy: opt(4)?.ok_or_else(|| bad("accuracy"))?,
            mean_bleu_vs_prompt: opt(5)?,
            mean_kl: opt(6)?,
        };
        match out.iter_mut().find(|(a, _)| *a == arm) {
            Some((_, rows)) => rows.push(row),
            None => out.push((arm, vec![row])),
        }
    }
    Ok(out)
}
