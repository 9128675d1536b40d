use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vrft::config::{EnvSpec, RunConfig};
use vrft::dataset::export_dataset;
use vrft::knowledge::load_knowledge;
use vrft::scoring::{load_spec, score_file, Presets};
use vrft_core::envs::{AttributeEnv, DetectionEnv, OrdinalEnv, RecitationEnv};
use vrft_core::prompt::{build_prompt, PromptTemplate};

#[derive(Parser)]
#[command(name = "vrft", version, about = "Rule-based rewards and GRPO experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment recipe. `VRFT_SEED=1,2` overrides the seed list.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Knowledge file for `pa_prompt`, overriding the config.
        #[arg(long)]
        knowledge: Option<PathBuf>,
    },
    /// Score a JSONL file of rollouts.
    Score {
        #[arg(long)]
        input: PathBuf,
        /// Preset name or path to a JSON spec.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        output: PathBuf,
        /// Extra presets, a JSON object of name to spec.
        #[arg(long)]
        presets: Option<PathBuf>,
    },
    /// Print the classification and detection prompts.
    Prompts {
        #[arg(long)]
        dump: bool,
        #[arg(long)]
        knowledge: Option<PathBuf>,
        /// Comma-separated class names; defaults to the knowledge file's.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
        #[arg(long, default_value = "dermoscopy")]
        modality: String,
        #[arg(long, default_value = "skin lesion")]
        target: String,
    },
    /// Write the dataset a config would train on, for one seed.
    ExportDataset {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Serve the scoring API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        presets: Option<PathBuf>,
    },
}

fn load_presets(path: Option<&PathBuf>) -> Result<Presets, ExitCode> {
    match path {
        None => Ok(Presets::default()),
        Some(p) => Presets::default().with_file(p).map_err(|e| {
            eprintln!("error: presets: {e}");
            ExitCode::from(2)
        }),
    }
}

fn run(config: PathBuf, knowledge: Option<PathBuf>) -> ExitCode {
    let resolved = RunConfig::load(&config)
        .and_then(|c| match std::env::var("VRFT_SEED") {
            Ok(seeds) => c.with_seed_override(&seeds),
            Err(_) => Ok(c),
        })
        .and_then(|c| match knowledge {
            Some(k) => c.with_knowledge(k),
            None => Ok(c),
        });
    let cfg = match resolved {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid config: {e}");
            return ExitCode::from(2);
        }
    };
    match vrft::run(&cfg) {
        Ok(summary) => {
            for arm in &summary.aggregate.arms {
                println!("{}: mean final accuracy {:.4}", arm.arm, arm.mean_final_accuracy);
            }
            if let (Some(w), Some(d)) = (summary.aggregate.comparison_wins, summary.aggregate.mean_accuracy_difference) {
                println!("comparison: {w}/{} seeds ahead, mean difference {d:+.4}", summary.seeds.len());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn score(input: PathBuf, spec: String, output: PathBuf, presets: Option<PathBuf>) -> ExitCode {
    let presets = match load_presets(presets.as_ref()) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let spec = match load_spec(&spec, &presets) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = File::open(&input).and_then(|inp| {
        let out = File::create(&output)?;
        score_file(BufReader::new(inp), &spec, BufWriter::new(out))
    });
    match result {
        Ok(report) => {
            println!("{} scored, {} failed", report.scored, report.failed);
            if report.failed > 0 {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn prompts(dump: bool, knowledge: Option<PathBuf>, classes: Vec<String>, modality: &str, target: &str) -> ExitCode {
    if !dump {
        eprintln!("nothing to do; pass --dump to print the prompts");
        return ExitCode::from(2);
    }
    let kb = match knowledge.as_deref().map(load_knowledge).transpose() {
        Ok(kb) => kb,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let classes: Vec<String> = match (&kb, classes.is_empty()) {
        (_, false) => classes,
        (Some(kb), true) => kb.classes().map(str::to_owned).collect(),
        (None, true) => {
            eprintln!("error: name the classes with --classes or --knowledge");
            return ExitCode::from(2);
        }
    };
    let names: Vec<&str> = classes.iter().map(String::as_str).collect();
    let classification = build_prompt(&PromptTemplate::classification(modality, target, &names), kb.as_ref());
    let detection = build_prompt(&PromptTemplate::detection(target), None);
    match (classification, detection) {
        (Ok(c), Ok(d)) => {
            println!("## classification\n{c}\n\n## detection\n{d}");
            ExitCode::SUCCESS
        }
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn export(config: PathBuf, seed: u64, output: PathBuf) -> ExitCode {
    let cfg = match RunConfig::load(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid config: {e}");
            return ExitCode::from(2);
        }
    };
    let result = File::create(&output).and_then(|f| {
        let out = BufWriter::new(f);
        let built = "env config validated";
        match cfg.env.with_seed(seed) {
            EnvSpec::Ordinal(c) => export_dataset(&OrdinalEnv::new(c).expect(built), out),
            EnvSpec::Attribute(c) => export_dataset(&AttributeEnv::new(c, None).expect(built), out),
            EnvSpec::Detection(c) => export_dataset(&DetectionEnv::new(c).expect(built), out),
            EnvSpec::Recitation(c) => export_dataset(&RecitationEnv::new(c).expect(built), out),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", output.display());
            ExitCode::FAILURE
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, knowledge } => run(config, knowledge),
        Command::Score {
            input,
            spec,
            output,
            presets,
        } => score(input, spec, output, presets),
        Command::Prompts {
            dump,
            knowledge,
            classes,
            modality,
            target,
        } => prompts(dump, knowledge, classes, &modality, &target),
        Command::ExportDataset { config, seed, output } => export(config, seed, output),
        Command::Serve { port, presets } => {
            let presets = match load_presets(presets.as_ref()) {
                Ok(p) => p,
                Err(code) => return code,
            };
            let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
            match rt.block_on(vrft::service::serve(port, presets)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
