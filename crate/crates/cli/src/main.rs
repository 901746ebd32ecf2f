mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use cdaudit::attack::AttackerKind;
use cdaudit::cdm::Arch;
use cdaudit::radar::PromptKind;
use cdaudit::unlearn::DefenseKind;
use cdaudit::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use commands::{AttackArgs, ModelChoice, RadarArgs, UnlearnArgs};
use config::RunConfig;
use output::Layout;

/// Membership-inference audit for cognitive diagnosis models.
#[derive(Debug, Parser)]
#[command(name = "cdaudit", version)]
struct Cli {
    /// TOML run configuration. Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run seed, overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LlmPrompt {
    General,
    InContext,
}

impl From<LlmPrompt> for PromptKind {
    fn from(p: LlmPrompt) -> Self {
        match p {
            LlmPrompt::General => PromptKind::General,
            LlmPrompt::InContext => PromptKind::InContext,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known mastery.
    GenData {
        #[arg(long)]
        students: Option<usize>,
        #[arg(long)]
        questions: Option<usize>,
        #[arg(long)]
        kcs: Option<usize>,
    },
    /// Partition students and train the original and/or retrained model.
    Train {
        #[arg(long)]
        arch: Option<Arch>,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long, value_enum, default_value = "both")]
        model: ModelChoice,
    },
    /// Apply an unlearning defense to a trained checkpoint.
    Unlearn {
        #[arg(long)]
        defense: DefenseKind,
        #[arg(long)]
        arch: Option<Arch>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        n_probes: Option<usize>,
        #[arg(long)]
        n_batches: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Train membership attackers against the original model.
    Attack {
        /// Repeatable; defaults to the configured attackers.
        #[arg(long = "attacker")]
        attackers: Vec<AttackerKind>,
        #[arg(long)]
        arch: Option<Arch>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Run the full audit grid.
    Audit,
    /// Render knowledge-state radar charts and read them back.
    Radar {
        /// Round-trip random (or checkpoint) knowledge states. This is the
        /// default when no --image is given.
        #[arg(long, conflicts_with = "image")]
        roundtrip: bool,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        /// Read a single chart image instead.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Also query a vision model (needs CDAUDIT_LLM_URL and CDAUDIT_LLM_MODEL).
        #[arg(long, value_enum)]
        llm: Option<LlmPrompt>,
        /// Plot this checkpoint's knowledge states instead of random ones.
        #[arg(long, conflicts_with = "image")]
        checkpoint: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Train { .. } => "train",
            Command::Unlearn { .. } => "unlearn",
            Command::Attack { .. } => "attack",
            Command::Audit => "audit",
            Command::Radar { .. } => "radar",
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::GenData {
            students,
            questions,
            kcs,
        } => {
            let mut spec = cfg.synthetic_spec();
            if let Some(n) = students {
                spec.n_students = *n;
            }
            if let Some(n) = questions {
                spec.n_questions = *n;
            }
            if let Some(n) = kcs {
                spec.n_kcs = *n;
            }
            if cfg.data.records.is_some() {
                return Err(Error::Config(
                    "gen-data needs a synthetic data source, not CSV paths".into(),
                ));
            }
            cfg.data.synthetic = Some(spec);
        }
        Command::Train { arch, ratio, .. } => {
            if let Some(a) = arch {
                cfg.cdm.arch = *a;
            }
            if let Some(r) = ratio {
                cfg.split.ratio = *r;
            }
        }
        Command::Unlearn { arch, .. } | Command::Attack { arch, .. } => {
            if let Some(a) = arch {
                cfg.cdm.arch = *a;
            }
        }
        Command::Radar { k, n, .. } => {
            if let Some(k) = k {
                cfg.radar.k = *k;
            }
            if let Some(n) = n {
                cfg.radar.n = *n;
            }
        }
        Command::Audit => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let layout = Layout::create(&cfg.out)?;
    let produced = match &cli.command {
        Command::GenData { .. } => commands::gen_data(&cfg, &layout)?,
        Command::Train { model, .. } => commands::train(&cfg, &layout, *model)?,
        Command::Unlearn {
            defense,
            checkpoint,
            plan,
            lr,
            steps,
            n_probes,
            n_batches,
            alpha,
            lambda,
            ..
        } => {
            let d = commands::defense_from_flags(*defense, *lr, *steps, *n_probes, *n_batches, *alpha, *lambda);
            if d.kind() == DefenseKind::None {
                return Err(Error::Config("unlearn needs a defense other than none".into()));
            }
            commands::unlearn_cmd(
                &cfg,
                &layout,
                &UnlearnArgs {
                    defense: d,
                    checkpoint: checkpoint.clone(),
                    plan: plan.clone(),
                },
            )?
        }
        Command::Attack {
            attackers,
            checkpoint,
            plan,
            ..
        } => commands::attack(
            &cfg,
            &layout,
            &AttackArgs {
                attackers: attackers.clone(),
                checkpoint: checkpoint.clone(),
                plan: plan.clone(),
            },
        )?,
        Command::Audit => commands::audit(&cfg, &layout)?,
        Command::Radar {
            image, llm, checkpoint, ..
        } => commands::radar(
            &cfg,
            &layout,
            &RadarArgs {
                image: image.clone(),
                llm: llm.map(PromptKind::from),
                checkpoint: checkpoint.clone(),
            },
        )?,
    };
    commands::finish(&cfg, &layout, cli.command.name(), produced)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": {"kind": e.kind(), "message": e.to_string()}}));
            ExitCode::FAILURE
        }
    }
}
