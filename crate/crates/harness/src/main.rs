use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use examiner_harness::{
    cmd_examine, cmd_report, cmd_strength, cmd_train, cmd_weakness_study, ExaminerKind, ExperimentConfig,
    HarnessError, Overrides,
};

#[derive(Parser)]
#[command(name = "examiner", version, about = "Adversarial examination of classifiers and test landscapes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the shape classifier and write its checkpoint.
    Train(Common),
    /// Examine every instance under every seed.
    Examine(Common),
    /// Examine a classifier trained on a restricted factor range.
    WeaknessStudy(Common),
    /// Search for the scenarios the target finds easiest.
    Strength(Common),
    /// Rebuild reports from trace files.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    #[arg(long = "T")]
    steps: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    t_checkpoints: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    examiner: Option<ExaminerArg>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dump_images: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExaminerArg {
    Rl,
    Bo,
    Random,
}

impl From<ExaminerArg> for ExaminerKind {
    fn from(a: ExaminerArg) -> Self {
        match a {
            ExaminerArg::Rl => ExaminerKind::Rl,
            ExaminerArg::Bo => ExaminerKind::Bo,
            ExaminerArg::Random => ExaminerKind::Random,
        }
    }
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        config.apply(&Overrides {
            seeds: self.seed.clone(),
            steps: self.steps,
            t_checkpoints: self.t_checkpoints.clone(),
            examiner: self.examiner.map(Into::into),
            m: self.m,
            dump_images: self.dump_images,
        });
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<String, HarnessError> {
    let summary = |o: examiner_harness::Outcome| {
        format!("{} runs, {} files written", o.report.runs.len(), o.manifest.artifacts.len())
    };
    Ok(match cli.command {
        Command::Train(c) => {
            let o = cmd_train(&c.resolve()?, &c.out)?;
            format!(
                "train accuracy {:.4}, held-out accuracy {:.4}",
                o.report.metrics.final_accuracy, o.report.heldout_accuracy
            )
        }
        Command::Examine(c) => summary(cmd_examine(&c.resolve()?, &c.out)?),
        Command::WeaknessStudy(c) => {
            let o = cmd_weakness_study(&c.resolve()?, &c.out)?;
            match o.report.recovery.as_ref().and_then(|r| r.mean_rate) {
                Some(rate) => format!("recovery rate {rate:.3}; {}", summary(o)),
                None => format!("recovery rate not applicable; {}", summary(o)),
            }
        }
        Command::Strength(c) => summary(cmd_strength(&c.resolve()?, &c.out)?),
        Command::Report { common, traces } => {
            let config = common.config.as_ref().map(|_| common.resolve()).transpose()?;
            summary(cmd_report(config.as_ref(), &traces, &common.out)?)
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = e.exit_code();
            eprintln!("error: {:#}", anyhow::Error::from(e));
            ExitCode::from(code as u8)
        }
    }
}
