use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use docpretrain::gradsuite::{self, Scope, TOLERANCE};
use docpretrain::pipeline::{self, Manifest, RunConfig, Task};

/// Layout-aware document encoder: corpus, tokenizer, pre-training,
/// fine-tuning and diagnostics.
#[derive(Parser)]
#[command(name = "docpretrain", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Per-command overrides of the run config.
#[derive(clap::Args)]
struct Overrides {
    /// Run config JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Sec,
    Qa,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Sec => Task::Sec,
            TaskArg::Qa => Task::Qa,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Primitives,
    Encoder,
    Losses,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus described by the run config.
    GenCorpus(#[command(flatten)] Overrides),
    /// Train a byte-level BPE tokenizer on a corpus directory.
    TrainBpe {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 512)]
        merges: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train an encoder; writes checkpoint and per-epoch loss report.
    Pretrain(#[command(flatten)] Overrides),
    /// Fine-tune a pre-trained checkpoint on labeling or question answering.
    Finetune {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
    },
    /// Score a fine-tuned checkpoint on an annotated corpus directory.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Finite-difference gradient checks; exits 2 on a tolerance breach.
    Gradcheck {
        #[arg(long, value_enum, default_value = "all")]
        scope: ScopeArg,
    },
    /// Pre-train and fine-tune with each combination of objectives.
    Ablate(#[command(flatten)] Overrides),
    /// Export token and segment representations of one document as CSV.
    DumpReps {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        document: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Tolerance,
}

impl From<docpretrain::Error> for Failure {
    fn from(e: docpretrain::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn load_config(o: &Overrides) -> Result<RunConfig, Failure> {
    let mut c = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = o.seed {
        c.seed = s;
    }
    if let Some(out) = &o.out {
        c.out = out.clone();
    }
    Ok(c)
}

fn print_manifest(m: &Manifest) {
    println!("{}", serde_json::to_string_pretty(m).unwrap_or_default());
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::GenCorpus(o) => print_manifest(&pipeline::gen_corpus(&load_config(&o)?)?),
        Command::TrainBpe { corpus, merges, out } => print_manifest(&pipeline::train_tokenizer(&corpus, merges, &out)?),
        Command::Pretrain(o) => {
            let mut c = load_config(&o)?;
            if let Some(e) = o.epochs {
                c.pretrain.epochs = e;
            }
            print_manifest(&pipeline::cmd_pretrain(&c)?);
        }
        Command::Finetune { overrides, checkpoint, task } => {
            let mut c = load_config(&overrides)?;
            if let Some(e) = overrides.epochs {
                c.finetune.train.epochs = e;
            }
            print_manifest(&pipeline::cmd_finetune(&c, &checkpoint, task.map(Task::from))?);
        }
        Command::Evaluate { checkpoint, dataset, out } => {
            let (report, _) = pipeline::cmd_evaluate(&checkpoint, &dataset, &out)?;
            println!("{}", serde_json::to_string_pretty(&report.metrics).unwrap_or_default());
        }
        Command::Gradcheck { scope } => gradcheck(scope)?,
        Command::Ablate(o) => {
            let mut c = load_config(&o)?;
            if let Some(e) = o.epochs {
                c.pretrain.epochs = e;
            }
            let (rows, _) = pipeline::cmd_ablate(&c)?;
            print!("{}", pipeline::ablation_table(&rows, c.finetune.task));
        }
        Command::DumpReps { checkpoint, document, out } => {
            pipeline::dump_reps(&checkpoint, &document, &out)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn gradcheck(scope: ScopeArg) -> Result<(), Failure> {
    let scopes: Vec<Scope> = match scope {
        ScopeArg::Primitives => vec![Scope::Primitives],
        ScopeArg::Encoder => vec![Scope::Encoder],
        ScopeArg::Losses => vec![Scope::Losses],
        ScopeArg::All => Scope::ALL.to_vec(),
    };
    let mut ok = true;
    println!("{:<11} {:<28} {:>12} {:>8}  status", "scope", "check", "max rel err", "coords");
    for s in scopes {
        for r in gradsuite::run(s)? {
            ok &= r.pass;
            let scope = serde_json::to_value(r.scope).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let status = if r.pass { "ok" } else { "FAIL" };
            println!("{scope:<11} {:<28} {:>12.3e} {:>8}  {status}", r.name, r.max_rel_error, r.checked);
        }
    }
    println!("tolerance {TOLERANCE:e}");
    if ok {
        Ok(())
    } else {
        Err(Failure::Tolerance)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Tolerance) => {
            eprintln!("error: gradient check exceeded tolerance");
            ExitCode::from(2)
        }
    }
}

