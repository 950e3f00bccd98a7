use std::path::{Path, PathBuf};
use std::io::Write as _;
use std::process::ExitCode;

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand};
use qunl::hybrid::{load_checkpoint, save_checkpoint};
use qunl::metrics::{accuracy_of, evaluate, EvalOptions};
use qunl::runner::{emit_report, gradcheck, load_pool, prepare, run_experiment, ExperimentConfig, Prepared, ReportFormat};
use qunl::train::{retrain_oracle, train_base};
use qunl::unlearn::run_method;

/// `println!` that tolerates a closed stdout (e.g. piped into `head`).
macro_rules! out {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(name = "qunl", version, about = "Hybrid quantum-classical unlearning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Use this seed instead of the first one in the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the file's `experiment.out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base model on retain and forget data.
    Train(Common),
    /// Retrain from scratch on the retain set only.
    Oracle(Common),
    /// Apply one unlearning method to a base checkpoint.
    Unlearn {
        #[command(flatten)]
        common: Common,
        /// Method id, e.g. GA or EU-k2.
        #[arg(long)]
        method: String,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score an unlearned checkpoint against the base and oracle.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        unlearned: PathBuf,
        #[arg(long)]
        oracle: PathBuf,
    },
    /// Every seed and method of the file; writes report.csv and report.json.
    Run(Common),
    /// Check analytic gradients against finite differences.
    Gradcheck,
}

struct Session {
    cfg: ExperimentConfig,
    seed: u64,
    out: PathBuf,
}

impl Session {
    fn open(c: &Common) -> anyhow::Result<Self> {
        let mut cfg = ExperimentConfig::load(&c.config)?;
        if let Some(s) = c.seed {
            cfg.experiment.seeds = vec![s];
        }
        let seed = cfg.experiment.seeds[0];
        let out = c.out.clone().unwrap_or_else(|| cfg.out_dir());
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Session { cfg, seed, out })
    }

    fn data(&self) -> anyhow::Result<Prepared> {
        let pool = load_pool(&self.cfg)?;
        Ok(prepare(&self.cfg, &pool, self.seed)?)
    }

    fn path(&self, stem: &str) -> PathBuf {
        self.out.join(format!("{stem}_seed{}.qunl", self.seed))
    }
}

fn saved(model: &qunl::hybrid::HybridModel, path: &Path) -> anyhow::Result<()> {
    save_checkpoint(model, path)?;
    out!("wrote {}", path.display());
    Ok(())
}

fn execute(cmd: Command) -> anyhow::Result<bool> {
    match cmd {
        Command::Train(c) => {
            let s = Session::open(&c)?;
            let p = s.data()?;
            let (model, report) = train_base(&p.spec, &p.train, &p.test, &s.cfg.train_config(s.seed)?)?;
            out!("best epoch {} test accuracy {:.4}", report.best_epoch, report.best_test_acc);
            saved(&model, &s.path("base"))?;
        }
        Command::Oracle(c) => {
            let s = Session::open(&c)?;
            let p = s.data()?;
            let (model, report) = retrain_oracle(&p.spec, &p.splits.retain, &p.splits.test, &s.cfg.train_config(s.seed)?)?;
            out!(
                "best epoch {} test accuracy {:.4} forget accuracy {:.4}",
                report.best_epoch,
                report.best_test_acc,
                accuracy_of(&model, &p.splits.forget)?
            );
            saved(&model, &s.path("oracle"))?;
        }
        Command::Unlearn { common, method, checkpoint } => {
            let s = Session::open(&common)?;
            let mut plan = s.cfg.plan_for(&method)?;
            plan.config.seed = s.seed;
            let p = s.data()?;
            let base = load_checkpoint(&checkpoint)?;
            if base.spec() != &p.spec {
                bail!("{} does not match the architecture of {}", checkpoint.display(), common.config.display());
            }
            let res = run_method(plan.method, &base, &p.splits, &plan.config)?;
            out!(
                "{}: {} epochs, forget accuracy {:.4}, test accuracy {:.4}",
                res.label,
                res.trace.len(),
                accuracy_of(&res.model, &p.splits.forget)?,
                accuracy_of(&res.model, &p.splits.test)?
            );
            saved(&res.model, &s.path(&res.label))?;
        }
        Command::Evaluate { common, original, unlearned, oracle } => {
            let s = Session::open(&common)?;
            let p = s.data()?;
            let report = evaluate(
                &load_checkpoint(&original)?,
                &load_checkpoint(&unlearned)?,
                &load_checkpoint(&oracle)?,
                &p.splits,
                &EvalOptions {
                    kl_direction: s.cfg.metrics.kl_direction,
                    seed: s.seed,
                },
            )?;
            out!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Run(c) => {
            let s = Session::open(&c)?;
            let record = run_experiment(&s.cfg)?;
            for e in &record.errors {
                eprintln!("failed: {} seed {}: {}", e.method, e.seed, e.message);
            }
            for path in emit_report(&record, &s.out, &[ReportFormat::Csv, ReportFormat::Json])? {
                out!("wrote {}", path.display());
            }
            return Ok(record.errors.is_empty());
        }
        Command::Gradcheck => {
            let report = gradcheck()?;
            for c in &report.checks {
                let mark = if c.passed { "PASS" } else { "FAIL" };
                out!("{mark} {}: error {:.3e} (tolerance {:.0e})", c.name, c.error, c.tolerance);
            }
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<qunl::Error>().is_some_and(qunl::Error::is_config);
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}
