//! `ckd`: pretrain mentors, distill students, run ablation suites and render
//! reports. Relative paths are resolved against `--out`.

mod report;
mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ckd_core::experiment::{
    load_mentors, mentors_dir, prepare_data, pretrain_classroom, run_dir, run_distill, save_mentors, AblationConfig,
    ExperimentConfig, SuiteKind,
};
use ckd_core::{CkdError, Result};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "ckd", version, about = "Classroom-style multi-mentor knowledge distillation")]
struct Cli {
    /// Root directory for every relative input and output path.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Worker threads for mentor pretraining and ablation cells.
    #[arg(long, global = true, env = "CKD_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the teacher and peers and save their weights under `<output>/mentors`.
    Pretrain { config: PathBuf },
    /// Distill a student from saved mentors into `<output>/runs/<mode>-<method>-seed<seed>`.
    Distill { config: PathBuf },
    /// Run every (variation, seed) cell of a suite and write per-cell and aggregate CSVs.
    Ablate { suite: PathBuf },
    /// Render rank, temperature and per-class gain charts plus a combined CSV.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Reference run for the per-class gain chart; defaults to the first `nokd` run.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Destination directory.
        #[arg(long, default_value = "report")]
        dest: PathBuf,
    },
    /// Print a preset experiment, or with `--suite` an ablation suite around it, as TOML.
    Preset {
        name: String,
        #[arg(long, value_parser = parse_suite)]
        suite: Option<SuiteKind>,
    },
}

fn parse_suite(s: &str) -> std::result::Result<SuiteKind, String> {
    match s {
        "classroom-size" => Ok(SuiteKind::ClassroomSize),
        "ranking-method" => Ok(SuiteKind::RankingMethod),
        "temperature-mode" => Ok(SuiteKind::TemperatureMode),
        "baseline-compare" => Ok(SuiteKind::BaselineCompare),
        _ => Err("expected one of classroom-size, ranking-method, temperature-mode, baseline-compare".into()),
    }
}

fn exit_code(e: &CkdError) -> u8 {
    match e {
        CkdError::InvalidArgument(_) | CkdError::ShapeMismatch { .. } | CkdError::Config(_) => 2,
        CkdError::Io { .. } | CkdError::Format { .. } => 3,
        CkdError::MissingArtifact(_) => 4,
        CkdError::NonFinite { .. } => 5,
    }
}

struct Context {
    root: PathBuf,
    workers: usize,
}

impl Context {
    fn path(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CkdError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CkdError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn pretrain(ctx: &Context, config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(ctx.path(config))?;
    let dir = mentors_dir(&cfg.output_dir(&ctx.root));
    create_dir(&dir)?;
    let data = prepare_data(&cfg.dataset, &ctx.root)?;
    eprintln!(
        "pretraining {} mentors on {} workers",
        cfg.classroom.peers.len() + 1,
        ctx.workers
    );
    let (mentors, reports) = pretrain_classroom(&cfg.classroom, &data, ctx.workers)?;
    save_mentors(&dir, &mentors, &reports)?;
    for r in &reports {
        println!(
            "{:<8} {:<16} test top-1 {:6.2}",
            r.id.to_string(),
            r.spec.to_string(),
            r.test_top1
        );
    }
    println!("mentors written to {}", dir.display());
    Ok(())
}

fn distill(ctx: &Context, config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(ctx.path(config))?;
    let out = cfg.output_dir(&ctx.root);
    let mentors = load_mentors(&mentors_dir(&out), &cfg.classroom)?;
    let data = prepare_data(&cfg.dataset, &ctx.root)?;
    let outcome = run_distill(&cfg.classroom, &cfg.distill, &data, &mentors, cfg.classroom.peers.len())?;
    let dir = run_dir(&out, &cfg.distill);
    outcome.write(&dir)?;
    println!(
        "final test top-1 {:.2}; run written to {}",
        outcome.result.final_test.top1,
        dir.display()
    );
    Ok(())
}

fn suite_name(kind: SuiteKind) -> &'static str {
    match kind {
        SuiteKind::ClassroomSize => "classroom-size",
        SuiteKind::RankingMethod => "ranking-method",
        SuiteKind::TemperatureMode => "temperature-mode",
        SuiteKind::BaselineCompare => "baseline-compare",
    }
}

/// Runs a suite. Failed cells do not stop it; the first one is returned after
/// every output has been written.
fn ablate(ctx: &Context, suite: &Path) -> Result<Option<CellFailure>> {
    let cfg = AblationConfig::load(ctx.path(suite))?;
    let out = cfg.base.output_dir(&ctx.root);
    let mentors = load_mentors(&mentors_dir(&out), &cfg.base.classroom)?;
    let data = prepare_data(&cfg.base.dataset, &ctx.root)?;
    let dir = out.join("ablations").join(suite_name(cfg.suite));
    create_dir(&dir)?;
    eprintln!(
        "{} cells on {} workers",
        cfg.variations().len() * cfg.seeds.len(),
        ctx.workers
    );
    let report = ckd_core::experiment::run_ablation(&cfg, &data, &mentors, ctx.workers)?;
    for cell in &report.cells {
        if let Ok(outcome) = &cell.outcome {
            outcome.write(
                &dir.join("cells")
                    .join(format!("{}-seed{}", cell.variation.label(), cell.seed)),
            )?;
        }
    }
    write_text(&dir.join("cells.csv"), &report.cells_csv())?;
    write_text(&dir.join("aggregate.csv"), &report.aggregate_csv())?;
    for a in report.aggregate() {
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:6.2}")).unwrap_or_else(|| "     -".into());
        println!(
            "{:<24} mean {} std {} ({} ok, {} failed)",
            a.label,
            fmt(a.mean_top1),
            fmt(a.std_top1),
            a.completed,
            a.failed
        );
    }
    println!("results written to {}", dir.display());
    let mut first = None;
    for cell in report.failures() {
        if let Err(e) = &cell.outcome {
            eprintln!("cell {} seed {} failed: {e}", cell.variation.label(), cell.seed);
            first.get_or_insert(CellFailure {
                label: cell.variation.label(),
                seed: cell.seed,
                code: exit_code(e),
            });
        }
    }
    Ok(first)
}

struct CellFailure {
    label: String,
    seed: u64,
    code: u8,
}

enum Failure {
    Core(CkdError),
    Cells(CellFailure),
}

impl From<CkdError> for Failure {
    fn from(e: CkdError) -> Self {
        Failure::Core(e)
    }
}

fn report(ctx: &Context, dirs: &[PathBuf], baseline: Option<&Path>, dest: &Path) -> Result<()> {
    let mut runs = dirs
        .iter()
        .map(|d| report::Run::load(&ctx.path(d)))
        .collect::<Result<Vec<_>>>()?;
    let baseline = match baseline {
        Some(b) => {
            let b = ctx.path(b);
            match dirs.iter().position(|d| ctx.path(d) == b) {
                Some(i) => Some(i),
                None => {
                    runs.push(report::Run::load(&b)?);
                    let i = runs.len() - 1;
                    Some(i)
                }
            }
        }
        None => None,
    };
    let rendered = report::render(&runs, baseline)?;
    let written = report::write_all(&ctx.path(dest), &rendered)?;
    for (name, s) in &rendered.gain_summary {
        println!(
            "{name}: {} improved, {} degraded, {} unchanged",
            s.improved, s.degraded, s.unchanged
        );
    }
    if rendered.gain_summary.is_empty() && baseline.is_none() {
        eprintln!("no nokd run given; skipping the per-class gain chart");
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn preset(name: &str, suite: Option<SuiteKind>) -> Result<()> {
    let base = ExperimentConfig::preset(name)?;
    let text = match suite {
        Some(kind) => AblationConfig::new(kind, base).to_toml()?,
        None => base.to_toml()?,
    };
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    let workers = match cli.workers {
        Some(0) => return Err(CkdError::Config("workers must be at least 1".into()).into()),
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let ctx = Context { root: cli.out, workers };
    match &cli.command {
        Command::Pretrain { config } => pretrain(&ctx, config)?,
        Command::Distill { config } => distill(&ctx, config)?,
        Command::Ablate { suite } => {
            if let Some(cells) = ablate(&ctx, suite)? {
                return Err(Failure::Cells(cells));
            }
        }
        Command::Report { dirs, baseline, dest } => report(&ctx, dirs, baseline.as_deref(), dest)?,
        Command::Preset { name, suite } => preset(name, *suite)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Cells(c)) => {
            eprintln!(
                "error: ablation finished with failed cells (first: {} seed {})",
                c.label, c.seed
            );
            ExitCode::from(c.code)
        }
    }
}
