//! Command-line front end: data collection, training, evaluation,
//! fine-tuning, ablation grids and run reports.

pub mod config;

use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::{Parser, Subcommand, ValueEnum};
use mosaic_core::datagen::{build_dataset, DatasetManifest};
use mosaic_core::evalharness::{
    compare, evaluate, load_last_checkpoints, render_table, summarize_run, Protocol, Regime, SuccessReport,
};
use mosaic_core::exec::Exec;
use mosaic_core::simworld::TaskKind;
use mosaic_core::trainer::{finetune, train, Trainer};
use mosaic_core::{Error, Result};

use config::{parse_assignment, parse_config, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "mosaic", version, about = "One-shot imitation: collect, train, evaluate, fine-tune, ablate, report")]
pub struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_parser = parse_assignment, value_name = "KEY=VALUE")]
    pub set: Vec<(String, String)>,
    /// Run rollouts and episode collection on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Grid {
    Contrastive,
    Architecture,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record expert episodes for both morphologies.
    Collect {
        /// Comma-separated task names (default: all four).
        #[arg(long)]
        tasks: Option<String>,
        /// Episodes per variation and morphology.
        #[arg(long)]
        episodes: Option<usize>,
        /// Dataset directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train from scratch.
    Train {
        /// Comma-separated training tasks.
        #[arg(long)]
        tasks: Option<String>,
        /// Gradient steps.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset directory written by `collect`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the last checkpoints of a run (or one checkpoint file).
    Eval {
        /// single-task, multi-task, novel-task, finetune or no-training.
        #[arg(long)]
        protocol: Option<String>,
        /// Comma-separated evaluation tasks; defaults to the checkpoint's tasks.
        #[arg(long = "eval-task")]
        eval_task: Option<String>,
        /// Run directory or checkpoint file.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Episodes per variation and checkpoint.
        #[arg(long)]
        episodes: Option<usize>,
        /// How many of the last checkpoints to average.
        #[arg(long)]
        checkpoints: Option<usize>,
        /// Directory for the report when `--checkpoint` is a file or absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune a checkpoint on a held-out task.
    Finetune {
        /// Pretrained run directory or checkpoint file.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Held-out task to fine-tune on.
        #[arg(long)]
        task: String,
        /// Fraction of the task's episodes to use, in (0, 1].
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every entry of a named variant grid.
    Ablate {
        #[arg(long, value_enum)]
        grid: Grid,
        /// Grid entries run concurrently as subprocesses.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Parent directory; one run directory per entry.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// JSON output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Named ablation entries and their config assignments.
pub fn grid_entries(grid: Grid) -> Vec<(&'static str, Vec<(&'static str, &'static str)>)> {
    let contrastive = vec![
        ("no-contra", vec![("contrastive.variant", "off")]),
        ("byol", vec![("contrastive.variant", "byol")]),
        ("pre-attn", vec![("contrastive.placement", "pre-attn")]),
        ("post-attn", vec![("contrastive.placement", "post-attn")]),
        ("both-attn", vec![("contrastive.placement", "both")]),
        ("no-temp", vec![("contrastive.variant", "no-temp")]),
        ("fix-temp", vec![("contrastive.variant", "fix-temp")]),
        ("rand-temp", vec![("contrastive.variant", "rand-temp")]),
    ];
    let architecture = vec![
        ("lstm", vec![("model.variant", "recurrent"), ("contrastive.placement", "pre-attn")]),
        ("mlp", vec![("model.variant", "mlp"), ("contrastive.placement", "pre-attn")]),
        ("full-attn", vec![("model.variant", "full-attn")]),
    ];
    match grid {
        Grid::Contrastive => contrastive,
        Grid::Architecture => architecture,
        Grid::All => contrastive.into_iter().chain(architecture).collect(),
    }
}

fn push(o: &mut Vec<(String, String)>, key: &str, v: Option<String>) {
    if let Some(v) = v {
        o.push((key.to_string(), v));
    }
}

/// Flag values of `cmd` as config assignments, applied after `--set`.
fn command_overrides(cmd: &Command) -> Vec<(String, String)> {
    let mut o = Vec::new();
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    match cmd {
        Command::Collect { tasks, episodes, out } => {
            push(&mut o, "data.tasks", tasks.clone());
            push(&mut o, "data.episodes", episodes.map(|e| e.to_string()));
            push(&mut o, "data.root", path(out));
        }
        Command::Train { tasks, steps, seed, data, out } => {
            push(&mut o, "train.tasks", tasks.clone());
            push(&mut o, "train.steps", steps.map(|s| s.to_string()));
            push(&mut o, "seed", seed.map(|s| s.to_string()));
            push(&mut o, "data.root", path(data));
            push(&mut o, "out", path(out));
        }
        Command::Eval { protocol, eval_task, episodes, checkpoints, out, .. } => {
            push(&mut o, "eval.protocol", protocol.clone());
            push(&mut o, "eval.tasks", eval_task.clone());
            push(&mut o, "eval.episodes", episodes.map(|e| e.to_string()));
            push(&mut o, "eval.checkpoints", checkpoints.map(|c| c.to_string()));
            push(&mut o, "out", path(out));
        }
        Command::Finetune { task, fraction, steps, data, out, .. } => {
            push(&mut o, "train.tasks", Some(task.clone()));
            push(&mut o, "train.data_fraction", fraction.map(|f| f.to_string()));
            push(&mut o, "train.steps", steps.map(|s| s.to_string()));
            push(&mut o, "data.root", path(data));
            push(&mut o, "out", path(out));
        }
        Command::Ablate { data, out, .. } => {
            push(&mut o, "data.root", path(data));
            push(&mut o, "out", path(out));
        }
        Command::Report { .. } => {}
    }
    o
}

/// Resolves the config for `cli`: defaults, file, `--set`, then command flags.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut overrides = cli.set.clone();
    overrides.extend(command_overrides(&cli.command));
    let mut cfg = parse_config(cli.config.as_deref(), &overrides)?;
    if cli.sequential {
        cfg.parallel = false;
    }
    Ok(cfg)
}

pub fn exec_of(cfg: &RunConfig) -> Exec {
    if cfg.parallel {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

/// Parses the process arguments and runs the command.
pub fn main_with(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match resolve(&cli).and_then(|cfg| dispatch(&cli.command, &cfg)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cmd: &Command, cfg: &RunConfig) -> Result<()> {
    let exec = exec_of(cfg);
    match cmd {
        Command::Collect { .. } => {
            cfg.validate()?;
            let m = build_dataset(&cfg.collect_tasks, cfg.collect_episodes, &cfg.data_root, exec)?;
            println!(
                "collected {} episodes for {} under {}",
                m.episodes.len(),
                m.tasks.iter().map(|t| t.name()).collect::<Vec<_>>().join(","),
                cfg.data_root.display()
            );
            Ok(())
        }
        Command::Train { .. } => run_train(cfg, exec),
        Command::Eval { checkpoint, .. } => run_eval(cfg, checkpoint.as_deref(), exec).map(|_| ()),
        Command::Finetune { checkpoint, .. } => run_finetune(cfg, checkpoint, exec),
        Command::Ablate { grid, jobs, .. } => run_ablate(cfg, *grid, *jobs),
        Command::Report { runs, out } => run_report(runs, out.as_deref()),
    }
}

fn run_train(cfg: &RunConfig, exec: Exec) -> Result<()> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(&cfg.data_root)?;
    cfg.write_resolved(&cfg.out)?;
    let out = train(&cfg.train, &manifest, &cfg.out, exec)?;
    println!("trained {} steps; total loss {:.4}; {} checkpoints in {}", out.last.step, out.last.total, out.checkpoints.len(), cfg.out.display());
    Ok(())
}

fn run_finetune(cfg: &RunConfig, checkpoint: &Path, exec: Exec) -> Result<()> {
    cfg.validate()?;
    let (_, ckpt) = load_last_checkpoints(checkpoint, 1)?.pop().expect("one checkpoint");
    let task = cfg.train.tasks[0];
    let manifest = DatasetManifest::load(&cfg.data_root)?;
    cfg.write_resolved(&cfg.out)?;
    let out = finetune(&ckpt, task, cfg.train.data_fraction, &cfg.train, &manifest, &cfg.out, exec)?;
    println!("fine-tuned on {task} for {} steps; {} checkpoints in {}", out.last.step, out.checkpoints.len(), cfg.out.display());
    Ok(())
}

/// Evaluates under `cfg.eval`, writing `report-<protocol>.json` into the run
/// directory (or `cfg.out` when given a checkpoint file).
pub fn run_eval(cfg: &RunConfig, checkpoint: Option<&Path>, exec: Exec) -> Result<SuccessReport> {
    let mut protocol = cfg.eval.clone();
    let checkpoints = if protocol.regime == Regime::NoTraining {
        protocol.checkpoints = 1;
        protocol.train_tasks.clear();
        let trainer = Trainer::new(cfg.train.clone())?;
        vec![("untrained".to_string(), trainer.checkpoint())]
    } else {
        let path = checkpoint.ok_or_else(|| Error::Config("eval needs --checkpoint".into()))?;
        let loaded = load_last_checkpoints(path, protocol.checkpoints)?;
        protocol.train_tasks = loaded[0].1.meta.tasks.clone();
        loaded
    };
    if protocol.eval_tasks.is_empty() {
        protocol.eval_tasks = match protocol.regime {
            Regime::NoTraining => cfg.train.tasks.clone(),
            _ => protocol.train_tasks.clone(),
        };
    }
    let report = evaluate(&protocol, &checkpoints, exec)?;
    let dir = match checkpoint {
        Some(p) if p.is_dir() => p.to_path_buf(),
        _ => cfg.out.clone(),
    };
    write_report(&dir, &report)?;
    for row in &report.eval {
        println!("{:<10} v{}  {:6.1} ± {:5.1}  (n={})", row.task.name(), row.variation, row.mean_pct, row.std_pct, row.n);
    }
    Ok(report)
}

pub fn write_report(dir: &Path, report: &SuccessReport) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("report-{}.json", report.regime.name()));
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn ablation_protocol(tasks: &[TaskKind], base: &Protocol) -> Protocol {
    Protocol {
        regime: if tasks.len() == 1 { Regime::SingleTask } else { Regime::MultiTask },
        train_tasks: tasks.to_vec(),
        eval_tasks: tasks.to_vec(),
        ..base.clone()
    }
}

/// Resolved config of every grid entry, each with its own run directory.
pub fn ablation_configs(cfg: &RunConfig, grid: Grid) -> Result<Vec<(String, RunConfig)>> {
    grid_entries(grid)
        .into_iter()
        .map(|(name, sets)| {
            let mut c = cfg.clone();
            for (k, v) in sets {
                c.set(k, v)?;
            }
            c.out = cfg.out.join(name);
            c.eval = ablation_protocol(&c.train.tasks, &cfg.eval);
            c.validate()?;
            Ok((name.to_string(), c))
        })
        .collect()
}

fn run_ablate(cfg: &RunConfig, grid: Grid, jobs: usize) -> Result<()> {
    let entries = ablation_configs(cfg, grid)?;
    for (_, c) in &entries {
        c.write_resolved(&c.out)?;
    }
    if jobs <= 1 {
        for (name, c) in &entries {
            println!("== {name}");
            run_train(c, exec_of(c))?;
            run_eval(c, Some(&c.out), exec_of(c))?;
        }
    } else {
        let exe = std::env::current_exe().map_err(|e| Error::io("current executable", e))?;
        for chunk in entries.chunks(jobs) {
            let children: Vec<_> = chunk
                .iter()
                .map(|(name, c)| {
                    let config = c.out.join("config.resolved");
                    let script = format!(
                        "{exe} --config {cfg} --sequential train && {exe} --config {cfg} --sequential eval --checkpoint {out}",
                        exe = shell_quote(&exe),
                        cfg = shell_quote(&config),
                        out = shell_quote(&c.out)
                    );
                    let log = c.out.join("ablate.log");
                    let file = std::fs::File::create(&log).map_err(|e| Error::io(&log, e))?;
                    let err = file.try_clone().map_err(|e| Error::io(&log, e))?;
                    let child = Process::new("sh")
                        .arg("-c")
                        .arg(script)
                        .stdout(file)
                        .stderr(err)
                        .spawn()
                        .map_err(|e| Error::io(&exe, e))?;
                    Ok((name.clone(), child))
                })
                .collect::<Result<_>>()?;
            for (name, mut child) in children {
                let status = child.wait().map_err(|e| Error::io(&exe, e))?;
                if !status.success() {
                    return Err(Error::Data(format!("ablation entry {name} failed with {status}")));
                }
                println!("== {name} done");
            }
        }
    }
    let dirs: Vec<PathBuf> = entries.iter().map(|(_, c)| c.out.clone()).collect();
    run_report(&dirs, Some(&cfg.out.join("comparison.json")))
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

fn run_report(runs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let summaries = runs.iter().map(|r| summarize_run(r)).collect::<Result<Vec<_>>>()?;
    let table = compare(&summaries)?;
    print!("{}", render_table(&table));
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("comparison.json"));
    let json = serde_json::to_string_pretty(&table).expect("comparison serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(())
}
