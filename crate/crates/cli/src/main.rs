use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use atom_core::predictor::PredictorKind;
use atom_core::sim::{
    metrics_csv, parse_metrics_csv, recompute_metrics, run_experiment, trend_svg, write_experiment,
    MetricsReport, ScenarioConfig, TrendSeries, METRICS_FILE,
};

use atom_cli::serve;

#[derive(Parser)]
#[command(
    name = "atom",
    version,
    about = "Adaptive game-theoretic human motion prediction: simulation and live sessions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run repeated rounds of a scenario and write logs and metrics.
    Simulate {
        /// Scenario config (JSON). Mutually exclusive with --scenario.
        #[arg(long, conflicts_with = "scenario")]
        config: Option<PathBuf>,
        /// Built-in scenario: exchange, corridor or doorway.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        predictor: Option<PredictorKind>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Start every round from the initial belief.
        #[arg(long)]
        reset_belief: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Recompute per-round metrics from the step records of a run.
    Metrics {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Plot per-round ADE, detour and minimum distance of one or more runs.
    Plot {
        #[arg(long = "in", num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every predictor on each config and write a combined CSV and plots.
    Compare {
        /// Config files or built-in scenario names.
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<String>,
        #[arg(long, default_value = "compare")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve live sessions over a websocket.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "doorway")]
        scenario: String,
        /// Directory for session recordings.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Directory with the browser client bundle.
        #[arg(long, default_value = "web/dist")]
        static_dir: PathBuf,
    },
    /// Replay a recorded live session offline and compare the states.
    Replay {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Print a built-in scenario config as JSON.
    Scenario { name: String },
}

fn load_config(spec: &str) -> Result<ScenarioConfig> {
    if ScenarioConfig::PRESETS.contains(&spec) {
        return Ok(ScenarioConfig::preset(spec)?);
    }
    ScenarioConfig::load(Path::new(spec)).with_context(|| format!("loading config {spec}"))
}

fn print_reports(reports: &[MetricsReport]) {
    println!(
        "{:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>6} {:>4}",
        "round", "ade_h1", "ade_h2", "ade_rbh", "detour", "min_d", "ttg", "col"
    );
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    for r in reports {
        println!(
            "{:>5} {:>8} {:>8} {:>8} {:>8.3} {:>8.3} {:>6} {:>4}",
            r.round,
            f(r.ade.first().copied()),
            f(r.ade.get(1).copied()),
            f(r.ade_robot_by_human),
            r.detour,
            r.min_distance,
            r.time_to_goal.map_or("-".into(), |t| t.to_string()),
            r.collisions
        );
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate {
            config,
            scenario,
            predictor,
            rounds,
            seed,
            reset_belief,
            out,
        } => {
            let mut cfg = match (config, scenario) {
                (Some(path), _) => ScenarioConfig::load(&path)
                    .with_context(|| format!("loading {}", path.display()))?,
                (None, Some(name)) => ScenarioConfig::preset(&name)?,
                (None, None) => bail!("either --config or --scenario is required"),
            };
            if let Some(p) = predictor {
                cfg.predictor = p;
            }
            if let Some(r) = rounds {
                cfg = cfg.with_rounds(r);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.reset_belief |= reset_belief;
            let exp = run_experiment(&cfg)?;
            write_experiment(&exp, &out)?;
            for r in exp.rounds.iter().filter(|r| r.error.is_some()) {
                eprintln!(
                    "round {} failed: {}",
                    r.round,
                    r.error.as_deref().unwrap_or_default()
                );
            }
            print_reports(&exp.metrics());
            println!("wrote {}", out.display());
        }
        Command::Metrics { input, csv } => {
            let reports = recompute_metrics(&input)?;
            std::fs::write(&csv, metrics_csv(&reports))?;
            print_reports(&reports);
        }
        Command::Plot { input, out } => {
            let mut groups = Vec::new();
            for dir in &input {
                let text = std::fs::read_to_string(dir.join(METRICS_FILE))
                    .with_context(|| format!("reading metrics of {}", dir.display()))?;
                let reports = parse_metrics_csv(&text)?;
                let label = reports
                    .first()
                    .map(|r| format!("{} {}", r.scenario, r.predictor))
                    .unwrap_or_else(|| dir.display().to_string());
                groups.push((label, reports));
            }
            std::fs::write(&out, trend_svg(&TrendSeries::standard_panels(&groups)))?;
            println!("wrote {}", out.display());
        }
        Command::Compare { configs, out, seed } => {
            let mut jobs = Vec::new();
            for spec in &configs {
                let base = load_config(spec)?;
                for kind in [PredictorKind::Atom, PredictorKind::Cv, PredictorKind::Sf] {
                    let mut cfg = base.clone();
                    cfg.predictor = kind;
                    if let Some(s) = seed {
                        cfg.seed = s;
                    }
                    jobs.push(cfg);
                }
            }
            let results: Vec<_> = jobs
                .par_iter()
                .map(|cfg| {
                    let dir = out.join(format!("{}-{}", cfg.name, cfg.predictor));
                    let exp = run_experiment(cfg)?;
                    write_experiment(&exp, &dir)?;
                    Ok::<_, anyhow::Error>((cfg.name.clone(), cfg.predictor, exp.metrics()))
                })
                .collect::<Result<_>>()?;
            let all: Vec<MetricsReport> = results.iter().flat_map(|(_, _, m)| m.clone()).collect();
            std::fs::write(out.join("compare.csv"), metrics_csv(&all))?;
            let mut names: Vec<&String> = results.iter().map(|(n, _, _)| n).collect();
            names.dedup();
            for name in names {
                let groups: Vec<_> = results
                    .iter()
                    .filter(|(n, _, _)| n == name)
                    .map(|(_, k, m)| (k.to_string(), m.clone()))
                    .collect();
                std::fs::write(
                    out.join(format!("{name}.svg")),
                    trend_svg(&TrendSeries::standard_panels(&groups)),
                )?;
            }
            for (name, kind, m) in &results {
                println!("== {name} / {kind}");
                print_reports(m);
            }
        }
        Command::Serve {
            port,
            scenario,
            record,
            static_dir,
        } => {
            let cfg = load_config(&scenario)?;
            tracing_subscriber::fmt().with_target(false).init();
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve::run(serve::ServeOptions {
                port,
                scenario: cfg,
                record,
                static_dir,
            }))?;
        }
        Command::Replay { input } => {
            let max = serve::verify_recording(&input)?;
            println!(
                "replayed {}: max state difference {max:.3e}",
                input.display()
            );
            if max > 1e-9 {
                bail!("replay differs from the recording");
            }
        }
        Command::Scenario { name } => {
            println!(
                "{}",
                serde_json::to_string_pretty(&ScenarioConfig::preset(&name)?)?
            );
        }
    }
    Ok(())
}
