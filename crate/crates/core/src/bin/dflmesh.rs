use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dflmesh::bounds::{self, BoundParams};
use dflmesh::engine::{metrics_csv, FailureMode};
use dflmesh::experiments::{
    compare_csv, compare_topologies, failure_csv, failure_sweep, run_from_config,
    ExperimentConfig, Setup, SpectralJson, TopologyJson, TopologySpec,
};
use dflmesh::overlay::{apply_churn, parse_churn_script, OverlayNetwork};
use dflmesh::Error;

#[derive(Parser)]
#[command(name = "dflmesh", version, about = "Decentralized federated learning over graph topologies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the configured topology and write its edge list and spectrum.
    Topology {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and write metrics.csv, topology.json, spectral.json.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grow an overlay by joins, apply a churn script, emit the event log.
    Overlay {
        #[arg(long)]
        nodes: usize,
        #[arg(long, default_value_t = 2)]
        rings: usize,
        #[arg(long)]
        churn_script: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the convergence and stability bounds for a parameter file.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        t_max: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one training config on several topologies.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated, e.g. `ring,expander:4,complete`. Defaults to the
        /// config's `compare` list, then to that example.
        #[arg(long)]
        topologies: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerun a config under increasing node-failure fractions.
    Failures {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "0,0.1,0.2")]
        fractions: String,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value = "transient")]
        mode: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() || matches!(e, Error::Io(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn out_dir(flag: Option<PathBuf>, cfg: Option<&ExperimentConfig>) -> PathBuf {
    flag.or_else(|| cfg.and_then(|c| c.output.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn emit(out: Option<&Path>, name: &str, text: &str) -> dflmesh::Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(name), text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run(command: Command) -> dflmesh::Result<()> {
    match command {
        Command::Topology { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let g = cfg.topology.build()?;
            let (m, theta) = cfg.mixing.build(&g)?;
            let summary = dflmesh::spectral::summarize(&g, m.lambda())?;
            let dir = out_dir(out, Some(&cfg));
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("topology.txt"), g.to_edge_list())?;
            let topo = TopologyJson {
                label: cfg.topology.label(),
                graph: g.to_json(),
                degrees: g.degrees(),
            };
            fs::write(dir.join("topology.json"), serde_json::to_string_pretty(&topo)?)?;
            let spec = SpectralJson { summary, theta };
            let text = serde_json::to_string_pretty(&spec)?;
            fs::write(dir.join("spectral.json"), &text)?;
            println!("{text}");
        }
        Command::Simulate { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out_dir(out, Some(&cfg));
            if let Ok(setup) = Setup::new(&cfg, &base_dir(&config)) {
                if let Some(f_star) = setup.convex_optimum().ok().flatten() {
                    eprintln!("global optimum loss {f_star:.6e}");
                }
            }
            let art = run_from_config(&cfg, &base_dir(&config), &dir)?;
            if let Some(last) = art.output.last() {
                eprintln!(
                    "round {}: train_loss {:.6} test_acc {} lambda {:.6}",
                    last.round,
                    last.train_loss,
                    last.test_acc.map_or("-".into(), |a| format!("{a:.4}")),
                    art.spectral.lambda_mix
                );
            }
            eprintln!("wrote {}", art.dir.display());
        }
        Command::Overlay {
            nodes,
            rings,
            churn_script,
            seed,
            out,
        } => {
            let mut net = OverlayNetwork::build(nodes, rings, seed)?;
            let mut failed_checks = 0;
            if let Some(path) = churn_script {
                let text = fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                let script = parse_churn_script(&text).map_err(|e| Error::Config(e.to_string()))?;
                failed_checks = apply_churn(&mut net, &script)?;
            }
            let g = net.equivalent_graph();
            let log = serde_json::to_string_pretty(net.event_log())?;
            match &out {
                Some(dir) => {
                    fs::create_dir_all(dir)?;
                    fs::write(dir.join("events.json"), log)?;
                    fs::write(dir.join("topology.txt"), g.to_edge_list())?;
                    let ids = serde_json::to_string(&net.ids())?;
                    fs::write(dir.join("node_ids.json"), ids)?;
                }
                None => print!("{}", g.to_edge_list()),
            }
            eprintln!(
                "{} live nodes, {} edges, max degree {}, connected {}",
                net.len(),
                g.edge_count(),
                g.max_degree(),
                g.is_connected()
            );
            if let Err(msg) = net.check() {
                eprintln!("final check failed: {msg}");
                failed_checks += 1;
            }
            if failed_checks > 0 {
                return Err(Error::InvalidGraph(format!("{failed_checks} overlay checks failed")));
            }
        }
        Command::Bounds { config, t_max, out } => {
            let text = fs::read_to_string(&config)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", config.display())))?;
            let params: BoundParams = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("line {} column {}: {e}", e.line(), e.column())))?;
            let report = bounds::report(&params, t_max).map_err(|e| match e {
                Error::InvalidArgument(m) => Error::Config(m),
                other => other,
            })?;
            let json = serde_json::to_string_pretty(&report)?;
            emit(out.as_deref(), "bounds.json", &format!("{json}\n"))?;
        }
        Command::Compare {
            config,
            topologies,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let list: Vec<String> = match topologies {
                Some(t) => t.split(',').map(|s| s.trim().to_string()).collect(),
                None if !cfg.compare.is_empty() => cfg.compare.clone(),
                None => vec!["ring".into(), "expander:4".into(), "complete".into()],
            };
            let specs = list
                .iter()
                .map(|s| TopologySpec::parse_shorthand(s, cfg.topology.n, cfg.topology.seed))
                .collect::<dflmesh::Result<Vec<_>>>()?;
            let rows = compare_topologies(&cfg, &specs, &base_dir(&config))?;
            emit(out.as_deref(), "compare.csv", &compare_csv(&rows))?;
            if let Some(dir) = &out {
                for row in &rows {
                    let name = format!("metrics_{}.csv", row.topology.replace([':', '.'], "-"));
                    fs::write(dir.join(name), metrics_csv(&row.records))?;
                }
            }
        }
        Command::Failures {
            config,
            fractions,
            seeds,
            mode,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let fractions = fractions
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad fraction {s:?}")))
                })
                .collect::<dflmesh::Result<Vec<_>>>()?;
            let mode = match mode.as_str() {
                "transient" => FailureMode::Transient,
                "permanent" => FailureMode::Permanent,
                other => return Err(Error::Config(format!("unknown failure mode {other:?}"))),
            };
            let rows = failure_sweep(&cfg, &fractions, seeds, mode, &base_dir(&config))?;
            emit(out.as_deref(), "failures.csv", &failure_csv(&rows))?;
        }
    }
    Ok(())
}
