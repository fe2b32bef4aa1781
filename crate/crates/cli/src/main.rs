use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use malspi::experiments::{
    run_experiment, timing_benchmark, write_timing_csv, BenchSettings, ExperimentConfig, GraphSpec, TimingRow,
};
use malspi::graph::{check_graphical_conditions, DependencySets};
use malspi::lqr::StructuredPolicy;
use malspi::malspi::{sample_bound_direct, sample_bound_indirect, Architecture, BoundInputs, SetBoundTerms};
use malspi::verify::{run_all, VerifySettings};
use serde_json::{json, Value};

/// Q-function decomposition and multi-agent policy iteration for networked LQR.
#[derive(Parser)]
#[command(name = "malspi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its CSV artifacts.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory (default: the config's output_dir, below the output root).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, env = "MALSPI_OUTPUT_ROOT")]
        output_root: Option<PathBuf>,
    },
    /// Print dependency sets and graphical-condition reports as JSON.
    Graphs {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        n_agents: Option<usize>,
    },
    /// Evaluate the sample-complexity calculators.
    Bounds {
        /// Raw calculator inputs (JSON); evaluated with --mode.
        #[arg(long, conflicts_with_all = ["config", "example"])]
        inputs: Option<PathBuf>,
        #[arg(long, default_value = "direct", value_parser = ["direct", "indirect"])]
        mode: String,
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        n_agents: Option<usize>,
        /// 1-based agent; all agents when absent.
        #[arg(long)]
        agent: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 1.0)]
        constant: f64,
    },
    /// Run the acceptance checks; exits non-zero when any check fails.
    Verify {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long)]
        skip_replication: bool,
        #[arg(long)]
        skip_timing: bool,
        /// Print a JSON array instead of one line per check.
        #[arg(long)]
        json: bool,
    },
    /// Per-iteration learning time over network sizes.
    Bench {
        #[command(flatten)]
        source: ConfigSource,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_delimiter = ',', default_values_t = [8usize, 20, 40])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        max_full_n: usize,
        #[arg(long, default_value_t = 2)]
        timed_iterations: usize,
        /// Also write timing.csv here.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, env = "MALSPI_OUTPUT_ROOT")]
        output_root: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Overrides {
    /// Replaces the config's seed list (repeatable).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Replaces the config's architecture list (repeatable).
    #[arg(long = "arch")]
    archs: Vec<Architecture>,
    #[arg(long)]
    n_agents: Option<usize>,
}

#[derive(Args)]
struct ConfigSource {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in network (1 or 2) with default parameters.
    #[arg(long, conflicts_with = "config", value_parser = clap::value_parser!(u8).range(1..=2))]
    example: Option<u8>,
}

impl ConfigSource {
    fn load(&self) -> Result<ExperimentConfig> {
        Ok(match (&self.config, self.example) {
            (Some(path), _) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            (None, Some(2)) => ExperimentConfig {
                graph: GraphSpec::Example2,
                ..ExperimentConfig::default()
            },
            _ => ExperimentConfig::default(),
        })
    }
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
        }
        if !self.archs.is_empty() {
            cfg.architectures = self.archs.clone();
        }
        if let Some(n) = self.n_agents {
            set_agents(cfg, n);
        }
        cfg.validate()?;
        Ok(())
    }
}

fn set_agents(cfg: &mut ExperimentConfig, n: usize) {
    if cfg.n_agents != n {
        cfg.n_agents = n;
        cfg.x0 = None;
        cfg.sigma0 = None;
    }
}

fn resolve_output(explicit: Option<PathBuf>, root: Option<PathBuf>, relative: &Path) -> PathBuf {
    match (explicit, root) {
        (Some(p), _) => p,
        (None, Some(root)) if relative.is_relative() => root.join(relative),
        _ => relative.to_path_buf(),
    }
}

fn print_json(v: &Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, Value::from)
}

fn timing_json(rows: &[TimingRow]) -> Value {
    rows.iter()
        .map(|r| {
            json!({
                "architecture": r.architecture.name(),
                "n_agents": r.n_agents,
                "mean_ms": opt(r.mean_ms),
                "median_ms": opt(r.median_ms),
                "iterations_timed": r.iterations_timed,
                "skipped_updates": r.skipped_updates,
                "ratio_to_indirect": opt(r.ratio_to_indirect),
            })
        })
        .collect()
}

fn cmd_run(config: &Path, overrides: &Overrides, output: Option<PathBuf>, root: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    overrides.apply(&mut cfg)?;
    let dir = resolve_output(output, root, &cfg.output_dir);
    let out = run_experiment(&cfg, Some(&dir))?;
    let last = out.table.final_iteration();
    let finals: serde_json::Map<String, Value> = cfg
        .architectures
        .iter()
        .map(|a| (a.name().to_string(), opt(out.table.mean_cost(*a, last))))
        .collect();
    print_json(&json!({
        "output_dir": dir.display().to_string(),
        "iterations": last,
        "seeds": cfg.seeds,
        "mean_final_cost": finals,
        "timing": timing_json(&out.table.timing),
    }))
}

fn cmd_graphs(cfg: &ExperimentConfig) -> Result<()> {
    let g = cfg.graphs()?;
    let deps = DependencySets::compute(&g);
    let mut agents = Vec::new();
    for i in 0..g.n_agents() {
        let cond = check_graphical_conditions(&g, &deps, i, None)?;
        let members: Vec<Value> = deps
            .gradient(i)
            .iter()
            .map(|j| {
                let r = check_graphical_conditions(&g, &deps, i, Some(j))?;
                Ok(json!({
                    "agent": j + 1,
                    "cond_b": r.cond_b,
                    "value_set_is_proper_subset": r.value_set_is_proper_subset,
                }))
            })
            .collect::<Result<_>>()?;
        agents.push(json!({
            "agent": i + 1,
            "reachability": deps.reachability(i).to_one_based(),
            "value": deps.value(i).to_one_based(),
            "gradient": deps.gradient(i).to_one_based(),
            "direct": deps.direct(i).to_one_based(),
            "cond_a": cond.cond_a,
            "direct_set_is_proper": cond.direct_set_is_proper,
            "gradient_members": members,
        }));
    }
    let edges: Vec<[usize; 2]> = deps.value_edges().into_iter().map(|(a, b)| [a + 1, b + 1]).collect();
    print_json(&json!({
        "n_agents": g.n_agents(),
        "max_direct_gap": deps.max_direct_gap(),
        "value_edges": edges,
        "agents": agents,
    }))
}

fn cmd_bounds_from_model(cfg: &ExperimentConfig, agent: Option<usize>, epsilon: f64, constant: f64) -> Result<()> {
    let sys = cfg.system()?;
    let deps = DependencySets::compute(sys.graphs());
    let k0 = StructuredPolicy::zeros(sys.graphs(), cfg.n_x, cfg.n_u);
    let init = cfg.initial_state()?;
    let terms = |set: &_, owners: &_| SetBoundTerms::from_model(&sys, &k0, &k0, set, owners, &init.cov, cfg.sigma_eta);
    let inputs = |t: Vec<SetBoundTerms>| BoundInputs {
        sigma_w: cfg.sigma_w,
        sigma_eta: cfg.sigma_eta,
        epsilon,
        constant,
        terms: t,
        weights: None,
    };
    let n = sys.n_agents();
    let agents: Vec<usize> = match agent {
        Some(a) if a == 0 || a > n => bail!("agent {a} is outside 1..={n}"),
        Some(a) => vec![a - 1],
        None => (0..n).collect(),
    };
    let all = malspi::graph::AgentSet::full(n);
    let central = sample_bound_direct(&inputs(vec![terms(&all, &all)?]))?;
    let mut rows = Vec::new();
    for i in agents {
        let direct = sample_bound_direct(&inputs(vec![terms(deps.direct(i), deps.gradient(i))?]))?;
        let members = deps
            .gradient(i)
            .iter()
            .map(|j| terms(deps.value(j), &malspi::graph::AgentSet::singleton(j)))
            .collect::<malspi::Result<Vec<_>>>()?;
        let indirect = sample_bound_indirect(&inputs(members))?;
        rows.push(json!({
            "agent": i + 1,
            "direct_set": deps.direct(i).to_one_based(),
            "direct": direct,
            "indirect": indirect,
        }));
    }
    print_json(&json!({
        "policy": "K0 = 0",
        "horizon": cfg.horizon,
        "centralized": central,
        "agents": rows,
    }))
}

fn cmd_bounds_from_inputs(path: &Path, mode: &str) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let inputs: BoundInputs = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let v = if mode == "indirect" {
        serde_json::to_value(sample_bound_indirect(&inputs)?)?
    } else {
        serde_json::to_value(sample_bound_direct(&inputs)?)?
    };
    print_json(&v)
}

fn cmd_verify(seed: u64, skip_replication: bool, skip_timing: bool, as_json: bool) -> Result<bool> {
    let settings = VerifySettings {
        seed,
        include_replication: !skip_replication,
        include_timing: !skip_timing,
        ..VerifySettings::default()
    };
    let outcomes = run_all(&settings, |o| {
        if !as_json {
            println!("{o}");
        }
    });
    if as_json {
        print_json(&serde_json::to_value(&outcomes)?)?;
    }
    Ok(outcomes.iter().all(|o| o.passed))
}

fn real_main() -> Result<bool> {
    match Cli::parse().command {
        Command::Run {
            config,
            overrides,
            output,
            output_root,
        } => cmd_run(&config, &overrides, output, output_root)?,
        Command::Graphs { source, n_agents } => {
            let mut cfg = source.load()?;
            if let Some(n) = n_agents {
                set_agents(&mut cfg, n);
                cfg.validate()?;
            }
            cmd_graphs(&cfg)?
        }
        Command::Bounds {
            inputs,
            mode,
            source,
            n_agents,
            agent,
            epsilon,
            constant,
        } => match inputs {
            Some(path) => cmd_bounds_from_inputs(&path, &mode)?,
            None => {
                let mut cfg = source.load()?;
                if let Some(n) = n_agents {
                    set_agents(&mut cfg, n);
                    cfg.validate()?;
                }
                cmd_bounds_from_model(&cfg, agent, epsilon, constant)?
            }
        },
        Command::Verify {
            seed,
            skip_replication,
            skip_timing,
            json,
        } => return cmd_verify(seed, skip_replication, skip_timing, json),
        Command::Bench {
            source,
            overrides,
            sizes,
            max_full_n,
            timed_iterations,
            output,
            output_root,
        } => {
            let mut cfg = source.load()?;
            overrides.apply(&mut cfg)?;
            let settings = BenchSettings {
                n_agents: sizes,
                architectures: cfg.architectures.clone(),
                max_full_n,
                timed_iterations,
            };
            let rows = timing_benchmark(&cfg, &settings)?;
            if output.is_some() || output_root.is_some() {
                let dir = resolve_output(output, output_root, Path::new("bench"));
                std::fs::create_dir_all(&dir)?;
                write_timing_csv(&rows, std::fs::File::create(dir.join("timing.csv"))?)?;
            }
            print_json(&timing_json(&rows))?
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
