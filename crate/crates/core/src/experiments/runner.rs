//! Architecture sweeps, timing runs, and their CSV artifacts.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::malspi::{run_malspi, Architecture, Flag, IterationRecord};

/// One point of a learning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub architecture: Architecture,
    pub seed: u64,
    pub iteration: usize,
    pub eval_cost: f64,
}

/// Per-iteration learning time of one architecture at one network size.
/// `None` marks a skipped configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub architecture: Architecture,
    pub n_agents: usize,
    pub mean_ms: Option<f64>,
    pub median_ms: Option<f64>,
    pub iterations_timed: usize,
    /// Agent updates skipped because a regression failed.
    pub skipped_updates: usize,
    pub ratio_to_indirect: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub curves: Vec<CurveRow>,
    pub timing: Vec<TimingRow>,
}

impl ResultTable {
    /// Mean evaluation cost over seeds at `iteration`.
    pub fn mean_cost(&self, arch: Architecture, iteration: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .curves
            .iter()
            .filter(|r| r.architecture == arch && r.iteration == iteration)
            .map(|r| r.eval_cost)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    pub fn cost(&self, arch: Architecture, seed: u64, iteration: usize) -> Option<f64> {
        self.curves
            .iter()
            .find(|r| r.architecture == arch && r.seed == seed && r.iteration == iteration)
            .map(|r| r.eval_cost)
    }

    pub fn final_iteration(&self) -> usize {
        self.curves.iter().map(|r| r.iteration).max().unwrap_or(0)
    }

    pub fn write_curves_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["architecture", "seed", "iteration", "eval_cost"])?;
        for r in &self.curves {
            w.write_record([
                r.architecture.name().to_string(),
                r.seed.to_string(),
                r.iteration.to_string(),
                r.eval_cost.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_curves_csv<R: Read>(input: R) -> Result<Vec<CurveRow>> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            rows.push(CurveRow {
                architecture: rec[0].parse()?,
                seed: parse_field(&rec[1], "seed")?,
                iteration: parse_field(&rec[2], "iteration")?,
                eval_cost: parse_field(&rec[3], "eval_cost")?,
            });
        }
        Ok(rows)
    }

    pub fn write_timing_csv<W: Write>(&self, out: W) -> Result<()> {
        write_timing_csv(&self.timing, out)
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Csv(format!("cannot parse {what} from `{s}`")))
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_field(s, what).map(Some)
    }
}

pub fn write_timing_csv<W: Write>(rows: &[TimingRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "architecture",
        "n_agents",
        "mean_ms_per_iteration",
        "median_ms_per_iteration",
        "iterations_timed",
        "skipped_updates",
        "ratio_to_indirect",
    ])?;
    for r in rows {
        w.write_record([
            r.architecture.name().to_string(),
            r.n_agents.to_string(),
            opt_field(r.mean_ms),
            opt_field(r.median_ms),
            r.iterations_timed.to_string(),
            r.skipped_updates.to_string(),
            opt_field(r.ratio_to_indirect),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_timing_csv<R: Read>(input: R) -> Result<Vec<TimingRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(TimingRow {
            architecture: rec[0].parse()?,
            n_agents: parse_field(&rec[1], "n_agents")?,
            mean_ms: parse_opt(&rec[2], "mean")?,
            median_ms: parse_opt(&rec[3], "median")?,
            iterations_timed: parse_field(&rec[4], "iterations_timed")?,
            skipped_updates: parse_field(&rec[5], "skipped_updates")?,
            ratio_to_indirect: parse_opt(&rec[6], "ratio")?,
        });
    }
    Ok(rows)
}

/// One row of a per-run CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub iteration: usize,
    /// 1-based.
    pub agent: usize,
    pub eval_cost: f64,
    pub q_err: Option<f64>,
    pub wall_ms_eval: f64,
    pub wall_ms_update: f64,
    pub flags: Vec<Flag>,
}

/// Flattens iteration records to one row per (iteration, agent). Iteration
/// 0 rows carry the `K_0` cost and zero timings.
pub fn run_rows(records: &[IterationRecord], n_agents: usize) -> Vec<RunRow> {
    let mut rows = Vec::new();
    for rec in records {
        if rec.agents.is_empty() {
            rows.extend((1..=n_agents).map(|agent| RunRow {
                iteration: rec.iteration,
                agent,
                eval_cost: rec.eval.cost,
                q_err: None,
                wall_ms_eval: 0.0,
                wall_ms_update: 0.0,
                flags: Vec::new(),
            }));
        } else {
            rows.extend(rec.agents.iter().map(|a| RunRow {
                iteration: rec.iteration,
                agent: a.agent + 1,
                eval_cost: rec.eval.cost,
                q_err: a.q_error,
                wall_ms_eval: a.wall_ms_eval,
                wall_ms_update: a.wall_ms_update,
                flags: a.flags.clone(),
            }));
        }
    }
    rows
}

pub fn write_run_csv<W: Write>(rows: &[RunRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "iteration",
        "agent",
        "eval_cost",
        "q_err_if_oracle_known",
        "wall_ms_eval",
        "wall_ms_update",
        "flags",
    ])?;
    for r in rows {
        let flags: Vec<String> = r.flags.iter().map(|f| f.to_string()).collect();
        w.write_record([
            r.iteration.to_string(),
            r.agent.to_string(),
            r.eval_cost.to_string(),
            opt_field(r.q_err),
            r.wall_ms_eval.to_string(),
            r.wall_ms_update.to_string(),
            flags.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_run_csv<R: Read>(input: R) -> Result<Vec<RunRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let flags = if rec[6].is_empty() {
            Vec::new()
        } else {
            rec[6].split(';').map(str::parse).collect::<Result<_>>()?
        };
        rows.push(RunRow {
            iteration: parse_field(&rec[0], "iteration")?,
            agent: parse_field(&rec[1], "agent")?,
            eval_cost: parse_field(&rec[2], "eval_cost")?,
            q_err: parse_opt(&rec[3], "q_err")?,
            wall_ms_eval: parse_field(&rec[4], "wall_ms_eval")?,
            wall_ms_update: parse_field(&rec[5], "wall_ms_update")?,
            flags,
        });
    }
    Ok(rows)
}

/// All records of a sweep, keyed by architecture and seed.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub table: ResultTable,
    pub runs: Vec<(Architecture, u64, Vec<IterationRecord>)>,
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Timing summary from runs, excluding the first (warm-up) update.
pub fn timing_from_runs(
    arch: Architecture,
    n_agents: usize,
    runs: &[&[IterationRecord]],
) -> TimingRow {
    let mut times = Vec::new();
    let mut skipped = 0;
    for recs in runs {
        for r in recs.iter().filter(|r| r.iteration >= 2) {
            times.push(r.wall_ms_learning);
            skipped += r.agents.iter().filter(|a| !a.updated).count();
        }
    }
    let mean = if times.is_empty() {
        None
    } else {
        Some(times.iter().sum::<f64>() / times.len() as f64)
    };
    TimingRow {
        architecture: arch,
        n_agents,
        mean_ms: mean,
        median_ms: median(&mut times.clone()),
        iterations_timed: times.len(),
        skipped_updates: skipped,
        ratio_to_indirect: None,
    }
}

fn fill_ratios(rows: &mut [TimingRow]) {
    let base: Vec<(usize, Option<f64>)> = rows
        .iter()
        .filter(|r| r.architecture == Architecture::Indirect)
        .map(|r| (r.n_agents, r.mean_ms))
        .collect();
    for r in rows.iter_mut() {
        let ind = base.iter().find(|(n, _)| *n == r.n_agents).and_then(|(_, m)| *m);
        r.ratio_to_indirect = match (r.mean_ms, ind) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        };
    }
}

/// Runs every (architecture, seed) pair of the config. When `output` is
/// given, writes `runs/<arch>_seed<seed>.csv`, `learning_curve.csv`,
/// `timing.csv` and a canonical `config.json` below it.
pub fn run_experiment(config: &ExperimentConfig, output: Option<&Path>) -> Result<ExperimentOutcome> {
    config.validate()?;
    let system = config.system()?;
    let mut table = ResultTable::default();
    let mut runs = Vec::new();
    for &arch in &config.architectures {
        for &seed in &config.seeds {
            let records = run_malspi(&system, arch, &config.malspi_config(seed)?).map_err(|e| match e {
                Error::Unstable { rho } => Error::Config(format!(
                    "the initial policy does not stabilize the system (spectral radius {rho:.4}); \
                     adjust the dynamics or supply a stabilizing gain"
                )),
                other => other,
            })?;
            table.curves.extend(records.iter().map(|r| CurveRow {
                architecture: arch,
                seed,
                iteration: r.iteration,
                eval_cost: r.eval.cost,
            }));
            runs.push((arch, seed, records));
        }
    }
    for &arch in &config.architectures {
        let per: Vec<&[IterationRecord]> = runs
            .iter()
            .filter(|(a, _, _)| *a == arch)
            .map(|(_, _, r)| r.as_slice())
            .collect();
        table.timing.push(timing_from_runs(arch, config.n_agents, &per));
    }
    fill_ratios(&mut table.timing);

    if let Some(dir) = output {
        let run_dir = dir.join("runs");
        fs::create_dir_all(&run_dir)?;
        for (arch, seed, records) in &runs {
            let file = fs::File::create(run_dir.join(format!("{arch}_seed{seed}.csv")))?;
            write_run_csv(&run_rows(records, config.n_agents), file)?;
        }
        table.write_curves_csv(fs::File::create(dir.join("learning_curve.csv"))?)?;
        table.write_timing_csv(fs::File::create(dir.join("timing.csv"))?)?;
        fs::write(dir.join("config.json"), config.to_json()?)?;
    }
    Ok(ExperimentOutcome { table, runs })
}

/// Re-reads the artifacts written by [`run_experiment`].
pub fn load_result_table(dir: &Path) -> Result<ResultTable> {
    Ok(ResultTable {
        curves: ResultTable::read_curves_csv(fs::File::open(dir.join("learning_curve.csv"))?)?,
        timing: read_timing_csv(fs::File::open(dir.join("timing.csv"))?)?,
    })
}

/// Settings for [`timing_benchmark`].
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    pub n_agents: Vec<usize>,
    pub architectures: Vec<Architecture>,
    /// Full-dimensional architectures are skipped above this size.
    pub max_full_n: usize,
    /// Timed updates per configuration, after one warm-up update.
    pub timed_iterations: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            n_agents: vec![8, 20, 40],
            architectures: Architecture::ALL.to_vec(),
            max_full_n: 20,
            timed_iterations: 2,
        }
    }
}

/// Per-iteration learning time for each (architecture, N), using the first
/// seed of `base` with `n_agents` replaced.
pub fn timing_benchmark(base: &ExperimentConfig, settings: &BenchSettings) -> Result<Vec<TimingRow>> {
    let mut rows = Vec::new();
    for &n in &settings.n_agents {
        let mut cfg = base.clone();
        cfg.n_agents = n;
        cfg.iterations = settings.timed_iterations + 1;
        cfg.q_oracle = false;
        cfg.x0 = None;
        cfg.sigma0 = None;
        cfg.validate()?;
        let system = cfg.system()?;
        let seed = cfg.seeds[0];
        for &arch in &settings.architectures {
            if arch.is_full_dimensional() && n > settings.max_full_n {
                rows.push(TimingRow {
                    architecture: arch,
                    n_agents: n,
                    mean_ms: None,
                    median_ms: None,
                    iterations_timed: 0,
                    skipped_updates: 0,
                    ratio_to_indirect: None,
                });
                continue;
            }
            let records = run_malspi(&system, arch, &cfg.malspi_config(seed)?)?;
            rows.push(timing_from_runs(arch, n, &[records.as_slice()]));
        }
    }
    fill_ratios(&mut rows);
    Ok(rows)
}
