//! Example networks, experiment configuration, sweeps and artifacts.

mod config;
mod examples;
mod runner;

pub use config::{EdgeLists, ExperimentConfig, GraphSpec};
pub use examples::{
    build_cost_blocks, build_system, generate_example1, generate_example2, AgentDynamics, CostParams,
    DynamicsParams,
};
pub use runner::{
    load_result_table, read_run_csv, read_timing_csv, run_experiment, run_rows, timing_benchmark, timing_from_runs,
    write_run_csv, write_timing_csv, BenchSettings, CurveRow, ExperimentOutcome, ResultTable, RunRow, TimingRow,
};
