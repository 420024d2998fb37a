//! Scenario files in, logs and summaries out.

pub mod log;
pub mod scenario;

pub use self::log::{
    files, metrics_from_dir, metrics_from_rows, read_log, read_reference, write_run_outputs, LogError, LogFile,
    LogHeader, LogRow, LogWriter, RunSummary,
};
pub use scenario::{parse_override, parse_scenario, LoadedScenario, MapSpec, NoiseSpec, ScenarioError, ScenarioFile};
