//! Run configuration, experiment presets, CSV / SVG output and the CLI.

pub mod chart;
pub mod cli;
pub mod config;
pub mod presets;
pub mod results;

pub use chart::{emit_chart, render_chart, Series};
pub use cli::run_cli;
pub use config::{parse_config, ConfigFile, ParsedConfig};
pub use presets::{run_preset, run_single, write_report, Preset, PresetReport, Variant, VariantRun};
pub use results::{read_rounds_csv, write_results, RoundRow, Table, ROUNDS_HEADER, WORKERS_HEADER};
