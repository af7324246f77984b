//! Batch front end for the quantum-wire simulations: configuration loading,
//! experiment dispatch and tabular output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod table;

pub use config::{load_config, parse_config, ConfigError, Experiment, RawConfig, RunConfig};
pub use experiments::{run, RunError};
pub use table::{emit, Cell, EmitError, Format, ResultTable};
