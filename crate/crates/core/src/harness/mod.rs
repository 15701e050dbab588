//! Experiment configuration, orchestration, rate fitting and self-checks.

pub mod config;
pub mod experiment;
pub mod rate;
pub mod selftest;

use crate::error::{Error, Result};
use config::{ExperimentConfig, GraphSpec};

const RING4_GRAPH: &str = include_str!("../../configs/ring4.graph");

/// Configs shipped in `configs/`, by file name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("cycle3_docmc.toml", include_str!("../../configs/cycle3_docmc.toml")),
    ("cycle3_doaoc.toml", include_str!("../../configs/cycle3_doaoc.toml")),
    ("cycle3_dgd.toml", include_str!("../../configs/cycle3_dgd.toml")),
    ("cycle3_docmc_disagree.toml", include_str!("../../configs/cycle3_docmc_disagree.toml")),
    ("ring4_doaoc_linear.toml", include_str!("../../configs/ring4_doaoc_linear.toml")),
    ("logistic5_docmc.toml", include_str!("../../configs/logistic5_docmc.toml")),
];

/// Parse the bundled configs; graph files are replaced by their embedded
/// text.
pub fn bundled_configs() -> Result<Vec<(String, ExperimentConfig)>> {
    BUNDLED
        .iter()
        .map(|(name, text)| {
            let mut cfg = ExperimentConfig::parse(text)?;
            if let GraphSpec::File { path } = &cfg.graph {
                if path.file_name().and_then(|f| f.to_str()) != Some("ring4.graph") {
                    return Err(Error::config("graph.path", format!("no embedded copy of {}", path.display())));
                }
                cfg.graph = GraphSpec::Inline {
                    text: RING4_GRAPH.to_string(),
                };
            }
            Ok((name.to_string(), cfg))
        })
        .collect()
}

/// Process exit status for an error: 2 configuration, 3 numerical,
/// 4 property check.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Io { .. } | Error::Graph(_) | Error::Parameter(_) | Error::Dimension { .. } => 2,
        Error::NonConvergence { .. } | Error::Singular { .. } | Error::Numerical(_) | Error::TraceTooShort { .. } => 3,
        Error::Simulation(_) => 4,
    }
}
