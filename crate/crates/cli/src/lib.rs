//! File formats and the `exact-tfce` command line.
//!
//! * [`nifti`]: single-file NIfTI-1 reading and writing.
//! * [`permutations`]: plain-text sign-flip matrices.
//! * [`config`]: run configuration and the reproducibility manifest.
//! * [`commands`]: the subcommands, callable without going through argv.

pub mod cli;
pub mod commands;
pub mod config;
pub mod load;
pub mod nifti;
pub mod permutations;

use tfce_core::Error as CoreError;

fn category(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Structure(_) => "structure",
                CoreError::NonFinite { .. } => "non-finite",
                CoreError::Parameter(_) => "parameter",
                CoreError::Budget(_) => "budget",
            };
        }
        if let Some(e) = cause.downcast_ref::<nifti::NiftiError>() {
            return match e {
                nifti::NiftiError::Io { .. } => "io",
                nifti::NiftiError::Format { .. } => "format",
            };
        }
        if cause.is::<permutations::PermutationFileError>() {
            return "format";
        }
        if cause.is::<config::ConfigError>() {
            return "config";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "runtime"
}

/// `error[category]: message` followed by one `  caused by: ...` line per source.
pub fn format_error(err: &anyhow::Error) -> String {
    let mut out = format!("error[{}]: {err}", category(err));
    for cause in err.chain().skip(1) {
        out.push_str(&format!("\n  caused by: {cause}"));
    }
    out
}
