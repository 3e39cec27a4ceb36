//! Command implementations behind the `radfuse` binary.

pub mod commands;
pub mod plot;

use radfuse::error::ErrorCategory;
use radfuse::Error;

pub use commands::{
    cmd_eval, cmd_infer, cmd_plot_pr, cmd_synth, cmd_train, draw_conditions, resolve_config, DetectionSource,
};

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err.category() {
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Numeric => 4,
        ErrorCategory::Io => 5,
    }
}
