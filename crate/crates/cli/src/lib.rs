//! Command-line driver: simulation, training, baselines, evaluation and
//! diagnostics with file-based interchange.

pub mod commands;
pub mod config;
pub mod io;
pub mod models;

use neuropmd::Error;

/// Process exit status for a failed command: 3 for numerical failures,
/// 2 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) => 3,
        Error::Config(_) | Error::Input(_) | Error::Io(_) | Error::Json(_) => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_failures_exit_with_three() {
        assert_eq!(exit_code(&Error::Numerical("nan".into())), 3);
        assert_eq!(exit_code(&Error::Config("bad".into())), 2);
        assert_eq!(exit_code(&Error::Input("bad".into())), 2);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("gone"))), 2);
    }
}
