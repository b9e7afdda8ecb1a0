use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(midar::cli::run_from(std::env::args_os()))
}
