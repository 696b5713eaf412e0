use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(bansim_cli::run(std::env::args_os()))
}
