use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(rmc::app::run(std::env::args_os()))
}
