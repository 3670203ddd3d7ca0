use std::process::ExitCode;

fn main() -> ExitCode {
    let code = contrario_lab::cli::run_command(std::env::args());
    ExitCode::from(u8::try_from(code).unwrap_or(2))
}
