use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    let outcome = fundet_cli::run_cli(std::env::args_os());
    // A closed pipe is not worth a panic.
    let _ = std::io::stdout().lock().write_all(outcome.stdout.as_bytes());
    let _ = std::io::stderr().lock().write_all(outcome.stderr.as_bytes());
    ExitCode::from(outcome.code)
}
