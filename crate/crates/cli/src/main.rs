use std::process::ExitCode;

fn main() -> ExitCode {
    masa_cli::main_with(std::env::args_os())
}
