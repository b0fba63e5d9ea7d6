use std::process::ExitCode;

fn main() -> ExitCode {
    targen_cli::main_from(std::env::args_os())
}
