use std::process::ExitCode;

fn main() -> ExitCode {
    relab::cli::main_with_args(std::env::args_os())
}
