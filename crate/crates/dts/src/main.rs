use std::process::ExitCode;

fn main() -> ExitCode {
    dts::cli::run()
}
