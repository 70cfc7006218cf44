use std::process::ExitCode;

fn main() -> ExitCode {
    slickwater::cli::run()
}
