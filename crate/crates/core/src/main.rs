use std::process::ExitCode;

fn main() -> ExitCode {
    match dastkit::cli::run(std::env::args().skip(1).collect(), std::env::vars()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dastkit: {e}");
            ExitCode::FAILURE
        }
    }
}
