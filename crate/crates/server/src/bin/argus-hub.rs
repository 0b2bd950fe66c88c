use std::process::ExitCode;

fn main() -> ExitCode {
    match argus_server::cli::run_hub(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("argus-hub: {e}");
            ExitCode::FAILURE
        }
    }
}
