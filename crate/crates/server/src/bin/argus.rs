use std::process::ExitCode;

fn main() -> ExitCode {
    match argus_server::cli::run_argus(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("argus: {e}");
            ExitCode::FAILURE
        }
    }
}
