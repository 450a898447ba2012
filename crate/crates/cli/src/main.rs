use std::process::ExitCode;

fn main() -> ExitCode {
    if let Err(f) = nldpc_cli::configure_threads() {
        eprintln!("error: {}", f.message);
        return ExitCode::from(f.code as u8);
    }
    ExitCode::from(nldpc_cli::run_from_args(std::env::args_os()) as u8)
}
