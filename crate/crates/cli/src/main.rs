use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HML_LOG", "warn")).init();
    ExitCode::from(hml_cli::run_from(std::env::args_os()))
}
