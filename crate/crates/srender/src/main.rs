use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::init();
    ExitCode::from(srender::cli::dispatch(std::env::args()).clamp(0, 255) as u8)
}
