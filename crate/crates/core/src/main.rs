use std::process::ExitCode;

use mindformer::cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MF_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let result = cli::parse(std::env::args_os()).and_then(|parsed| match parsed {
        Some(c) => cli::run(c, &mut std::io::stdout().lock()),
        None => Ok(()),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::from(e.exit_code())
        }
    }
}
