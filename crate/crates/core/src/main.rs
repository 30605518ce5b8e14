mod cli;

use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use ctrkit::CtrError;

fn error_json(e: &CtrError) -> serde_json::Value {
    let mut body = json!({ "code": e.code(), "message": e.to_string() });
    if let CtrError::Config(issues) = e {
        body["issues"] = json!(issues);
    }
    json!({ "error": body })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CTRKIT_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let args = cli::args::Cli::parse();
    match cli::run::run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
