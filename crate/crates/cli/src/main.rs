use std::process::ExitCode;

use clap::Parser;

use interchange_cli::{error_document, normalize_args, run, summary_text, RunConfig};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let config = match RunConfig::try_parse_from(normalize_args(std::env::args())) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let doc = interchange_cli::ErrorDocument {
                kind: "usage".into(),
                message: e.to_string(),
                exit_code: 1,
                context: Vec::new(),
            };
            println!("{}", serde_json::to_string_pretty(&doc).expect("error document serializes"));
            return ExitCode::from(1);
        }
    };
    match run(&config) {
        Ok(outcome) => {
            if !outcome.summary.is_empty() {
                print!("{}", summary_text(&outcome.summary));
            }
            for f in &outcome.files {
                log::info!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            let doc = error_document(&err);
            eprintln!("error: {err:#}");
            println!("{}", serde_json::to_string_pretty(&doc).expect("error document serializes"));
            ExitCode::from(doc.exit_code as u8)
        }
    }
}
