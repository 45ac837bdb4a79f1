//! Command-line front end and session server.

pub mod args;
pub mod commands;
pub mod context;
pub mod error;
pub mod ops;
pub mod server;

use std::ffi::OsString;
use std::io::Write;
use std::net::IpAddr;

use clap::Parser;

use crate::args::{Cli, Command, ServeArgs};
use crate::context::Context;
use crate::error::{CliError, ErrorBody, EXIT_OK, EXIT_USER};

/// Parses `argv`, runs the subcommand and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Serve(a) => serve(&cli, a),
        _ => commands::dispatch(&cli).map(|out| {
            let mut stdout = std::io::stdout().lock();
            let _ = if cli.json {
                writeln!(stdout, "{}", serde_json::to_string_pretty(&out.value).expect("serializable"))
            } else if out.text.is_empty() {
                Ok(())
            } else {
                writeln!(stdout, "{}", out.text)
            };
        }),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&ErrorBody::from(&e)).expect("serializable"));
            }
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn serve(cli: &Cli, a: &ServeArgs) -> Result<(), CliError> {
    let loopback = a.bind.parse::<IpAddr>().map(|ip| ip.is_loopback()).unwrap_or(a.bind == "localhost");
    if a.token.is_none() && !loopback {
        return Err(CliError::usage("a token (--token or REPLAYROI_TOKEN) is required when binding beyond loopback"));
    }
    let state = if cli.config.exists() {
        server::AppState::live(Context::load(&cli.config, cli.ledger.as_deref())?, a.token.clone())?
    } else if let Some(ledger) = &cli.ledger {
        eprintln!("no config at {}; serving {} read-only", cli.config.display(), ledger.display());
        server::AppState::read_only(ledger.clone(), Default::default())
    } else {
        return Err(CliError::usage(format!("no config at {} and no --ledger to serve", cli.config.display())));
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::io("starting runtime", e))?;
    rt.block_on(async {
        let listener = server::bind(&a.bind, a.port).await?;
        let addr = listener.local_addr().map_err(|e| CliError::io("reading bound address", e))?;
        eprintln!("listening on http://{addr}");
        server::serve(listener, server::router(state, a.assets.clone())).await
    })
}
