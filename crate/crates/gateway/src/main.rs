use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hakf_gateway::cli::{self, EXIT_INVALID, EXIT_IO};
use hakf_gateway::server::{self, AppState};
use hakf_gateway::store::Store;

#[derive(Parser)]
#[command(name = "hakf", version, about = "HAKF complex event processing workbench")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP API and event stream.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "HAKF_DATA_DIR", default_value = "hakf-data")]
        data: PathBuf,
    },
    /// Run a scenario headless and write its detections as JSONL.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the canonical rule fragment of a definition file.
    Compile {
        #[arg(long)]
        definition: PathBuf,
        #[arg(long)]
        palette: Option<PathBuf>,
        #[arg(long)]
        mapping: Option<PathBuf>,
    },
}

fn serve(port: u16, data: PathBuf) -> i32 {
    let state = match AppState::load(Store::new(data)) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_INVALID;
        }
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_IO;
        }
    };
    runtime.block_on(async move {
        let listener = match tokio::net::TcpListener::bind(("0.0.0.0", port)).await {
            Ok(l) => l,
            Err(e) => {
                eprintln!("cannot bind port {port}: {e}");
                return EXIT_IO;
            }
        };
        if let Ok(addr) = listener.local_addr() {
            println!("listening on {addr}");
        }
        match server::serve(listener, state).await {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("{e}");
                EXIT_IO
            }
        }
    })
}

fn main() -> ExitCode {
    let args = Args::parse();
    let code = match args.command {
        Command::Serve { port, data } => serve(port, data),
        Command::Run { scenario, seed, out } => {
            cli::run_headless(&scenario, seed, &out, &mut io::stdout(), &mut io::stderr())
        }
        Command::Compile {
            definition,
            palette,
            mapping,
        } => cli::compile_cli(
            &definition,
            palette.as_deref(),
            mapping.as_deref(),
            &mut io::stdout(),
            &mut io::stderr(),
        ),
    };
    ExitCode::from(code as u8)
}
