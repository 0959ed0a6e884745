use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use ssgov_core::clock::SystemClock;
use ssgov_endpoint::config::DEFAULT_LISTEN;
use ssgov_endpoint::demo::{self, Scenario};
use ssgov_endpoint::{http, Config, Service};

#[derive(Parser)]
#[command(name = "ssgov-server", version, about = "Self-service governance endpoint")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve the endpoint described by a config file.
    Serve {
        #[arg(long, env = "SSGOV_CONFIG", default_value = "ssgov.toml")]
        config: PathBuf,
    },
    /// Create a demo deployment from the bundled fixtures.
    DemoInit {
        #[arg(long, value_enum)]
        scenario: Scenario,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = DEFAULT_LISTEN)]
        listen: SocketAddr,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ssgov-server: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Cmd::DemoInit { scenario, dir, listen } => {
            let demo = demo::init(&dir, scenario, listen)?;
            println!("config:     {}", demo.config_path.display());
            println!("identities: {}", demo.identities.display());
            println!("public keys: {}", demo.config.key_dir.display());
            Ok(())
        }
        Cmd::Serve { config } => {
            let config = Config::load(&config)?;
            let listen = config.listen;
            let service = Arc::new(Service::open(config, Arc::new(SystemClock))?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(listen).await?;
                tracing::info!(addr = %listener.local_addr()?, "listening");
                http::spawn_scheduler(service.clone());
                http::serve(listener, service, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
            })?;
            Ok(())
        }
    }
}
