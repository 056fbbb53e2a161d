//! Resource server: path-authorized object storage.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use capvc::ressvc::{self, ResourceFileConfig};
use capvc_cli::{finish, init_logging, Failure};
use clap::Parser;

#[derive(Parser)]
#[command(version, about = "Serve one resource server")]
struct Args {
    /// Resource server config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Address to bind, HOST:PORT.
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
}

#[tokio::main]
async fn main() -> ExitCode {
    init_logging();
    let args = Args::parse();
    finish(run(args).await, false)
}

async fn run(args: Args) -> Result<(), Failure> {
    let server = ResourceFileConfig::load(&args.config)
        .map_err(Failure::error)?
        .build()
        .map_err(Failure::error)?;
    let listener = tokio::net::TcpListener::bind(args.listen)
        .await
        .map_err(Failure::error)?;
    let bound = listener.local_addr().map_err(Failure::error)?;
    println!("resource server listening on http://{bound}");
    ressvc::http::serve(Arc::new(server), listener)
        .await
        .map_err(Failure::error)
}
