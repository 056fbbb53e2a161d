//! Authorization server: token, introspection and status-list endpoints.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use capvc::authsvc::{self, AuthorityFileConfig};
use capvc_cli::{finish, init_logging, Failure};
use clap::Parser;

#[derive(Parser)]
#[command(version, about = "Serve one authorization server")]
struct Args {
    /// Authority config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Address to bind, HOST:PORT.
    #[arg(long, default_value = "127.0.0.1:8081")]
    listen: SocketAddr,
}

#[tokio::main]
async fn main() -> ExitCode {
    init_logging();
    let args = Args::parse();
    finish(run(args).await, false)
}

async fn run(args: Args) -> Result<(), Failure> {
    let authority = AuthorityFileConfig::load(&args.config)
        .and_then(AuthorityFileConfig::build)
        .map_err(Failure::error)?;
    let listener = tokio::net::TcpListener::bind(args.listen)
        .await
        .map_err(Failure::error)?;
    let bound = listener.local_addr().map_err(Failure::error)?;
    println!("{} listening on http://{bound}", authority.url());
    authsvc::http::serve(Arc::new(authority), listener)
        .await
        .map_err(Failure::error)
}
