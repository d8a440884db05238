use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use kadnode::config::{FileConfig, Settings, DEFAULT_CONTROL};
use kadnode::control::{self, Request};
use kadnode::ws;
use kadrtc::id::NodeId;
use kadrtc::runtime::NodeRuntime;
use kadrtc::signaling::GatewayConfig;

#[derive(Parser)]
#[command(
    name = "kadnode",
    version,
    about = "Kademlia DHT node with a WebRTC signaling gateway"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a node until interrupted.
    Run(RunArgs),
    /// Store a value under a key string.
    Put {
        key: String,
        value: String,
        /// Lifetime in seconds.
        #[arg(long)]
        ttl: Option<u64>,
        #[arg(long, default_value = DEFAULT_CONTROL)]
        control: SocketAddr,
    },
    /// Look up the values stored under a key string.
    Get {
        key: String,
        #[arg(long, default_value = DEFAULT_CONTROL)]
        control: SocketAddr,
    },
    /// Ping another node by address.
    Ping {
        addr: SocketAddr,
        #[arg(long, default_value = DEFAULT_CONTROL)]
        control: SocketAddr,
    },
    /// Print routing and storage counters of the local node.
    Status {
        #[arg(long, default_value = DEFAULT_CONTROL)]
        control: SocketAddr,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    listen: Option<SocketAddr>,
    #[arg(long)]
    bootstrap: Option<SocketAddr>,
    /// 40 hex digits; random when omitted.
    #[arg(long)]
    id: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<usize>,
    /// Flat TOML file with the same keys as the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Serve the WebSocket gateway at ws://<addr>/ws.
    #[arg(long)]
    ws_listen: Option<SocketAddr>,
    /// Local control socket used by put/get/ping.
    #[arg(long)]
    control: Option<SocketAddr>,
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let flags = FileConfig {
        listen: args.listen,
        bootstrap: args.bootstrap,
        id: args.id,
        k: args.k,
        alpha: args.alpha,
        ws_listen: args.ws_listen,
        control: args.control,
    };
    let settings = Settings::resolve(file.overlay(flags))?;
    let id = settings.id.unwrap_or_else(|| NodeId::random(&mut rand::thread_rng()));

    let control =
        TcpListener::bind(settings.control).with_context(|| format!("binding control {}", settings.control))?;
    let rt = NodeRuntime::start(settings.listen, id, settings.node.clone(), GatewayConfig::default())?;
    let node = rt.handle();
    tracing::info!(id = %node.id().to_hex(), addr = %node.addr(), "node up");
    println!(
        "id {} udp {} control {}",
        node.id().to_hex(),
        node.addr(),
        control.local_addr()?
    );

    if let Some(ws_addr) = settings.ws_listen {
        let listener = TcpListener::bind(ws_addr).with_context(|| format!("binding websocket {ws_addr}"))?;
        println!("ws ws://{}{}", listener.local_addr()?, ws::PATH);
        let node = node.clone();
        std::thread::spawn(move || ws::serve(listener, node));
    }
    if let Some(via) = settings.bootstrap {
        let report = node.join(via)?.with_context(|| format!("joining through {via}"))?;
        tracing::info!(?report, "joined");
        println!("joined via {via}");
    }
    control::serve(control, node);
    rt.shutdown();
    Ok(())
}

fn client(addr: SocketAddr, req: Request) -> anyhow::Result<bool> {
    let reply = control::call(addr, &req).with_context(|| format!("control socket {addr}"))?;
    println!("{}", serde_json::to_string_pretty(&reply)?);
    Ok(reply.get("ok") == Some(&Value::Bool(true)))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let result = match Cli::parse().cmd {
        Cmd::Run(args) => run(args).map(|()| true),
        Cmd::Put {
            key,
            value,
            ttl,
            control,
        } => client(control, Request::Put { key, value, ttl }),
        Cmd::Get { key, control } => client(control, Request::Get { key }),
        Cmd::Ping { addr, control } => client(control, Request::Ping { addr }),
        Cmd::Status { control } => client(control, Request::Status),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("kadnode: {e:#}");
            ExitCode::from(2)
        }
    }
}
