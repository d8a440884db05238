//! Node settings from a flat TOML file, with command-line flags on top.

use std::net::SocketAddr;
use std::path::Path;

use anyhow::{bail, Context};
use serde::Deserialize;

use kadrtc::id::NodeId;
use kadrtc::node::NodeConfig;

pub const DEFAULT_CONTROL: &str = "127.0.0.1:7401";

/// Every key is optional; unknown keys are an error.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub listen: Option<SocketAddr>,
    pub bootstrap: Option<SocketAddr>,
    pub id: Option<String>,
    pub k: Option<usize>,
    pub alpha: Option<usize>,
    pub ws_listen: Option<SocketAddr>,
    pub control: Option<SocketAddr>,
}

impl FileConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Fields set in `flags` win over fields set here.
    pub fn overlay(self, flags: FileConfig) -> FileConfig {
        FileConfig {
            listen: flags.listen.or(self.listen),
            bootstrap: flags.bootstrap.or(self.bootstrap),
            id: flags.id.or(self.id),
            k: flags.k.or(self.k),
            alpha: flags.alpha.or(self.alpha),
            ws_listen: flags.ws_listen.or(self.ws_listen),
            control: flags.control.or(self.control),
        }
    }
}

/// Fully resolved settings for `kadnode run`.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub listen: SocketAddr,
    pub bootstrap: Option<SocketAddr>,
    pub id: Option<NodeId>,
    pub node: NodeConfig,
    pub ws_listen: Option<SocketAddr>,
    pub control: SocketAddr,
}

impl Settings {
    pub fn resolve(merged: FileConfig) -> anyhow::Result<Settings> {
        let Some(listen) = merged.listen else {
            bail!("--listen is required (flag or `listen` in the config file)");
        };
        let id = merged
            .id
            .as_deref()
            .map(|s| s.parse::<NodeId>().with_context(|| format!("bad --id {s:?}")))
            .transpose()?;
        let mut node = NodeConfig::real();
        if let Some(k) = merged.k {
            node.k = k;
        }
        if let Some(alpha) = merged.alpha {
            node.alpha = alpha;
        }
        node.validate()?;
        Ok(Settings {
            listen,
            bootstrap: merged.bootstrap,
            id,
            node,
            ws_listen: merged.ws_listen,
            control: merged
                .control
                .unwrap_or_else(|| DEFAULT_CONTROL.parse().expect("valid literal")),
        })
    }
}
