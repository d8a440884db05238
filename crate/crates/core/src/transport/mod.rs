//! Datagram transports.
//!
//! Nodes never touch a transport directly: they queue outgoing datagrams and
//! a driver hands them to whichever [`Transport`] it owns. [`SimNetwork`] is
//! a seeded in-memory network over virtual time; [`UdpTransport`] wraps a
//! real socket.

mod sim;
mod udp;

use std::net::SocketAddr;

use thiserror::Error;

pub use sim::{Delivery, SimConfigError, SimNetwork, SimNetworkConfig, TraceRecord};
pub use udp::UdpTransport;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("datagram of {0} bytes exceeds the 64 KiB limit")]
    Oversize(usize),
    #[error("endpoint {0} is not bound to this transport")]
    NotBound(SocketAddr),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Best-effort, unordered, unreliable datagram delivery.
pub trait Transport {
    fn send(&mut self, from: SocketAddr, to: SocketAddr, datagram: &[u8]) -> Result<(), TransportError>;
}
