use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::time::Duration;

use super::{Transport, TransportError};
use crate::protocol::MAX_DATAGRAM;

/// A bound UDP socket. One node per socket.
#[derive(Debug)]
pub struct UdpTransport {
    socket: UdpSocket,
    local: SocketAddr,
}

impl UdpTransport {
    pub fn bind(addr: SocketAddr) -> io::Result<Self> {
        let socket = UdpSocket::bind(addr)?;
        let local = socket.local_addr()?;
        Ok(UdpTransport { socket, local })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    pub fn try_clone(&self) -> io::Result<Self> {
        Ok(UdpTransport {
            socket: self.socket.try_clone()?,
            local: self.local,
        })
    }

    /// Blocks for at most `timeout` (forever when `None`) waiting for one
    /// datagram. `Ok(None)` on timeout.
    pub fn recv(&self, buf: &mut [u8], timeout: Option<Duration>) -> io::Result<Option<(usize, SocketAddr)>> {
        self.socket
            .set_read_timeout(timeout.map(|t| t.max(Duration::from_millis(1))))?;
        match self.socket.recv_from(buf) {
            Ok(r) => Ok(Some(r)),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

impl Transport for UdpTransport {
    fn send(&mut self, from: SocketAddr, to: SocketAddr, datagram: &[u8]) -> Result<(), TransportError> {
        if from != self.local {
            return Err(TransportError::NotBound(from));
        }
        if datagram.len() > MAX_DATAGRAM {
            return Err(TransportError::Oversize(datagram.len()));
        }
        // Datagram semantics: network-level failures are silent.
        if let Err(e) = self.socket.send_to(datagram, to) {
            tracing::debug!(%to, error = %e, "udp send failed");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loopback_send_receive() {
        let mut a = UdpTransport::bind("127.0.0.1:0".parse().unwrap()).unwrap();
        let b = UdpTransport::bind("127.0.0.1:0".parse().unwrap()).unwrap();
        a.send(a.local_addr(), b.local_addr(), b"hello").unwrap();
        let mut buf = [0u8; 64];
        let (n, from) = b.recv(&mut buf, Some(Duration::from_secs(2))).unwrap().unwrap();
        assert_eq!(&buf[..n], b"hello");
        assert_eq!(from, a.local_addr());
        assert!(b.recv(&mut buf, Some(Duration::from_millis(20))).unwrap().is_none());
    }

    #[test]
    fn wrong_source_rejected() {
        let mut a = UdpTransport::bind("127.0.0.1:0".parse().unwrap()).unwrap();
        let other: SocketAddr = "127.0.0.1:9".parse().unwrap();
        assert!(matches!(a.send(other, other, b"x"), Err(TransportError::NotBound(_))));
    }
}
