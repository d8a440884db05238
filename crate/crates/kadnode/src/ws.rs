//! WebSocket gateway: browsers attach at `ws://<host>/ws` and exchange
//! signaling frames with the node's gateway.

use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::TryRecvError;
use std::thread;
use std::time::Duration;

use tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tungstenite::http::StatusCode;
use tungstenite::{Error, Message, WebSocket};

use kadrtc::runtime::NodeHandle;
use kadrtc::signaling::{ErrorCode, ServerFrame};

pub const PATH: &str = "/ws";

const POLL: Duration = Duration::from_millis(50);

/// Accepts WebSocket connections until the listener fails.
pub fn serve(listener: TcpListener, node: NodeHandle) {
    for stream in listener.incoming() {
        let Ok(stream) = stream else { continue };
        let node = node.clone();
        thread::spawn(move || {
            if let Err(e) = connection(stream, &node) {
                tracing::debug!(error = %e, "websocket ended");
            }
        });
    }
}

// The callback shape is fixed by tungstenite.
#[allow(clippy::result_large_err)]
fn check_path(req: &Request, resp: Response) -> Result<Response, ErrorResponse> {
    if req.uri().path() == PATH {
        return Ok(resp);
    }
    let mut err = ErrorResponse::new(Some(format!("no endpoint at {}", req.uri().path())));
    *err.status_mut() = StatusCode::NOT_FOUND;
    Err(err)
}

fn connection(stream: TcpStream, node: &NodeHandle) -> anyhow::Result<()> {
    let mut ws = tungstenite::accept_hdr(stream, check_path)?;
    ws.get_ref().set_read_timeout(Some(POLL))?;
    let (client, frames) = node.attach_client()?;
    tracing::debug!(?client, "client attached");
    let result = pump(&mut ws, node, client, &frames);
    node.detach_client(client);
    result
}

fn pump(
    ws: &mut WebSocket<TcpStream>,
    node: &NodeHandle,
    client: kadrtc::signaling::ClientId,
    frames: &std::sync::mpsc::Receiver<ServerFrame>,
) -> anyhow::Result<()> {
    loop {
        match ws.read() {
            Ok(Message::Text(text)) => node.client_text(client, text.to_string())?,
            Ok(Message::Binary(_)) => {
                let f = ServerFrame::error(ErrorCode::BadRequest, "binary frames are not accepted");
                ws.send(Message::text(f.to_json()))?;
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(Error::ConnectionClosed | Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.into()),
        }
        loop {
            match frames.try_recv() {
                Ok(f) => ws.write(Message::text(f.to_json()))?,
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    ws.close(None)?;
                    return Ok(());
                }
            }
        }
        match ws.flush() {
            Ok(()) => {}
            Err(Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => return Err(e.into()),
        }
    }
}
