pub mod harness;
pub mod id;
pub mod node;
pub mod protocol;
pub mod routing;
pub mod runtime;
pub mod signaling;
pub mod transport;
