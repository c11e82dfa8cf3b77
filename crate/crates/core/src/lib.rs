//! Background-subtracted video transport for connected vehicles: a static
//! background model stands in for everything the receiver already knows,
//! and only what differs from it is coded and sent.

pub mod channel;
pub mod codec;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod pipeline;
pub mod pnm;
pub mod polygon;
pub mod scene;
pub mod seg;
pub mod types;

pub use error::{Error, Result};
