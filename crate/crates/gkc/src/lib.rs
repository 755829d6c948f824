//! Knowledge cache service.
//!
//! A [`VersionStore`] keeps the newest few published knowledge snapshots and
//! answers batches of `(user, item, category, version)` quadruples with
//! composed serving vectors. [`Server`] and [`Client`] speak a small framed
//! binary protocol over TCP.

mod client;
mod error;
pub mod protocol;
mod server;
mod store;

pub use client::{Client, ServiceKnowledge};
pub use error::{GkcError, Result};
pub use protocol::{EntryStatus, Frame, LookupEntry, LookupResponse, Quadruple};
pub use server::{Server, ServerHandle};
pub use store::{VersionStore, DEFAULT_MAX_VERSIONS, VERSION_LATEST};
