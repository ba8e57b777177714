//! Read-only HTTP/JSON surface over simulator snapshots.

pub mod server;
pub mod snapshot;

pub use server::{router, serve};
pub use snapshot::{BalanceView, Snapshot, SnapshotCell, StateView, TicketsView, ValidatorView};
