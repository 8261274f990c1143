//! Lease-based coherence: scopes and conflicts, plus the manager side of
//! the protocol (acquire, revoke, migrate) running inside [`World`].
//!
//! [`World`]: crate::world::World

pub mod lease;
pub mod manager;

pub use lease::{
    conflicts, overlapping, req_conflicts, required, Lease, LeaseKind, LeaseReq, LeaseTable, Scope,
};
