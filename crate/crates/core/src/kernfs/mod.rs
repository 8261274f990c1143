//! The per-node KernFS daemon: shared area, digest service, lease
//! management state and the KernFS log.

pub mod journal;
pub mod node;
pub mod shared;
pub mod state;

pub use node::{KernFs, KfsRec};
pub use shared::{AreaLayout, InodeCopy, Level, Role, SharedArea};
pub use state::{Delta, InodeAttr, Layered, View};
