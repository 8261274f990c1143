//! LibFS: the per-process file system library.

pub mod cache;
pub mod libfs;
pub mod plan;

pub use cache::ReadCache;
pub use libfs::{LibFs, Provenance};
pub use plan::{op_paths, plan, walk_inodes, Plan};
