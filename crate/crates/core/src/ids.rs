//! Identifier newtypes shared by every actor in the simulation.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($name:ident, $inner:ty, $prefix:literal) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(NodeId, u32, "n");
id_type!(ProcId, u32, "p");
id_type!(RegionId, u32, "r");
id_type!(Ino, u64, "i");
id_type!(LeaseId, u64, "L");

/// Log sequence number. Zero means "nothing".
pub type Seq = u64;

pub const ROOT_INO: Ino = Ino(1);

impl Ino {
    /// Inode numbers handed out by a process are namespaced by its pid so
    /// that no coordination is needed to allocate them.
    pub fn for_process(pid: ProcId, counter: u32) -> Ino {
        Ino(((pid.0 as u64) << 32) | counter as u64)
    }
}
