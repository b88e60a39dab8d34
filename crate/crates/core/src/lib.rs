//! An external-memory priority queue that uses any external sorting
//! algorithm as a black box, running on a simulated block device with exact
//! I/O accounting.
//!
//! The structure keeps the current minimum in internal memory, so
//! [`PriorityQueue::findmin`] never performs I/O. Updates are buffered and
//! pushed through a hierarchy of layers, levels and base sets by flush,
//! push and pull stages.

pub mod io_sim;
pub mod navlist;
pub mod pq;
pub mod record;
pub mod run;
pub mod sorter;

pub use io_sim::{BlockDevice, BlockId, Cause, DeviceConfig, IoError, IoReport};
pub use navlist::{NavError, NavList, Representative};
pub use pq::{PQConfig, PqError, PriorityQueue};
pub use record::{Kind, Record};
pub use run::DiskRun;
pub use sorter::{InMemorySorter, MergeSorter, SortError, SortStats, Sorter};
