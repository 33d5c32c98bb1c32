//! On-disk adapter library: one bundle file per task plus a TOML index,
//! and the memory accounting across serving strategies.

mod catalog;
mod format;
mod memory;

pub use catalog::{AdapterLibrary, LibraryEntry};
pub use format::{bundle_load, bundle_save, decode_bundle, encode_bundle, BUNDLE_MAGIC, BUNDLE_VERSION};
pub use memory::{kib, memory_report, MemoryReport, TaskMemory, BYTES_PER_PARAM};
