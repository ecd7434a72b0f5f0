//! Library surface of the CLI: file formats and document rendering, shared
//! between the binary and its integration tests.

pub mod format;
