//! Library side of the `atom` command: the live session server.

pub mod serve;
