//! File formats, training driver, CLI plumbing and the HTTP server around
//! [`cartooner_core`].

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod io;
pub mod server;
pub mod training;
