//! Service boundary of the HAKF workbench: file store, per-project
//! mutation queue, HTTP API with a server-sent event stream, and the
//! headless CLI entry points.

pub mod cli;
pub mod project;
pub mod server;
pub mod store;
