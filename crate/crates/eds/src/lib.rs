//! Annotation HTTP service and command-line front end for [`eds_core`].

pub mod cli;
pub mod server;
