//! Command-line workflows and the HTTP API for comparative saliency maps.

pub mod backend_spec;
pub mod colormap;
pub mod commands;
pub mod config;
pub mod error;
pub mod overlay;
pub mod request;
pub mod service;
pub mod workspace;
