//! Embedded product-data-management warehouse.
//!
//! - [`schema`]: typed rows for the 22 organizational and 3 system relations
//! - [`store`]: constraint-checked in-memory catalog with snapshot and journal files
//! - [`etl`]: extract, cleanse, convert, integrate and load, plus reporting views
//! - [`security`]: password digests, sessions and permission checks
//! - [`jobcontrol`]: clock-driven job scheduling with retries and notifications
//! - [`pdl`]: store-and-acknowledge ingest of system inputs and outputs
//! - [`config`]: the operator's TOML file of sources, jobs and settings

pub mod clock;
pub mod config;
pub mod etl;
pub mod events;
pub mod jobcontrol;
pub mod pdl;
pub mod sample;
pub mod schema;
pub mod security;
pub mod store;
