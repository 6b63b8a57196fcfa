#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Discrete-event simulator of an integrated classical and quantum cellular
//! network: resources and their noise, topology and links, the access
//! protocol, three applications and closed-form planning models.

pub mod analytic;
pub mod apps;
pub mod engine;
pub mod netmodel;
pub mod protocol;
pub mod qcore;
pub mod scenario;
