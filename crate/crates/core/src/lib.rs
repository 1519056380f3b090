//! Microgrid dispatch: AC power flow, QC relaxation, unit-commitment dynamics,
//! periodic references and closed-loop NMPC.

pub mod acpf;
pub mod config;
pub mod dispatch;
pub mod error;
pub mod grid;
pub mod io;
pub mod nmpc;
pub mod qc;
pub mod scenario;
