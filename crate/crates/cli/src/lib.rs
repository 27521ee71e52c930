//! Operator surface for the Agora simulator: scenario loading, run and sweep
//! orchestration, report files and the acceptance suite.

pub mod acceptance;
pub mod commands;
pub mod scenario;
