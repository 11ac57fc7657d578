//! Requirement-driven GUI testing: traces, oracles, actions and simulated apps.

pub mod action;
pub mod gateway;
pub mod metrics;
pub mod oracle;
pub mod page;
pub mod requirement;
pub mod simapp;
pub mod trace;
