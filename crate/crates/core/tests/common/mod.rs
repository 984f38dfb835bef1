//! Helpers shared by the integration test targets. Every reference value
//! here is computed without going through the library's own oracle code.

#![allow(dead_code)]

pub mod reference;
pub mod termination_model;
