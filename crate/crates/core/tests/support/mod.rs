//! Independent oracles shared by the test targets.
#![allow(dead_code)]

pub mod graphs;
pub mod models;
pub mod plain_pg;
pub mod rouge_cases;
