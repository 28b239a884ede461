#![allow(dead_code)]

pub mod metric_oracles;
pub mod geometry_oracles;
pub mod alignment_fixtures;
