pub mod chart;
pub mod cli;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod synthgen;
pub mod treebank;
