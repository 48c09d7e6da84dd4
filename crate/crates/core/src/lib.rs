//! Closed-loop block-world planning toolkit.

pub mod adapter;
pub mod assignment;
pub mod collect;
pub mod controller;
pub mod dataset;
pub mod eval;
pub mod layout;
pub mod llm;
pub mod plan;
pub mod planners;
pub mod seeding;
pub mod sim;
pub mod world;
