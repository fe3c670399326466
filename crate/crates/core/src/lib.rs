//! Continual-learning text-to-SQL.
//!
//! Each knowledge base keeps two notebooks: solved questions with the SQL
//! and the reasoning behind it, and mistakes with a tip on how to avoid
//! them. For every question a branch retrieves demonstrations from both
//! notebooks at a fixed correct rate, asks a model for SQL, repairs it once
//! if it fails to execute, and then files the outcome back into its
//! notebooks. Several branches at different rates vote on the execution
//! results.
//!
//! Entry points:
//! - [`notebook::KnowledgeBase`] and [`notebook::select_demonstrations`]
//! - [`pipeline::answer`] and [`pipeline::rethink_update`] for one branch
//! - [`consistency::run`] for the voting loop
//! - [`bench::evaluate`] for scored runs over a BIRD-style dataset

pub mod bench;
pub mod consistency;
pub mod demo;
pub mod embedding;
pub mod llm;
pub mod notebook;
pub mod pipeline;
pub mod sql;
