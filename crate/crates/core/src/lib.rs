//! Self-feeding retrieval chatbot.

pub mod agent;
pub mod data;
pub mod eval;
pub mod nn;
pub mod selffeed;
pub mod sim;
pub mod text;
pub mod train;
