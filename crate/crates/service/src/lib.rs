//! HTTP chat service and command-line shell around the self-feeding chatbot.

pub mod app;
pub mod config;

use thiserror::Error;

pub use app::{default_retrainer, router, AppState, Retrainer};
pub use config::{ConfigFile, ServiceConfig, ServiceFlags, TrainFlags, TrainSettings};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Agent(#[from] selffeed::agent::AgentError),
    #[error(transparent)]
    Data(#[from] selffeed::data::DataError),
    #[error(transparent)]
    Pool(#[from] selffeed::data::PoolError),
    #[error(transparent)]
    Store(#[from] selffeed::data::StoreError),
    #[error(transparent)]
    Controller(#[from] selffeed::selffeed::ControllerError),
    #[error(transparent)]
    Train(#[from] selffeed::train::TrainError),
    #[error(transparent)]
    Eval(#[from] selffeed::eval::EvalError),
    #[error(transparent)]
    Sim(#[from] selffeed::sim::SimError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
