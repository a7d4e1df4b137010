//! User simulator over a synthetic domain, and the experiments built on it.

pub mod deploy;
pub mod domain;
pub mod experiment;
pub mod user;

use thiserror::Error;

pub use deploy::{
    collect_ratings, run_deployment, Deployer, Deployment, DeploymentConfig, OracleBot,
};
pub use domain::{Chain, Cursor, DomainConfig, SyntheticDomain};
pub use experiment::*;
pub use user::{
    render_feedback, simulate_user_reply, FeedbackStyle, Reaction, ReactionKind, SimUser,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error("deployment stalled: wanted {wanted} feedback examples, found {found}")]
    Stalled { wanted: usize, found: usize },
    #[error(transparent)]
    Controller(#[from] crate::selffeed::ControllerError),
    #[error(transparent)]
    Train(#[from] crate::train::TrainError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Agent(#[from] crate::agent::AgentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
