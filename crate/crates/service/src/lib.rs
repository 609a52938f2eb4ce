//! Annotation backend: sessions, label intake, agreement and round control
//! over an append-only event log, exposed as a JSON API.

pub mod config;
pub mod error;
pub mod http;
pub mod service;

pub use config::{Principal, Role, ServiceConfig, Tokens};
pub use error::{ErrorKind, ServiceError};
pub use service::{
    system_clock, Clock, CloseSummary, Context, Event, LabelSubmission, NextDocument, OpenRoundRequest, RoundStatus,
    Service, ServiceState, Session,
};
