use thiserror::Error;

use crate::domain::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),

    #[error("position {x_m} m is outside the segment [0, {length_m}) m")]
    OutOfRange { x_m: f64, length_m: f64 },

    #[error("scenario has no ordinary vehicles, mean initial speed is undefined")]
    NoOrdinaryVehicles,

    #[error("scenario failed validation: {}", join_violations(.0))]
    Validation(Vec<Violation>),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("ingestion failed: {0}")]
    Ingestion(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
