//! Visibility-normalized social contagion toolkit.
//!
//! The crate is organised along the data flow of a cascade study:
//!
//! - [`events`]: event-log ingestion, follower graph, per-user exposure series.
//! - [`visibility`]: time-response functions and susceptibility curves.
//! - [`contagion`]: response-probability models and the visibility
//!   distribution of multiple exposures.
//! - [`inference`]: scale/floor fitting and maximum-likelihood social
//!   enhancement.
//! - [`simulate`]: synthetic follower graphs and cascades with known ground
//!   truth, plus the end-to-end recovery experiment.
//! - [`forecast`]: windowed response forecasts and calibration.

pub mod contagion;
pub mod error;
pub mod events;
pub mod forecast;
pub mod inference;
pub mod optim;
pub mod simulate;
pub mod visibility;

pub use error::{Error, Result};

/// Which interface model a dataset or parameter set follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Site {
    /// Every message re-enters the top of the stream; all exposures are visible.
    Twitter,
    /// Items are ordered by first recommendation; later exposures only add a badge.
    Digg,
}

impl std::fmt::Display for Site {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Site::Twitter => f.write_str("twitter"),
            Site::Digg => f.write_str("digg"),
        }
    }
}

impl std::str::FromStr for Site {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "twitter" => Ok(Site::Twitter),
            "digg" => Ok(Site::Digg),
            other => Err(Error::InvalidInput(format!("unknown site `{other}`"))),
        }
    }
}
