//! Noisy twenty-questions estimation over measurement-dependent channels.
//!
//! Channel models, information-density calculus, second-order resolution
//! approximations, finite-length bounds and Monte Carlo simulators for
//! non-adaptive and adaptive query procedures.

pub mod adaptive;
pub mod asymptotics;
pub mod bounds;
pub mod channel;
pub mod error;
pub mod info;
pub mod multitarget;
pub mod nonadaptive;
pub mod normal;
pub mod optimize;
pub mod recipes;
pub mod search;
pub mod stats;
pub mod sumdist;

pub use channel::{ChannelFamily, ChannelMatrix};
pub use error::{Error, Result};
pub use info::{density_table, stats, InfoDensityTable, InfoStats};
pub use normal::{gaussian_cdf, gaussian_quantile};
pub use sumdist::{berry_esseen_gap, sum_distribution, SumDistribution};
