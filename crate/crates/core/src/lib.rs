//! Debiased GMM estimation of production functions with automatically
//! estimated orthogonal instruments.

pub mod basis;
pub mod data;
pub mod dgmm;
pub mod error;
pub mod firststage;
pub mod linalg;
pub mod moments;
pub mod montecarlo;
pub mod oriv;
pub mod seeding;
pub mod stats;

pub use error::{Error, Result};
