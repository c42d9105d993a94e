pub mod datasim;
pub mod error;
pub mod flows;
pub mod harness;
pub mod latentnmt;
pub mod numcore;
pub mod objective;

pub use error::{Error, Result};
