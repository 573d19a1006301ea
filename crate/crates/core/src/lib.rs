pub mod cli;
pub mod error;
pub mod oracle;
pub mod relaxation;
pub mod ridge;
pub mod sampler;
pub mod symfun;
pub mod util;

pub use error::{DesignError, Result};
