pub mod contact_env;
pub mod error;
pub mod filters;
pub mod observers;
pub mod passivity;
pub mod rigid_body;

pub use error::{Error, Result};
pub mod harness;
