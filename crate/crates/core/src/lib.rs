pub mod cli;
pub mod error;
pub mod extensions;
pub mod ideals;
pub mod kreinformula;
pub mod models;
pub mod moperator;
pub mod numlin;

pub use error::{Error, Result};
