pub mod env;
pub mod error;
pub mod kv;

pub use error::{Error, Result};
pub mod neural;
pub mod trajectory;
pub mod contact;
pub mod controller;
pub mod pixel;
pub mod agent;
pub mod bench;
