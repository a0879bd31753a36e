pub mod baseline;
pub mod cloud;
pub mod controller;
pub mod error;
pub mod experiment;
pub mod ffsipp;
pub mod landscape;
pub mod scenario;
pub mod sim;
pub mod strategy;
pub mod worstcase;

pub use error::{CoreError, CoreResult};
