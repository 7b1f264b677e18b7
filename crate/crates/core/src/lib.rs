pub mod adapter;
pub mod autodiff;
pub mod backbone;
pub mod checkpoint;
pub mod error;
pub mod harness;
pub mod head;
pub mod init;
pub mod model;
pub mod montage;
pub mod params;
pub mod signal;

pub use error::{Error, Result};
