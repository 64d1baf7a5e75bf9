pub mod decomposition;
pub mod error;
pub mod estimates;
pub mod exact;
pub mod linalg;
pub mod operator;
pub mod pencil;
pub mod problem;
pub mod sketch;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
