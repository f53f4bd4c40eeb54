pub mod bspline;
pub mod corridor;
pub mod driver;
pub mod error;
pub mod frontend;
pub mod guidance;
pub mod io;
pub mod solvers;
pub mod spatial;
pub mod temporal;
pub mod validator;

pub use error::{Error, Result};
