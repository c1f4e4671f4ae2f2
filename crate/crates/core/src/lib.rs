pub mod error;
pub mod exec;
pub mod instances;
pub mod linalg;
pub mod operators;

pub use error::{Error, Result};
pub mod bench;
pub mod blocks;
pub mod dnnsdp;
pub mod multiblock;
pub mod solver;
