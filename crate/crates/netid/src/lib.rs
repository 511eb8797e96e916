pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod inverse;
pub mod io;
pub mod linalg;
pub mod matching;
pub mod recovery;
pub mod subspace;

pub use error::{Error, Result};
