pub mod augment;
pub mod checkpoint;
pub mod corpus;
pub mod cpi;
pub mod encoder;
pub mod eval;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod perm;
pub mod pretrain;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
