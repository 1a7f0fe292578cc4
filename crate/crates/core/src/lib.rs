pub mod bounds;
pub mod conjecture;
pub mod csvfmt;
pub mod error;
pub mod experiments;
pub mod filter;
pub mod netsys;
pub mod online;
pub mod pomdp;
pub mod quantize;

pub use error::{MobalError, Result};
pub use pomdp::{Belief, PomdpModel};
