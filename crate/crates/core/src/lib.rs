#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
pub mod feeder;
pub mod graph;
pub mod ident;
pub mod identifiability;
pub mod math;
pub mod nodeset;
pub mod probing;
pub mod verify;

pub use error::{Error, Result};
