//! Class activation maps with comparative reference classes, plus the
//! storage formats, model backends, linear heads and metrics around them.

pub mod backend;
pub mod cam;
pub mod eval;
pub mod features;
pub mod fixtures;
pub mod grid;
pub mod head;
pub mod rng;
pub mod tensor_store;
