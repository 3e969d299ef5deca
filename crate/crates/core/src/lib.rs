pub mod boundary;
pub mod error;
pub mod finite_volume;
pub mod linalg;
pub mod model;
pub mod numerics;
pub mod observables;
pub mod phase;
pub mod tree;
