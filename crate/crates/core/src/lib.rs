pub mod bath;
pub mod error;
pub mod integrator;
pub mod linalg;
pub mod output;
pub mod well;
pub mod single;
pub mod analysis;
pub mod fermi;
pub mod pair;
pub mod cli;
