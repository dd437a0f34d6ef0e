pub mod acquisition;
pub mod benchmarks;
pub mod gp;
pub mod harness;
pub mod netmodel;
pub mod network;
pub mod numerics;
pub mod selfcheck;
