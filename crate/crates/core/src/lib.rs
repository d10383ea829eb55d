pub mod cli;
pub mod domination;
pub mod dynamics;
pub mod kernels;
pub mod linalg;
pub mod lyapunov;
pub mod perturb;
pub mod sample;
