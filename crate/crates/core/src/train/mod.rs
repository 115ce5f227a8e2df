pub mod autograd;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod trainer;
