pub mod ik;
pub mod input;
pub mod math;
pub mod model;
pub mod post;
pub mod qp;
pub mod retarget;
pub mod runtime;
