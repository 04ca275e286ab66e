pub mod body;
pub mod control;
pub mod convex;
pub mod gripper;
pub mod hull;
pub mod limb;
pub mod model;
pub mod scenario;
pub mod sdm;
pub mod stability;
pub mod gait;
pub mod stance;
