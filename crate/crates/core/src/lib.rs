pub mod behavior;
pub mod compose;
pub mod error;
pub mod guess;
pub mod npa;
pub mod protocol;
pub mod sdp;
