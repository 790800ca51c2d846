pub mod eval;
pub mod synth;
pub mod train;
pub mod verify;
