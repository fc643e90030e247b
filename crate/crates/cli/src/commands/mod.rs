pub mod eval;
pub mod extract;
pub mod split;
pub mod train;
