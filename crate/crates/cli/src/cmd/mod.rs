pub mod compare;
pub mod eval;
pub mod gen;
pub mod profile;
pub mod simulate;
