pub mod expr;
pub mod coeffs;
pub mod grid;
pub mod resolvent;
pub mod evolve;
pub mod sde;
