//! Simulated measurement schemes that recover the combined amplitude.

pub mod interfere;
pub mod weak;
