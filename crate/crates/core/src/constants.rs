//! CODATA 2018 values.

/// Magnetic flux quantum h/2e (Wb).
pub const FLUX_QUANTUM: f64 = 2.067833848e-15;
/// Vacuum permeability (H/m).
pub const MU0: f64 = 1.25663706212e-6;
/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054571817e-34;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub flux_quantum: f64,
    pub vacuum_permeability: f64,
    pub reduced_planck: f64,
}

pub const CONSTANTS: PhysicalConstants = PhysicalConstants {
    flux_quantum: FLUX_QUANTUM,
    vacuum_permeability: MU0,
    reduced_planck: HBAR,
};
