//! Default numerical thresholds. Every report echoes the effective values.

use serde::{Deserialize, Serialize};

/// Relative threshold below which a Gram–Schmidt candidate counts as null.
pub const NULL_TOL: f64 = 1e-9;
/// Residual allowed when re-expanding a target in a basis.
pub const SPAN_TOL: f64 = 1e-8;
/// Largest accepted Gram matrix condition number.
pub const COND_MAX: f64 = 1e12;
/// Relative conformality threshold for isometric input.
pub const CONF_TOL: f64 = 1e-4;
/// Relative immersion threshold for the canonical lift.
pub const IMM_TOL: f64 = 1e-8;
/// Accepted quadric deviation for space-form input.
pub const QUADRIC_TOL: f64 = 1e-10;
/// Polar immersion mask: `|<psi,kappa>|^2 > POLAR_MASK_REL * sup <kappa,kappa-bar>`.
pub const POLAR_MASK_REL: f64 = 1e-10;
/// Holonomy tolerated before a normal bundle is declared non-flat.
pub const HOLONOMY_TOL: f64 = 1e-6;
/// Cross-line compatibility of marched frame systems on 64x64 grids.
pub const COMPAT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub null_tol: f64,
    pub span_tol: f64,
    pub cond_max: f64,
    pub conf_tol: f64,
    pub imm_tol: f64,
    pub quadric_tol: f64,
    pub polar_mask_rel: f64,
    pub holonomy_tol: f64,
    pub compat_tol: f64,
    /// Threshold applied to every verification residual in job reports.
    pub check_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            null_tol: NULL_TOL,
            span_tol: SPAN_TOL,
            cond_max: COND_MAX,
            conf_tol: CONF_TOL,
            imm_tol: IMM_TOL,
            quadric_tol: QUADRIC_TOL,
            polar_mask_rel: POLAR_MASK_REL,
            holonomy_tol: HOLONOMY_TOL,
            compat_tol: COMPAT_TOL,
            check_tol: 1e-4,
        }
    }
}
