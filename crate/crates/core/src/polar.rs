//! c-polar transforms of isothermic surfaces.
//!
//! A c-polar transform is a parallel section `ψ` of `V^⊥` with `<ψ,ψ> = c`.
//! Sections are built as constant combinations of the frame's parallel basis.
//!
//! When the normal connection has a boost holonomy (the homogeneous tori),
//! a null eigen-section is only projectively periodic: `ψ(loop) = e^λ ψ`.
//! [`PolarSurface::psi`] then stores the periodic representative
//! `ψ̃ = e^{-μ·(u,v)} ψ` and every derivative is taken with the twist `μ`.
//! All identities below are homogeneous in `ψ`, so they hold for `ψ̃` with
//! twisted derivatives.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::conformal::{
    canonical_lift, conformal_invariants, embed, embed_point, embed_vector, willmore, ConformalFrame, ConformalInvariants,
};
use crate::error::{Error, Result};
use crate::gridcalc::{integrate_over, Axis, Field, Form};
use crate::isometric::isometric_invariants;
use crate::pseudolinalg::solve_coords;
use crate::surfaces::SurfaceDef;
use crate::tolerances::Tolerances;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
/// Relative agreement required of the growth rates of identified samples.
const TWIST_TOL: f64 = 1e-6;

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Where the polar surface lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// `S^{n+1}_r(c)`, `c > 0`.
    Sphere,
    /// `H^{n+1}_{r-1}(c)`, `c < 0`.
    Hyperbolic,
    /// `Q^n_r`, `c = 0`.
    Lightcone,
}

impl Target {
    pub fn of(c: f64) -> Self {
        if c > 0.0 {
            Target::Sphere
        } else if c < 0.0 {
            Target::Hyperbolic
        } else {
            Target::Lightcone
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolarSurface<'a> {
    pub frame: &'a ConformalFrame,
    pub inv: &'a ConformalInvariants,
    /// Periodic representative `ψ̃` (equal to `ψ` when `twist` is zero).
    pub psi: Field,
    pub c: f64,
    pub target: Target,
    /// Seed coordinates in the frame's parallel basis.
    pub coords: Vec<f64>,
    /// Growth rates `(μ_u, μ_v)` with `ψ = e^{μ_u (u-u_0) + μ_v (v-v_0)} ψ̃`.
    pub twist: [f64; 2],
    /// Unmasked parent points where `|<ψ,κ>|²` clears the threshold.
    pub mask: Vec<bool>,
}

/// Build the polar transform from a seed vector at the frame's base node.
pub fn polar_transform<'a>(
    frame: &'a ConformalFrame,
    inv: &'a ConformalInvariants,
    seed: &[f64],
    c: f64,
    tol: &Tolerances,
) -> Result<PolarSurface<'a>> {
    let sig = frame.y.sig();
    let d = sig.dim();
    if seed.len() != d {
        return Err(Error::Dimension { expected: d, got: seed.len() });
    }
    let size: f64 = seed.iter().map(|v| v * v).sum();
    if size == 0.0 {
        return Err(Error::Seed("zero seed".into()));
    }
    let len = sig.dot(seed, seed);
    if (len - c).abs() > 1e-8 * size.max(1.0) {
        return Err(Error::Seed(format!("<seed,seed> = {len:.6e}, expected c = {c}")));
    }
    let b = frame.y.spec().base_index();
    let sc: Vec<Complex64> = seed.iter().map(|&v| re(v)).collect();
    let coords: Vec<f64> = frame
        .normal_basis
        .iter()
        .zip(&frame.signs)
        .map(|(f, &e)| sig.dot(&sc, f.at(b)).re * e)
        .collect();
    let mut defect: f64 = 0.0;
    for i in 0..d {
        let r: f64 = coords.iter().zip(&frame.normal_basis).map(|(a, f)| a * f.at(b)[i].re).sum();
        defect = defect.max((r - seed[i]).abs());
    }
    if defect > 1e-6 * size.sqrt() {
        return Err(Error::Seed(format!("seed is not in V^perp at the base point (defect {defect:.3e})")));
    }
    from_coords(frame, inv, coords, c, tol)
}

/// Build the polar transform `Σ a_α ψ_α` from parallel-basis coordinates.
pub fn from_coords<'a>(
    frame: &'a ConformalFrame,
    inv: &'a ConformalInvariants,
    coords: Vec<f64>,
    c: f64,
    tol: &Tolerances,
) -> Result<PolarSurface<'a>> {
    let m = frame.rank();
    if coords.len() != m {
        return Err(Error::Dimension { expected: m, got: coords.len() });
    }
    let spec = *frame.y.spec();
    let sig = frame.y.sig();
    let mut twist = [0.0; 2];
    for axis in [Axis::U, Axis::V] {
        let Some(h) = frame.holonomy_matrix(axis) else { continue };
        let a = nalgebra::DVector::from_column_slice(&coords);
        let end = h.transpose() * &a;
        let lambda = end.dot(&a) / a.dot(&a);
        let defect = (&end - &a * lambda).norm() / a.norm();
        let closes = if c == 0.0 { lambda > 0.0 } else { (lambda - 1.0).abs() <= tol.holonomy_tol };
        if defect > tol.holonomy_tol || !closes {
            return Err(Error::Flatness {
                holonomy: defect.max((lambda - 1.0).abs()),
                tol: tol.holonomy_tol,
            });
        }
        if c == 0.0 {
            twist[axis as usize] = lambda.ln() / (spec.n(axis) as f64 * spec.h(axis));
        }
    }
    // A section decaying along an axis is marched the other way round, so
    // that the growing modes do not swamp it.
    let reverse = [twist[0] < 0.0, twist[1] < 0.0];
    let reversed;
    let basis = if reverse.iter().any(|&r| r) {
        let b = spec.base_index();
        let seeds: Vec<Vec<f64>> = frame.normal_basis.iter().map(|f| f.real_at(b)).collect();
        let tr = frame.transport(&seeds, reverse)?;
        reversed = frame.reorthonormalize(&tr.fields, &frame.signs);
        &reversed
    } else {
        &frame.normal_basis
    };
    let raw = Field::build(spec, sig, |p, o| {
        for (a, f) in coords.iter().zip(basis) {
            for (oi, fi) in o.iter_mut().zip(f.at(p)) {
                *oi += fi * a;
            }
        }
    });
    let (bu, bv) = spec.base();
    let offset = |k: usize, b: usize, n: usize, rev: bool| {
        if rev && k != b {
            k as f64 - b as f64 - n as f64
        } else {
            k as f64 - b as f64
        }
    };
    let psi = raw.map(sig, |p, v, o| {
        let (i, j) = spec.coords(p);
        let e = twist[0] * offset(i, bu, spec.nu, reverse[0]) * spec.hu()
            + twist[1] * offset(j, bv, spec.nv, reverse[1]) * spec.hv();
        let w = (-e).exp();
        for (oi, vi) in o.iter_mut().zip(v) {
            *oi = vi * w;
        }
    });
    let mut ps = PolarSurface {
        frame,
        inv,
        psi,
        c,
        target: Target::of(c),
        coords,
        twist,
        mask: Vec::new(),
    };
    ps.mask = ps.immersion_mask(tol);
    let par = ps.parallel_defect();
    if par > tol.compat_tol {
        return Err(Error::Flatness {
            holonomy: par,
            tol: tol.compat_tol,
        });
    }
    Ok(ps)
}

/// `<ψ,·>` of a field against each point of another.
fn pair(a: &Field, b: &Field) -> Field {
    a.dot(b).expect("same grid and signature")
}

fn sup_vec(f: &Field, p: usize) -> f64 {
    f.at(p).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

impl<'a> PolarSurface<'a> {
    /// The same surface with `ψ̃` replaced, e.g. by a perturbed copy.
    pub fn with_psi(&self, psi: Field, tol: &Tolerances) -> Self {
        let mut ps = self.clone();
        ps.psi = psi;
        ps.mask = ps.immersion_mask(tol);
        ps
    }

    fn immersion_mask(&self, tol: &Tolerances) -> Vec<bool> {
        let pk = self.psi_kappa();
        let spec = *self.psi.spec();
        let gmax = (0..spec.len()).map(|p| self.inv.g.val(p).re).fold(0.0, f64::max);
        let size = (0..spec.len())
            .map(|p| self.psi.at(p).iter().map(|z| z.norm_sqr()).sum::<f64>())
            .fold(0.0, f64::max);
        let thr = tol.polar_mask_rel * gmax * size.max(self.c.abs());
        (0..spec.len())
            .map(|p| self.frame.mask[p] && pk.val(p).norm_sqr() > thr)
            .collect()
    }

    /// Interior points on the polar mask.
    pub fn points(&self) -> Vec<usize> {
        self.frame.points().into_iter().filter(|&p| self.mask[p]).collect()
    }

    pub fn mask_fraction(&self) -> f64 {
        let all = self.frame.y.spec().interior();
        all.iter().filter(|&&p| self.mask[p]).count() as f64 / all.len() as f64
    }

    /// `∂_z f + w μ_z f` for a field of twist weight `w`.
    fn dz_w(&self, f: &Field, w: f64) -> Field {
        let k = Complex64::new(self.twist[0], -self.twist[1]) * (0.5 * w);
        f.d_z().axpy(k, f).expect("same field")
    }

    fn dzb_w(&self, f: &Field, w: f64) -> Field {
        let k = Complex64::new(self.twist[0], self.twist[1]) * (0.5 * w);
        f.d_zbar().axpy(k, f).expect("same field")
    }

    pub fn psi_z(&self) -> Field {
        self.dz_w(&self.psi, 1.0)
    }

    pub fn psi_zbar(&self) -> Field {
        self.dzb_w(&self.psi, 1.0)
    }

    /// `<ψ,κ>`.
    pub fn psi_kappa(&self) -> Field {
        pair(&self.psi, &self.inv.kappa)
    }

    /// `<ψ,κ>` in the adapted coordinate: real for isothermic parents.
    fn psi_k_adapted(&self) -> Field {
        self.psi_kappa().scale(Complex64::from_polar(1.0, -2.0 * self.frame.phase))
    }

    /// `max |D_z ψ|` over the mask.
    pub fn parallel_defect(&self) -> f64 {
        let dz = self.frame.perp(&self.psi_z());
        self.points().iter().map(|&p| sup_vec(&dz, p)).fold(0.0, f64::max)
    }

    /// `ψ/√|c|` on `<x,x> = sign c`, or the Euclidean-normalised
    /// representative of `[ψ]` when `c = 0`.
    pub fn point_map(&self) -> Field {
        let sig = self.psi.sig();
        self.psi.map(sig, |_, v, o| {
            let k = if self.c != 0.0 {
                sig.dot(v, v).re.abs().sqrt()
            } else {
                v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
            };
            let k = if k > 0.0 { 1.0 / k } else { 0.0 };
            for (oi, vi) in o.iter_mut().zip(v) {
                *oi = vi * k;
            }
        })
    }

    /// `⟨ψ,D_zκ⟩/⟨ψ,κ⟩`, zero off the mask.
    fn log_ratio(&self, dk: &Field) -> Field {
        let pk = self.psi_kappa();
        let pdk = pair(&self.psi, dk);
        Field::scalar(*self.psi.spec(), |p| if self.mask[p] { pdk.val(p) / pk.val(p) } else { ZERO })
    }
}

/// Residuals of the identities satisfied by a polar surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolarResiduals {
    /// `|D_z ψ|`.
    pub parallel: f64,
    /// `|<ψ,ψ> - c|`.
    pub length: f64,
    /// `|<ψ,Y>|`, `|<ψ,Y_z>|`, `|<ψ,Y_z̄>|`.
    pub condition_i: f64,
    /// Least-squares residual of `ψ_z` in `span{Y, Y_z̄}`.
    pub span: f64,
    /// `|ψ_z - 2<ψ,D_z̄κ>Y + 2<ψ,κ>Y_z̄|`.
    pub psi_z: f64,
    /// `|<ψ_z,ψ_z̄> - 2|<ψ,κ>|²|`.
    pub first_form: f64,
    /// `|ψ_zz̄ + 2<ψ,κ>κ̄ - <ψ, 2D_z̄D_z̄κ + s̄κ>Y|`.
    pub psi_zzbar: f64,
    /// `|Im e^{-2iα} Ω^ψ|` with `Ω^ψ = ψ_zz - (2<ψ,D_zκ>/<ψ,κ>) ψ_z`.
    pub omega_imag: f64,
    /// Difference between that `Ω^ψ` and its expansion in the frame.
    pub omega_formula: f64,
}

impl PolarResiduals {
    pub fn max(&self) -> f64 {
        [
            self.parallel,
            self.length,
            self.condition_i,
            self.span,
            self.psi_z,
            self.first_form,
            self.psi_zzbar,
            self.omega_imag,
            self.omega_formula,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn verify_polar(ps: &PolarSurface) -> PolarResiduals {
    let f = ps.frame;
    let sig = f.y.sig();
    let d = sig.dim();
    let pts = ps.points();
    let kappa = &ps.inv.kappa;
    let dk = f.d_z_perp(kappa);
    let dbk = f.d_zbar_perp(kappa);
    let dbdbk = f.d_zbar_perp(&dbk);
    let dzdbk = f.d_z_perp(&dbk);
    let psi = &ps.psi;
    let psi_z = ps.psi_z();
    let psi_zb = ps.psi_zbar();
    let psi_zz = ps.dz_w(&psi_z, 1.0);
    let psi_zzb = ps.dzb_w(&psi_z, 1.0);
    let rot = Complex64::from_polar(1.0, -2.0 * f.phase);

    let mut r = PolarResiduals {
        parallel: ps.parallel_defect(),
        length: 0.0,
        condition_i: 0.0,
        span: 0.0,
        psi_z: 0.0,
        first_form: 0.0,
        psi_zzbar: 0.0,
        omega_imag: 0.0,
        omega_formula: 0.0,
    };
    for &p in &pts {
        let v = psi.at(p);
        let (y, yz, yzb, n) = (f.y.at(p), f.y_z.at(p), f.y_zb.at(p), f.n.at(p));
        let pk = sig.dot(v, kappa.at(p));
        let pdk = sig.dot(v, dk.at(p));
        let pdbk = sig.dot(v, dbk.at(p));
        let g = ps.inv.g.val(p).re;
        r.length = r.length.max((sig.dot(v, v).re - ps.c).abs());
        r.condition_i = r
            .condition_i
            .max(sig.dot(v, y).norm())
            .max(sig.dot(v, yz).norm())
            .max(sig.dot(v, yzb).norm());
        let pz = psi_z.at(p);
        r.span = r.span.max(match solve_coords(pz, [y, yzb], f64::INFINITY) {
            Ok(s) => s.residual,
            Err(_) => f64::INFINITY,
        });
        for i in 0..d {
            let e = pz[i] - (pdbk * y[i] * 2.0 - pk * yzb[i] * 2.0);
            r.psi_z = r.psi_z.max(e.norm());
        }
        r.first_form = r.first_form.max((sig.dot(pz, psi_zb.at(p)) - 2.0 * pk.norm_sqr()).norm());
        let ycoef = sig.dot(v, dbdbk.at(p)) * 2.0 + ps.inv.s.val(p).conj() * pk;
        let ycoef_om = (sig.dot(v, dzdbk.at(p)) + pk * g - pdk * pdbk * 2.0 / pk) * 2.0;
        for i in 0..d {
            let kb = kappa.at(p)[i].conj();
            let e = psi_zzb.at(p)[i] + pk * kb * 2.0 - ycoef * y[i];
            r.psi_zzbar = r.psi_zzbar.max(e.norm());
            let om = psi_zz.at(p)[i] - pdk / pk * 2.0 * pz[i];
            r.omega_imag = r.omega_imag.max((om * rot).im.abs());
            let formula = -pk * n[i] + pdk * yzb[i] * 2.0 + pdbk * yz[i] * 2.0 + ycoef_om * y[i];
            r.omega_formula = r.omega_formula.max((om - formula).norm());
        }
    }
    r
}

/// Dual lift `Y^ψ = Y/<ψ,k>` in the adapted coordinate, with its residuals.
#[derive(Debug, Clone)]
pub struct DualLift {
    pub y_psi: Field,
    /// `|Y^ψ_z + e^{2iα} ψ_z̄ / (2<ψ,k>²)|`, relative to the second term.
    pub duality: f64,
    /// `|<Y^ψ, H^ψ>|`.
    pub minimal: f64,
}

pub fn dual_lift(ps: &PolarSurface, tol: &Tolerances) -> Result<DualLift> {
    let pts = ps.points();
    if pts.is_empty() {
        return Err(Error::EmptyMask);
    }
    let f = ps.frame;
    let sig = f.y.sig();
    let d = sig.dim();
    let spec = *f.y.spec();
    let pk = ps.psi_k_adapted();
    let inv_pk = Field::scalar(spec, |p| if ps.mask[p] { 1.0 / pk.val(p) } else { ZERO });
    let y_psi = f.y.map(sig, |p, v, o| {
        for (oi, vi) in o.iter_mut().zip(v) {
            *oi = vi * inv_pk.val(p);
        }
    });
    let yz = ps.dz_w(&y_psi, -1.0);
    let psi_zb = ps.psi_zbar();
    let rot = Complex64::from_polar(1.0, 2.0 * f.phase);
    let mut duality: f64 = 0.0;
    for &p in &pts {
        let k = rot / (pk.val(p) * pk.val(p) * 2.0);
        let scale = (0..d).map(|i| (psi_zb.at(p)[i] * k).norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            continue;
        }
        for i in 0..d {
            duality = duality.max((yz.at(p)[i] + psi_zb.at(p)[i] * k).norm() / scale);
        }
    }
    let h = polar_mean_curvature(ps, tol)?;
    let minimal = pts.iter().map(|&p| sig.dot(y_psi.at(p), h.at(p)).norm()).fold(0.0, f64::max);
    Ok(DualLift { y_psi, duality, minimal })
}

/// Mean curvature vector of `ψ` as a surface in its own space form.
/// Uses the isometric pipeline when `ψ` is periodic and immersed
/// everywhere. Otherwise it takes `2e^{-2ω} (ψ_zz̄)^⊥` directly, normal to
/// the tangent plane and, for `c ≠ 0`, to `ψ`; for twisted null sections
/// this is normalised to the weight of `ψ̃`.
fn polar_mean_curvature(ps: &PolarSurface, tol: &Tolerances) -> Result<Field> {
    if ps.twist == [0.0, 0.0] && ps.mask.iter().all(|&m| m) {
        if ps.c != 0.0 {
            let k = ps.c.abs().sqrt();
            let iso = isometric_invariants(&ps.point_map(), ps.c.signum(), None, tol)?;
            return Ok(iso.mean_curvature.scale(re(1.0 / k)));
        }
        let iso = isometric_invariants(&ps.psi, 0.0, None, tol)?;
        return Ok(iso.mean_curvature);
    }
    let sig = ps.psi.sig();
    let pz = ps.psi_z();
    let pzb = ps.psi_zbar();
    let pzzb = ps.dzb_w(&pz, 1.0);
    Ok(Field::build(*ps.psi.spec(), sig, |p, o| {
        let e2w = 2.0 * sig.dot(pz.at(p), pzb.at(p)).re;
        if !ps.mask[p] || e2w <= 0.0 {
            return;
        }
        let w = pzzb.at(p);
        let psi = ps.psi.at(p);
        let a = sig.dot(w, pzb.at(p)) * (2.0 / e2w);
        let b = sig.dot(w, pz.at(p)) * (2.0 / e2w);
        let c = if ps.c != 0.0 { sig.dot(w, psi) / ps.c } else { ZERO };
        for i in 0..o.len() {
            o[i] = (w[i] - a * pz.at(p)[i] - b * pzb.at(p)[i] - c * psi[i]) * (2.0 / e2w);
        }
    }))
}

/// `g^ψ` from the formula and from the full pipeline applied to `ψ`.
#[derive(Debug, Clone)]
pub struct PolarMetric {
    /// `<κ,κ̄> + (<ψ,D_zκ>/<ψ,κ>)_z̄` (real part).
    pub formula: Field,
    /// `<κ^ψ,κ̄^ψ>` of the canonical lift of `ψ`.
    pub pipeline: Field,
    pub discrepancy: f64,
    /// `max |Im|` of the formula.
    pub imag: f64,
    /// `4∫` of the formula and the pipeline Willmore functional, when the
    /// grid is closed and `ψ` immersed everywhere.
    pub willmore_formula: Option<f64>,
    pub willmore_pipeline: Option<f64>,
}

/// Light-cone image of `ψ`, lifted, sharing the parent's adapted phase.
pub fn polar_pipeline(ps: &PolarSurface, tol: &Tolerances) -> Result<(ConformalFrame, ConformalInvariants)> {
    let x = if ps.c != 0.0 {
        embed(&ps.point_map(), ps.c.signum(), tol)?
    } else {
        ps.psi.clone()
    };
    let frame = canonical_lift(&x, None, tol)?.with_phase(ps.frame.phase);
    let inv = conformal_invariants(&frame);
    Ok((frame, inv))
}

pub fn polar_metric(ps: &PolarSurface, tol: &Tolerances) -> Result<PolarMetric> {
    let pts = ps.points();
    if pts.is_empty() {
        return Err(Error::EmptyMask);
    }
    let spec = *ps.psi.spec();
    let dk = ps.frame.d_z_perp(&ps.inv.kappa);
    let corr = ps.log_ratio(&dk).d_zbar();
    let full = Field::scalar(spec, |p| ps.inv.g.val(p) + corr.val(p));
    let imag = full.max_imag_over(&pts);
    let formula = full.real_part();
    let (pf, pinv) = polar_pipeline(ps, tol)?;
    let pipeline = pinv.g.clone();
    let discrepancy = pts
        .iter()
        .filter(|&&p| pf.mask[p])
        .map(|&p| (formula.val(p).re - pipeline.val(p).re).abs())
        .fold(0.0, f64::max);
    let global = spec.closed() && ps.mask.iter().all(|&m| m);
    let willmore_formula = if global {
        Some(4.0 * integrate_over(&formula, Form::DuDv, None)?.re)
    } else {
        None
    };
    let willmore_pipeline = if global { willmore(&pf, &pinv).ok() } else { None };
    Ok(PolarMetric {
        formula,
        pipeline,
        discrepancy,
        imag,
        willmore_formula,
        willmore_pipeline,
    })
}

/// How sampled polar surfaces group into classes.
#[derive(Debug, Clone, Serialize)]
pub struct ModuliReport {
    /// Seed coordinates in the parallel basis of `V^⊥`.
    pub seeds: Vec<Vec<f64>>,
    /// Class of each sample; `None` when `ψ` is nowhere immersed.
    pub classes: Vec<Option<usize>>,
    pub class_count: usize,
    /// Smallest `max |<ψ_z,ψ_z̄> - <ψ'_z,ψ'_z̄>|` between samples of
    /// different classes (infinite with fewer than two classes).
    pub min_pairwise_ff: f64,
    pub full: bool,
    /// Constant direction orthogonal to the surface when not full.
    pub orthogonal: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModuliOptions {
    /// Refuse non-full parents with [`Error::NotFull`].
    pub require_full: bool,
    pub rng_seed: u64,
    /// Relative residual below which two samples are identified.
    pub class_tol: f64,
}

impl Default for ModuliOptions {
    fn default() -> Self {
        Self {
            require_full: true,
            rng_seed: 7,
            class_tol: 1e-6,
        }
    }
}

/// Constant direction `P` with `<Y,P> = 0` on the whole grid, if any.
pub fn fullness(frame: &ConformalFrame) -> Option<Vec<f64>> {
    let sig = frame.y.sig();
    let d = sig.dim();
    let pts = frame.points();
    let mut m = DMatrix::<f64>::zeros(d, d);
    for &p in &pts {
        let y = frame.y.real_at(p);
        let n2: f64 = y.iter().map(|v| v * v).sum();
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] += y[i] * y[j] / n2;
            }
        }
    }
    let eig = SymmetricEigen::new(m);
    let (k, lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |a, (i, &v)| if v < a.1 { (i, v) } else { a });
    let lmax = eig.eigenvalues.max();
    if lmin.max(0.0).sqrt() > 1e-6 * lmax.sqrt() {
        return None;
    }
    let v = eig.eigenvectors.column(k);
    Some((0..d).map(|i| v[i] * sig.metric(i)).collect())
}

fn random_seed(rng: &mut ChaCha8Rng, signs: &[f64], c: f64) -> Option<Vec<f64>> {
    let m = signs.len();
    let (np, nn) = (signs.iter().filter(|&&e| e > 0.0).count(), signs.iter().filter(|&&e| e < 0.0).count());
    if (c > 0.0 && np == 0) || (c < 0.0 && nn == 0) || (c == 0.0 && (np == 0 || nn == 0)) {
        return None;
    }
    loop {
        let x: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r2: f64 = x.iter().map(|v| v * v).sum();
        if !(1e-4..=1.0).contains(&r2) {
            continue;
        }
        let pos: f64 = x.iter().zip(signs).filter(|(_, &e)| e > 0.0).map(|(v, _)| v * v).sum();
        let neg: f64 = x.iter().zip(signs).filter(|(_, &e)| e < 0.0).map(|(v, _)| v * v).sum();
        if pos < 1e-6 && np > 0 || neg < 1e-6 && nn > 0 {
            continue;
        }
        // Rescale one block so that <x,x> = c.
        let (kp, kn) = if c > 0.0 {
            (((c + neg) / pos).sqrt(), 1.0)
        } else if c < 0.0 {
            (1.0, ((pos - c) / neg).sqrt())
        } else {
            (1.0 / pos.sqrt(), 1.0 / neg.sqrt())
        };
        let mut x: Vec<f64> = x
            .iter()
            .zip(signs)
            .map(|(v, &e)| if e > 0.0 { v * kp } else { v * kn })
            .collect();
        if let Some(first) = x.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                x.iter_mut().for_each(|v| *v = -*v);
            }
        }
        return Some(x);
    }
}

/// Group polar surfaces of one parent: two samples are identified when
/// `<ψ',κ> = λ<ψ,κ>` with constant `λ`, i.e. `ψ' - λψ` is constant.
/// Samples with different twists grow differently and never match.
pub fn polar_classes(samples: &[PolarSurface], class_tol: f64) -> Vec<Option<usize>> {
    let pks: Vec<Field> = samples.iter().map(|s| s.psi_kappa()).collect();
    let mut classes: Vec<Option<usize>> = vec![None; samples.len()];
    let mut reps: Vec<usize> = Vec::new();
    for i in 0..samples.len() {
        if samples[i].points().is_empty() {
            continue;
        }
        let pts = samples[i].frame.points();
        let found = reps.iter().position(|&r| {
            let (tr, ti) = (samples[r].twist, samples[i].twist);
            if (tr[0] - ti[0]).abs() + (tr[1] - ti[1]).abs() > TWIST_TOL * (1.0 + tr[0].abs() + tr[1].abs()) {
                return false;
            }
            let (a, b) = (&pks[r], &pks[i]);
            let num: f64 = pts.iter().map(|&p| (a.val(p).conj() * b.val(p)).re).sum();
            let den: f64 = pts.iter().map(|&p| a.val(p).norm_sqr()).sum();
            let lambda = num / den;
            let res = pts.iter().map(|&p| (b.val(p) - a.val(p) * lambda).norm()).fold(0.0, f64::max);
            let size = pts.iter().map(|&p| b.val(p).norm()).fold(0.0, f64::max);
            res <= class_tol * size
        });
        classes[i] = Some(match found {
            Some(k) => k,
            None => {
                reps.push(i);
                reps.len() - 1
            }
        });
    }
    classes
}

/// Sample `count` polar transforms with `<ψ,ψ> = c` and classify them.
pub fn moduli_sample<'a>(
    frame: &'a ConformalFrame,
    inv: &'a ConformalInvariants,
    c: f64,
    count: usize,
    opts: &ModuliOptions,
    tol: &Tolerances,
) -> Result<(Vec<PolarSurface<'a>>, ModuliReport)> {
    let orthogonal = fullness(frame);
    if opts.require_full {
        if let Some(direction) = orthogonal {
            return Err(Error::NotFull { direction });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
    let mut samples = Vec::with_capacity(count);
    let mut seeds = Vec::with_capacity(count);
    for _ in 0..count {
        let x = random_seed(&mut rng, &frame.signs, c)
            .ok_or_else(|| Error::Parameter(format!("V^perp has no vectors with <x,x> = {c}")))?;
        samples.push(from_coords(frame, inv, x.clone(), c, tol)?);
        seeds.push(x);
    }
    let classes = polar_classes(&samples, opts.class_tol);
    let class_count = classes.iter().flatten().max().map_or(0, |k| k + 1);
    let ffs: Vec<Field> = samples
        .iter()
        .map(|s| s.psi_z().dot_conj(&s.psi_z()).expect("same grid"))
        .collect();
    let pts = frame.points();
    let mut min_pairwise_ff = f64::INFINITY;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            if classes[i].is_none() || classes[j].is_none() || classes[i] == classes[j] {
                continue;
            }
            let diff = pts
                .iter()
                .map(|&p| (ffs[i].val(p) - ffs[j].val(p)).norm())
                .fold(0.0, f64::max);
            min_pairwise_ff = min_pairwise_ff.min(diff);
        }
    }
    let report = ModuliReport {
        seeds,
        classes,
        class_count,
        min_pairwise_ff,
        full: orthogonal.is_none(),
        orthogonal,
    };
    Ok((samples, report))
}

/// `F(ψ,ψ') = <ψ,D_zκ>/<ψ,κ> - <ψ',D_zκ>/<ψ',κ>` and `max |F_z̄|`.
#[derive(Debug, Clone)]
pub struct Indicator {
    pub f: Field,
    pub defect: f64,
}

pub fn conf_equiv_indicator(a: &PolarSurface, b: &PolarSurface) -> Result<Indicator> {
    if !std::ptr::eq(a.frame, b.frame) {
        return Err(Error::Parameter("polar surfaces come from different parents".into()));
    }
    let pts: Vec<usize> = a.points().into_iter().filter(|&p| b.mask[p]).collect();
    if pts.is_empty() {
        return Err(Error::EmptyMask);
    }
    let dk = a.frame.d_z_perp(&a.inv.kappa);
    let f = a.log_ratio(&dk).sub(&b.log_ratio(&dk))?;
    let fzb = f.d_zbar();
    let defect = fzb.sup_over(&pts);
    Ok(Indicator { f, defect })
}

/// Seed `L(n^θ) + <n^θ,H>X` at the base node of a product of planar curves,
/// with `n^θ = (β cos θ, β̃ sin θ)`.
pub fn product_polar_seed(def: &SurfaceDef, frame: &ConformalFrame, theta: f64) -> Result<Vec<f64>> {
    let spec = frame.y.spec();
    let (i, j) = spec.base();
    let (u, v) = (spec.u(i), spec.v(j));
    let not_product = || Error::Parameter(format!("{} is not a product of planar curves", def.name));
    let [b1, b2] = def.product_normals(u, v).ok_or_else(not_product)?;
    let (k1, k2) = def.product_curvatures(u, v).ok_or_else(not_product)?;
    let n: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a * theta.cos() + b * theta.sin()).collect();
    let nh = 0.5 * (k1 * theta.cos() + k2 * theta.sin());
    let sig = def.signature();
    let x = def.position(u, v);
    let big_x = embed_point(sig, 0.0, &x)?;
    let xc: Vec<Complex64> = x.iter().map(|&a| re(a)).collect();
    let nc: Vec<Complex64> = n.iter().map(|&a| re(a)).collect();
    let mut ln = vec![ZERO; big_x.len()];
    embed_vector(sig, 0.0, &xc, &nc, &mut ln);
    Ok(ln.iter().zip(&big_x).map(|(l, x)| l.re + nh * x).collect())
}

/// Unit section of a rank-2 normal bundle orthogonal to the constant
/// direction of a surface lying in a sphere.
pub fn sphere_section_coords(frame: &ConformalFrame) -> Option<Vec<f64>> {
    if frame.rank() != 2 {
        return None;
    }
    let p = fullness(frame)?;
    let b = frame.y.spec().base_index();
    let sig = frame.y.sig();
    let pc: Vec<Complex64> = p.iter().map(|&a| re(a)).collect();
    let a: Vec<f64> = frame.normal_basis.iter().map(|f| sig.dot(&pc, f.at(b)).re).collect();
    let r = (a[0] * a[0] + a[1] * a[1]).sqrt();
    Some(vec![-a[1] / r, a[0] / r])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::lift_catalog;
    use crate::surfaces::{clifford_torus, homogeneous_torus, product_surface, Curve, SurfaceDef};
    use std::f64::consts::PI;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn lift(def: &SurfaceDef, n: usize) -> (ConformalFrame, ConformalInvariants) {
        lift_catalog(def, &def.grid(n, n).unwrap(), &tol()).unwrap()
    }

    #[test]
    fn clifford_polar_identities() {
        let def = clifford_torus();
        let (frame, inv) = lift(&def, 64);
        let ps = from_coords(&frame, &inv, sphere_section_coords(&frame).unwrap(), 1.0, &tol()).unwrap();
        assert_eq!(ps.target, Target::Sphere);
        assert_eq!(ps.mask_fraction(), 1.0);
        let r = verify_polar(&ps);
        assert!(r.max() < 1e-6, "{r:?}");
        assert!(r.first_form < 1e-7, "{r:?}");
        assert!(r.length < 1e-9 && r.parallel < 1e-7 && r.condition_i < 1e-8, "{r:?}");
        let dl = dual_lift(&ps, &tol()).unwrap();
        assert!(dl.duality < 1e-6, "{}", dl.duality);
        assert!(dl.minimal < 1e-6, "{}", dl.minimal);
        let m = polar_metric(&ps, &tol()).unwrap();
        assert!(m.discrepancy < 1e-5, "{}", m.discrepancy);
        let w = m.willmore_pipeline.unwrap();
        assert!((w - 2.0 * PI * PI).abs() < 1e-4, "{w}");
        assert!((m.willmore_formula.unwrap() - 2.0 * PI * PI).abs() < 1e-4);
    }

    #[test]
    fn constant_section_is_nowhere_immersed() {
        let (frame, inv) = lift(&clifford_torus(), 32);
        let p = fullness(&frame).unwrap();
        let n = frame.y.sig().dot(&p, &p);
        let seed: Vec<f64> = p.iter().map(|v| v / n.sqrt()).collect();
        let ps = polar_transform(&frame, &inv, &seed, 1.0, &tol()).unwrap();
        assert!(ps.points().is_empty());
        assert_eq!(dual_lift(&ps, &tol()).unwrap_err(), Error::EmptyMask);
    }

    #[test]
    fn seed_errors() {
        let def = clifford_torus();
        let (frame, inv) = lift(&def, 32);
        let s = product_polar_seed(&def, &frame, 0.3).unwrap();
        assert!(matches!(polar_transform(&frame, &inv, &s, 0.5, &tol()), Err(Error::Seed(_))));
        assert!(matches!(polar_transform(&frame, &inv, &s[1..], 1.0, &tol()), Err(Error::Dimension { .. })));
        let y = frame.y.real_at(frame.y.spec().base_index());
        let off: Vec<f64> = s.iter().zip(&y).map(|(a, b)| a + 0.1 * b).collect();
        assert!(matches!(polar_transform(&frame, &inv, &off, 1.0, &tol()), Err(Error::Seed(_))));
    }

    #[test]
    fn corrupted_psi_breaks_condition_i() {
        let (frame, inv) = lift(&clifford_torus(), 32);
        let ps = from_coords(&frame, &inv, sphere_section_coords(&frame).unwrap(), 1.0, &tol()).unwrap();
        let bad = ps.psi.axpy(re(1e-3), &frame.y_z).unwrap();
        let r = verify_polar(&ps.with_psi(bad, &tol()));
        assert!((r.condition_i - 5e-4).abs() < 1e-5, "{}", r.condition_i);
    }

    #[test]
    fn product_family_pairing_and_minimal_section() {
        let def = product_surface(Curve::circle(1.0).unwrap(), Curve::ellipse(1.0, 0.9).unwrap()).unwrap();
        let (frame, inv) = lift(&def, 64);
        let spec = *frame.y.spec();
        for theta in [0.0, 0.7, PI / 2.0] {
            let seed = product_polar_seed(&def, &frame, theta).unwrap();
            let ps = polar_transform(&frame, &inv, &seed, 1.0, &tol()).unwrap();
            // <ψ^θ,κ> against the closed form (k cos θ - k̃ sin θ)/4.
            let pk = ps.psi_kappa();
            let err = ps
                .points()
                .iter()
                .map(|&p| {
                    let (i, j) = spec.coords(p);
                    let (k1, k2) = def.product_curvatures(spec.u(i), spec.v(j)).unwrap();
                    (pk.val(p) - 0.25 * (k1 * theta.cos() - k2 * theta.sin())).norm()
                })
                .fold(0.0, f64::max);
            assert!(err < 1e-7, "θ={theta}: {err}");
            let r = verify_polar(&ps);
            assert!(r.max() < 1e-5, "θ={theta}: {r:?}");
            if theta == 0.0 {
                let dl = dual_lift(&ps, &tol()).unwrap();
                assert!(dl.minimal < 1e-6, "{}", dl.minimal);
                let m = polar_metric(&ps, &tol()).unwrap();
                assert!(m.discrepancy < 1e-5, "{}", m.discrepancy);
            }
        }
    }

    #[test]
    fn homogeneous_torus_null_polars() {
        let (frame, inv) = lift(&homogeneous_torus(2.0).unwrap(), 64);
        let w0 = willmore(&frame, &inv).unwrap();
        let (samples, rep) = moduli_sample(&frame, &inv, 0.0, 6, &ModuliOptions::default(), &tol()).unwrap();
        assert_eq!(rep.class_count, 2, "{:?}", rep.classes);
        let mut seen = [false; 2];
        for (ps, cls) in samples.iter().zip(&rep.classes) {
            let k = cls.unwrap();
            if seen[k] {
                continue;
            }
            seen[k] = true;
            assert_ne!(ps.twist, [0.0, 0.0]);
            let r = verify_polar(ps);
            assert!(r.max() < 1e-5, "{r:?}");
            let dl = dual_lift(ps, &tol()).unwrap();
            assert!(dl.duality < 1e-5 && dl.minimal < 1e-5, "{} {}", dl.duality, dl.minimal);
            let m = polar_metric(ps, &tol()).unwrap();
            let w = m.willmore_pipeline.unwrap();
            assert!((w - w0).abs() < 1e-4, "{w} vs {w0}");
        }
    }

    #[test]
    fn moduli_in_r5() {
        let twisted = product_surface(Curve::circle(1.0).unwrap(), Curve::twisted(0.3).unwrap()).unwrap();
        let (frame, inv) = lift(&twisted, 64);
        assert_eq!(frame.rank(), 3);
        let (_, rep) = moduli_sample(&frame, &inv, 1.0, 5, &ModuliOptions::default(), &tol()).unwrap();
        assert!(rep.full);
        assert_eq!(rep.class_count, 5, "{:?}", rep.classes);
        assert!(rep.min_pairwise_ff > 1e-6, "{}", rep.min_pairwise_ff);

        let flat = product_surface(Curve::circle(1.0).unwrap(), Curve::twisted(0.0).unwrap()).unwrap();
        let (frame, inv) = lift(&flat, 32);
        assert!(matches!(
            moduli_sample(&frame, &inv, 1.0, 5, &ModuliOptions::default(), &tol()),
            Err(Error::NotFull { .. })
        ));
        let opts = ModuliOptions {
            require_full: false,
            ..Default::default()
        };
        let (_, rep) = moduli_sample(&frame, &inv, 1.0, 5, &opts, &tol()).unwrap();
        assert!(!rep.full);
        assert_eq!(rep.class_count, 1, "{:?}", rep.classes);
    }

    #[test]
    fn sign_flipped_seeds_share_a_class() {
        let def = clifford_torus();
        let (frame, inv) = lift(&def, 32);
        let a = sphere_section_coords(&frame).unwrap();
        let b: Vec<f64> = a.iter().map(|v| -v).collect();
        let s = [
            from_coords(&frame, &inv, a, 1.0, &tol()).unwrap(),
            from_coords(&frame, &inv, b, 1.0, &tol()).unwrap(),
        ];
        assert_eq!(polar_classes(&s, 1e-6), vec![Some(0), Some(0)]);
    }

    #[test]
    fn indicator_separates_product_polars() {
        let def = product_surface(Curve::circle(1.0).unwrap(), Curve::ellipse(1.0, 0.9).unwrap()).unwrap();
        let (frame, inv) = lift(&def, 64);
        let p0 = polar_transform(&frame, &inv, &product_polar_seed(&def, &frame, 0.0).unwrap(), 1.0, &tol()).unwrap();
        let p1 = polar_transform(&frame, &inv, &product_polar_seed(&def, &frame, PI / 2.0).unwrap(), 1.0, &tol()).unwrap();
        let same = conf_equiv_indicator(&p0, &p0).unwrap();
        assert_eq!(same.defect, 0.0);
        assert_eq!(same.f.sup_interior(), 0.0);
        let diff = conf_equiv_indicator(&p0, &p1).unwrap();
        assert!(diff.defect > 1e-3, "{}", diff.defect);
    }
}
