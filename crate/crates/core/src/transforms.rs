//! Spectral and `D^θ` Darboux transforms of isothermic surfaces, and the two
//! permutability diagrams with c-polar transforms.
//!
//! Both transforms are marched from the base node: a `v`-edge first, then
//! every `u`-line. Everything is written in the adapted coordinate
//! `w = e^{iα} z`, where `κ` is real. A transformed torus generally does
//! not close up; its fields are then re-read on an open grid with the same
//! nodes and steps, and every check skips the margins.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::conformal::{canonical_lift, conformal_invariants, ConformalFrame, ConformalInvariants};
use crate::error::{Error, Result};
use crate::gridcalc::{compatibility_residual, transport_sections_from, Axis, Field, GridSpec, Scheme};
use crate::polar::{polar_pipeline, verify_polar, PolarResiduals, PolarSurface};
use crate::pseudolinalg::{solve_coords, Signature};
use crate::tolerances::Tolerances;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// The nodes of `spec` with both axes open and the steps unchanged.
pub fn open_spec(spec: &GridSpec) -> GridSpec {
    let mut s = *spec;
    s.lu = spec.hu() * (spec.nu - 1) as f64;
    s.lv = spec.hv() * (spec.nv - 1) as f64;
    s.scheme = Scheme::Compact4;
    s.opened()
}

fn cmax(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn rewrap(f: &Field, spec: GridSpec) -> Field {
    f.clone().with_spec(spec).expect("same node counts")
}

fn sup_at(f: &Field, p: usize) -> f64 {
    f.at(p).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn sup_over(f: &Field, pts: &[usize]) -> f64 {
    pts.iter().map(|&p| sup_at(f, p)).fold(0.0, f64::max)
}

/// `∂_w` in the coordinate rotated by `phase`.
fn d_w(f: &Field, phase: f64) -> Field {
    f.d_z().scale(Complex64::from_polar(1.0, -phase))
}

/// Multipliers `(a, b)` with `∂_axis = a ∂_w + b ∂_w̄`.
fn axis_weights(axis: Axis, phase: f64) -> (Complex64, Complex64) {
    let e = Complex64::from_polar(1.0, phase);
    match axis {
        Axis::U => (e, e.conj()),
        Axis::V => (I * e, -I * e.conj()),
    }
}

/// Coefficients of the structure equations in the adapted coordinate,
/// packed per point as `[a, b, s, g, k^α, d^α, A_αβ]` where
/// `κ = Σ k^α ψ_α`, `D_w̄ κ = Σ d^α ψ_α` and `D_w ψ_α = Σ A_αβ ψ_β`.
struct Structure {
    signs: Vec<f64>,
    u: Field,
    v: Field,
}

impl Structure {
    fn new(frame: &ConformalFrame, inv: &ConformalInvariants, s_shift: f64) -> Self {
        let spec = *frame.y.spec();
        let m = frame.rank();
        let phase = frame.phase;
        let r1 = Complex64::from_polar(1.0, -phase);
        let r2 = r1 * r1;
        let dk = frame.coefficients(&frame.d_zbar_perp(&inv.kappa));
        let width = 4 + 2 * m + m * m;
        let pack = |axis: Axis| {
            let (a, b) = axis_weights(axis, phase);
            Field::build(spec, Signature::euclidean(width), |p, o| {
                o[0] = a;
                o[1] = b;
                o[2] = inv.s.val(p) * r2 + s_shift;
                o[3] = inv.g.val(p);
                for al in 0..m {
                    o[4 + al] = inv.kappa_coef[al].val(p) * r2;
                    o[4 + m + al] = dk[al].val(p) * r1;
                }
                for (k, c) in frame.conn.iter().enumerate() {
                    o[4 + 2 * m + k] = c.val(p) * r1;
                }
            })
        };
        Self {
            signs: frame.signs.clone(),
            u: pack(Axis::U),
            v: pack(Axis::V),
        }
    }

    fn field(&self, axis: Axis) -> &Field {
        match axis {
            Axis::U => &self.u,
            Axis::V => &self.v,
        }
    }
}

/// Derivative of one ambient row `(Y, Y_w, Y_w̄, N, ψ_α)` of the frame.
fn frame_rhs(m: usize, signs: &[f64], c: &[Complex64], r: &[Complex64], out: &mut [Complex64]) {
    let (a, b, s, g) = (c[0], c[1], c[2], c[3]);
    let k = &c[4..4 + m];
    let dk = &c[4 + m..4 + 2 * m];
    let conn = &c[4 + 2 * m..];
    let psi = &r[4..];
    let mut kw = ZERO;
    let mut kwb = ZERO;
    let mut dw = ZERO;
    let mut dwb = ZERO;
    for al in 0..m {
        kw += k[al] * psi[al];
        kwb += k[al].conj() * psi[al];
        dw += dk[al] * psi[al];
        dwb += dk[al].conj() * psi[al];
    }
    out[0] = a * r[1] + b * r[2];
    out[1] = a * (-s * 0.5 * r[0] + kw) + b * (-g * r[0] + r[3] * 0.5);
    out[2] = a * (-g * r[0] + r[3] * 0.5) + b * (-s.conj() * 0.5 * r[0] + kwb);
    out[3] = a * (-g * 2.0 * r[1] - s * r[2] + dw * 2.0) + b * (-g * 2.0 * r[2] - s.conj() * r[1] + dwb * 2.0);
    for al in 0..m {
        let e = signs[al];
        let mut tw = (dk[al] * r[0] * 2.0 - k[al] * r[2] * 2.0) * e;
        let mut twb = (dk[al].conj() * r[0] * 2.0 - k[al].conj() * r[1] * 2.0) * e;
        for be in 0..m {
            tw += conn[al * m + be] * psi[be];
            twb += conn[al * m + be].conj() * psi[be];
        }
        out[4 + al] = a * tw + b * twb;
    }
}

/// Frame slots `(Y, Y_w, Y_w̄, N, ψ_α)` of a conformal frame.
fn frame_slots(frame: &ConformalFrame) -> Vec<Field> {
    let r1 = Complex64::from_polar(1.0, -frame.phase);
    let mut slots = vec![frame.y.clone(), frame.y_z.scale(r1), frame.y_zb.scale(r1.conj()), frame.n.clone()];
    slots.extend(frame.normal_basis.iter().cloned());
    slots
}

/// Residuals of a spectral transform, all relative to the frame size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralResiduals {
    /// Mixed-derivative defect of the marched frame across `u`-lines.
    pub compat: f64,
    /// Loop closure of the marched frame (decides open or closed output).
    pub closure: f64,
    /// `|s^out - s - c̃|` in the adapted coordinate.
    pub schwarzian: f64,
    /// `|<κ,κ̄>^out - <κ,κ̄>|`.
    pub kappa_norm: f64,
    /// `|Im κ^out|` in the adapted coordinate.
    pub isothermic: f64,
    /// Variation of `F_out F^{-1}` over the grid; zero exactly when the
    /// deformed and parent frames differ by a constant motion.
    pub congruence: f64,
}

impl SpectralResiduals {
    /// The checks that must vanish for any `c̃`.
    pub fn max(&self) -> f64 {
        self.compat.max(self.schwarzian).max(self.kappa_norm).max(self.isothermic)
    }
}

#[derive(Debug, Clone)]
pub struct SpectralTransform {
    pub c_tilde: f64,
    /// Whether the deformed frame closes up on the parent's periods.
    pub closed: bool,
    /// Deformed lift `Y^c̃`.
    pub y_out: Field,
    /// Deformed parallel sections `ψ_α^c̃`.
    pub normal_basis: Vec<Field>,
    /// Canonical frame and invariants of `Y^c̃`, recomputed from scratch.
    pub frame: ConformalFrame,
    pub inv: ConformalInvariants,
    pub residuals: SpectralResiduals,
}

/// Integrate the structure equations with `s` replaced by `s + c̃`.
/// `gauge` applies a constant linear map to the initial frame.
pub fn spectral_transform(
    frame: &ConformalFrame,
    inv: &ConformalInvariants,
    c_tilde: f64,
    gauge: Option<&DMatrix<f64>>,
    tol: &Tolerances,
) -> Result<SpectralTransform> {
    if !c_tilde.is_finite() {
        return Err(Error::Parameter(format!("c̃ = {c_tilde}")));
    }
    let spec = *frame.y.spec();
    let sig = frame.y.sig();
    let n = sig.dim();
    let m = frame.rank();
    let d = 4 + m;
    let st = Structure::new(frame, inv, c_tilde);
    let slots = frame_slots(frame);
    let b = spec.base_index();
    let mut start: Vec<Vec<Complex64>> = slots.iter().map(|f| f.at(b).to_vec()).collect();
    if let Some(t) = gauge {
        if t.nrows() != n || t.ncols() != n {
            return Err(Error::Dimension { expected: n, got: t.nrows() });
        }
        for v in start.iter_mut() {
            let w: Vec<Complex64> = (0..n).map(|i| (0..n).map(|j| v[j] * t[(i, j)]).sum()).collect();
            *v = w;
        }
    }
    let rows: Vec<Vec<Complex64>> = (0..n).map(|j| start.iter().map(|v| v[j]).collect()).collect();
    let signs = st.signs.clone();
    let tr = transport_sections_from(Axis::V, Signature::euclidean(d), &rows, &st.u, &st.v, [false; 2], |c, r, o| {
        frame_rhs(m, &signs, c, r, o)
    })?;
    let scale = (0..spec.len()).map(|p| tr.fields.iter().map(|f| sup_at(f, p)).fold(0.0, f64::max)).fold(1.0, f64::max);
    let closure = tr.holonomy / scale;
    let closed = closure <= tol.holonomy_tol;
    let out_spec = if closed { spec } else { open_spec(&spec) };
    let slot = |k: usize| {
        Field::build(out_spec, sig, |p, o| {
            for (j, oj) in o.iter_mut().enumerate() {
                *oj = tr.fields[j].at(p)[k];
            }
        })
    };
    let y_out = slot(0).real_part();
    let normal_basis: Vec<Field> = (0..m).map(|a| slot(4 + a).real_part()).collect();

    // Every ambient row satisfies the `v` equations only up to the
    // marching error; measure it on the assembled frame.
    let packed = Field::build(out_spec, Signature::euclidean(n * d), |p, o| {
        for j in 0..n {
            o[j * d..(j + 1) * d].copy_from_slice(tr.fields[j].at(p));
        }
    });
    let cv = st.field(Axis::V);
    let compat = compatibility_residual(&packed, Axis::V, |p, x, o| {
        for j in 0..n {
            frame_rhs(m, &st.signs, cv.at(p), &x[j * d..(j + 1) * d], &mut o[j * d..(j + 1) * d]);
        }
    }) / scale;
    if compat > tol.compat_tol {
        return Err(Error::Incompatible { residual: compat, tol: tol.compat_tol });
    }

    let out_frame = canonical_lift(&y_out, None, tol)?.with_phase(frame.phase);
    let out_inv = conformal_invariants(&out_frame);
    let pts = out_frame.points();
    let r2 = Complex64::from_polar(1.0, -2.0 * frame.phase);
    let mut schwarzian: f64 = 0.0;
    let mut kappa_norm: f64 = 0.0;
    for &p in &pts {
        if !frame.mask[p] {
            continue;
        }
        let ds = (out_inv.s.val(p) - inv.s.val(p)) * r2 - c_tilde;
        schwarzian = schwarzian.max(ds.norm());
        kappa_norm = kappa_norm.max((out_inv.g.val(p) - inv.g.val(p)).norm());
    }
    let isothermic = out_inv.imaginary_defect(&out_frame);

    // `T = F_out F^{-1}` is constant exactly when the two frames differ
    // by a fixed linear motion.
    let motion = |p: usize| -> Option<DMatrix<Complex64>> {
        let f = DMatrix::from_fn(n, d, |j, k| slots[k].at(p)[j]);
        let g = DMatrix::from_fn(n, d, |j, k| tr.fields[j].at(p)[k]);
        f.try_inverse().map(|fi| g * fi)
    };
    let t0 = motion(b).ok_or(Error::DegenerateFrame { index: b, norm: 0.0 })?;
    let congruence = (0..spec.len())
        .map(|p| motion(p).map_or(f64::INFINITY, |t| cmax(&(t - &t0))))
        .fold(0.0, f64::max)
        / cmax(&t0);

    Ok(SpectralTransform {
        c_tilde,
        closed,
        y_out,
        normal_basis,
        frame: out_frame,
        inv: out_inv,
        residuals: SpectralResiduals {
            compat,
            closure,
            schwarzian,
            kappa_norm,
            isothermic,
            congruence,
        },
    })
}

/// Residuals of the spectral permutability diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralDiagram {
    pub c_tilde: f64,
    /// Spectral leg `Y -> Y^c̃` (see [`SpectralResiduals::max`]).
    pub transform: f64,
    /// Largest polar identity residual of `ψ^c̃` over `Y^c̃`.
    pub polar: f64,
    /// `|<κ^c̃,ψ^c̃> - <κ,ψ>|`.
    pub pairing: f64,
    /// `|s^{ψ^c̃} - s^ψ - c̃|` in the adapted coordinate.
    pub schwarzian: f64,
}

impl SpectralDiagram {
    pub fn composite(&self) -> f64 {
        self.transform.max(self.polar).max(self.pairing).max(self.schwarzian)
    }
}

/// Basis coordinates `ε_α <w, ψ_α>` of a normal vector at the base node.
fn base_coords(frame: &ConformalFrame, w: &[Complex64]) -> Vec<f64> {
    let sig = frame.y.sig();
    let b = frame.y.spec().base_index();
    frame
        .normal_basis
        .iter()
        .zip(&frame.signs)
        .map(|(f, &e)| sig.dot(w, f.at(b)).re * e)
        .collect()
}

/// Polar surface of `frame` with the given section, masked like `ps`.
fn carried<'a>(
    frame: &'a ConformalFrame,
    inv: &'a ConformalInvariants,
    psi: Field,
    ps: &PolarSurface,
    tol: &Tolerances,
) -> PolarSurface<'a> {
    let b = frame.y.spec().base_index();
    let coords = base_coords(frame, psi.at(b));
    let shell = PolarSurface {
        frame,
        inv,
        psi: psi.clone(),
        c: ps.c,
        target: ps.target,
        coords,
        twist: [0.0; 2],
        mask: Vec::new(),
    };
    shell.with_psi(psi, tol)
}

fn untwisted(ps: &PolarSurface) -> Result<()> {
    if ps.twist != [0.0; 2] {
        return Err(Error::Parameter(
            "polar section is only projectively periodic; diagrams need an untwisted section".into(),
        ));
    }
    Ok(())
}

/// Carry `ψ` along the spectral deformation and check both legs of the
/// square `Y -> Y^c̃`, `ψ -> ψ^c̃`.
pub fn permute_spectral(
    frame: &ConformalFrame,
    inv: &ConformalInvariants,
    ps: &PolarSurface,
    st: &SpectralTransform,
    tol: &Tolerances,
) -> Result<SpectralDiagram> {
    untwisted(ps)?;
    let out_spec = *st.y_out.spec();
    let sig = st.y_out.sig();
    let psi_c = Field::build(out_spec, sig, |p, o| {
        for (a, f) in ps.coords.iter().zip(&st.normal_basis) {
            for (oi, fi) in o.iter_mut().zip(f.at(p)) {
                *oi += fi * a;
            }
        }
    });
    let ps_c = carried(&st.frame, &st.inv, psi_c, ps, tol);
    if ps_c.points().is_empty() {
        return Err(Error::EmptyMask);
    }
    let polar = verify_polar(&ps_c).max();
    let pk = ps.psi_kappa();
    let pk_c = ps_c.psi_kappa();
    let (_, inv_psi) = polar_pipeline(ps, tol)?;
    let (fr_c, inv_c) = polar_pipeline(&ps_c, tol)?;
    let r2 = Complex64::from_polar(1.0, -2.0 * frame.phase);
    let mut pairing: f64 = 0.0;
    let mut schwarzian: f64 = 0.0;
    for p in fr_c.points() {
        if !(ps.mask[p] && ps_c.mask[p]) {
            continue;
        }
        pairing = pairing.max((pk_c.val(p) - pk.val(p)).norm());
        let ds = (inv_c.s.val(p) - inv_psi.s.val(p)) * r2 - st.c_tilde;
        schwarzian = schwarzian.max(ds.norm());
    }
    let _ = inv;
    Ok(SpectralDiagram {
        c_tilde: st.c_tilde,
        transform: st.residuals.max(),
        polar,
        pairing,
        schwarzian,
    })
}

/// A `D^θ` Darboux transform in the ansatz
/// `Y* = N + μ̄ Y_w + μ Y_w̄ + ½(|μ|² + <ξ,ξ>) Y + ξ`, so that `<Y,Y*> = -1`
/// and `Y*` is null.
#[derive(Debug, Clone)]
pub struct DarbouxTransform {
    pub theta: f64,
    pub closed: bool,
    pub mu: Field,
    pub xi: Field,
    pub y_star: Field,
    /// `P = Y_w + (μ/2) Y`.
    pub p: Field,
    /// Mixed-derivative defect of the marched `(μ, ξ)` across `u`-lines.
    pub compat: f64,
    /// Canonical frame and invariants of `Y*`, recomputed from scratch.
    pub frame: ConformalFrame,
    pub inv: ConformalInvariants,
}

/// `(∂_w, ∂_w̄)` of the state `(μ, x^α)` with `ξ = Σ x^α ψ_α`.
fn riccati_rhs(m: usize, signs: &[f64], theta: f64, c: &[Complex64], y: &[Complex64], out: &mut [Complex64]) {
    let (a, b, s, g) = (c[0], c[1], c[2], c[3]);
    let k = &c[4..4 + m];
    let dk = &c[4 + m..4 + 2 * m];
    let conn = &c[4 + 2 * m..];
    let mu = y[0];
    let x = &y[1..];
    let mut xk = ZERO;
    let mut xx = ZERO;
    for al in 0..m {
        xk += x[al] * k[al] * signs[al];
        xx += x[al] * x[al] * signs[al];
    }
    let mu_w = re(theta) + s + xk * 2.0 + mu * mu * 0.5;
    let mu_wb = g * 2.0 - xx * 0.5;
    out[0] = a * mu_w + b * mu_wb;
    for be in 0..m {
        let mut xw = mu * 0.5 * x[be] - mu.conj() * k[be] - dk[be] * 2.0;
        let mut xwb = mu.conj() * 0.5 * x[be] - mu * k[be].conj() - dk[be].conj() * 2.0;
        for al in 0..m {
            xw -= x[al] * conn[al * m + be];
            xwb -= x[al] * conn[al * m + be].conj();
        }
        out[1 + be] = a * xw + b * xwb;
    }
}

/// March `(μ, ξ)` from `(μ_0, ξ_0)` at the base node and assemble `Y*`.
/// `xi0` is an ambient vector in `V^⊥` at the base node.
pub fn darboux_construct(
    frame: &ConformalFrame,
    inv: &ConformalInvariants,
    theta: f64,
    mu0: Complex64,
    xi0: &[f64],
    tol: &Tolerances,
) -> Result<DarbouxTransform> {
    if theta == 0.0 || !theta.is_finite() {
        return Err(Error::Parameter(format!("Darboux parameter must be a non-zero real, got {theta}")));
    }
    let spec = *frame.y.spec();
    let sig = frame.y.sig();
    let n = sig.dim();
    let m = frame.rank();
    if xi0.len() != n {
        return Err(Error::Dimension { expected: n, got: xi0.len() });
    }
    let b = spec.base_index();
    let xc: Vec<Complex64> = xi0.iter().map(|&v| re(v)).collect();
    let x0 = base_coords(frame, &xc);
    let size = xi0.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let defect = (0..n)
        .map(|i| (x0.iter().zip(&frame.normal_basis).map(|(a, f)| a * f.at(b)[i].re).sum::<f64>() - xi0[i]).abs())
        .fold(0.0, f64::max);
    if defect > 1e-6 * size.max(1.0) {
        return Err(Error::Seed(format!("ξ0 is not in V^perp at the base point (defect {defect:.3e})")));
    }
    let st = Structure::new(frame, inv, 0.0);
    let mut y0 = vec![mu0];
    y0.extend(x0.iter().map(|&v| re(v)));
    let signs = st.signs.clone();
    let tr = transport_sections_from(Axis::V, Signature::euclidean(1 + m), &[y0], &st.u, &st.v, [false; 2], |c, y, o| {
        riccati_rhs(m, &signs, theta, c, y, o)
    })?;
    let state = &tr.fields[0];
    let scale = (0..spec.len()).map(|p| sup_at(state, p)).fold(1.0, f64::max);
    let closed = tr.holonomy / scale <= tol.holonomy_tol;
    let out_spec = if closed { spec } else { open_spec(&spec) };
    let state = rewrap(state, out_spec);
    let cv = st.field(Axis::V);
    let compat = compatibility_residual(&state, Axis::V, |p, y, o| riccati_rhs(m, &st.signs, theta, cv.at(p), y, o)) / scale;
    if compat > tol.compat_tol {
        return Err(Error::Incompatible { residual: compat, tol: tol.compat_tol });
    }
    let mu = state.component(0);
    let slots: Vec<Field> = frame_slots(frame).iter().map(|f| rewrap(f, out_spec)).collect();
    let xi = Field::build(out_spec, sig, |p, o| {
        for al in 0..m {
            let x = state.at(p)[1 + al].re;
            for (oi, fi) in o.iter_mut().zip(slots[4 + al].at(p)) {
                *oi += fi * x;
            }
        }
    });
    let y_star = Field::build(out_spec, sig, |p, o| {
        let mu = mu.val(p);
        let xx = sig.dot(xi.at(p), xi.at(p));
        let lam = (mu.norm_sqr() + xx) * 0.5;
        for i in 0..n {
            o[i] = (slots[3].at(p)[i] + mu.conj() * slots[1].at(p)[i] + mu * slots[2].at(p)[i] + lam * slots[0].at(p)[i]
                + xi.at(p)[i])
                .re
                .into();
        }
    });
    let p_field = Field::build(out_spec, sig, |p, o| {
        let h = mu.val(p) * 0.5;
        for i in 0..n {
            o[i] = slots[1].at(p)[i] + h * slots[0].at(p)[i];
        }
    });
    let star_frame = canonical_lift(&y_star, None, tol)?.with_phase(frame.phase);
    let star_inv = conformal_invariants(&star_frame);
    Ok(DarbouxTransform {
        theta,
        closed,
        mu,
        xi,
        y_star,
        p: p_field,
        compat,
        frame: star_frame,
        inv: star_inv,
    })
}

/// Residuals of a Darboux transform; all but `theta_mean` should vanish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DarbouxResiduals {
    /// `|<Y,Y*> + 1|`.
    pub normalization: f64,
    /// `|<Y*,Y*>| / |Y*|²`.
    pub null: f64,
    /// Distance of `Y*_w` from `Span{Y*, Y, Y_w̄}`, relative.
    pub span: f64,
    /// `|Y*_w - (μ/2) Y* - θ P̄|`, relative.
    pub structure: f64,
    /// `P_w` and `P̄_w` against their frame expansions, relative.
    pub frame_identities: f64,
    /// Mean and spread of `μ_w - s - μ²/2 - 2<κ,ξ>`.
    pub theta_mean: f64,
    pub theta_std: f64,
    /// `|θ_mean - θ| / |θ|`.
    pub theta_bias: f64,
    /// Largest imaginary part of the recovered `θ`.
    pub theta_imag: f64,
    /// `Span{Y,Y*,dY}` against `Span{Y,Y*,dY*}`.
    pub congruence: f64,
    /// `|<Y*_w,Y*_w>| / <Y*_w,Y*_w̄>`: `w` is conformal for `Y*`.
    pub conformal: f64,
    /// `|Im κ*|` in the adapted coordinate.
    pub isothermic: f64,
}

impl DarbouxResiduals {
    pub fn max(&self) -> f64 {
        [
            self.normalization,
            self.null,
            self.span,
            self.structure,
            self.frame_identities,
            self.theta_std,
            self.theta_imag,
            self.theta_bias,
            self.congruence,
            self.conformal,
            self.isothermic,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Relative distance of `target` from the span of `basis`.
fn span_residual(target: &[Complex64], basis: &[&[Complex64]]) -> f64 {
    let size = target.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if size == 0.0 {
        return 0.0;
    }
    match solve_coords(target, basis.iter().copied(), f64::INFINITY) {
        Ok(sol) => sol.residual / size,
        Err(_) => 1.0,
    }
}

fn combo(terms: &[(Complex64, &[Complex64])], out: &mut [Complex64]) {
    out.iter_mut().for_each(|o| *o = ZERO);
    for (k, v) in terms {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += k * x;
        }
    }
}

fn rel(a: &[Complex64], b: &[Complex64], size: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / size.max(f64::MIN_POSITIVE)
}

pub fn darboux_verify(frame: &ConformalFrame, inv: &ConformalInvariants, dt: &DarbouxTransform) -> DarbouxResiduals {
    let spec = *dt.y_star.spec();
    let sig = dt.y_star.sig();
    let n = sig.dim();
    let phase = frame.phase;
    let r2 = Complex64::from_polar(1.0, -2.0 * phase);
    let slots: Vec<Field> = frame_slots(frame).iter().map(|f| rewrap(f, spec)).collect();
    let kappa = rewrap(&inv.kappa, spec).scale(r2);
    let s_w = rewrap(&inv.s, spec).scale(r2);
    let y = &slots[0];
    let ys = &dt.y_star;
    let ys_w = d_w(ys, phase);
    let ys_u = ys.d_u();
    let ys_v = ys.d_v();
    let mu_w = d_w(&dt.mu, phase);
    let p_w = d_w(&dt.p, phase);
    let pb = dt.p.conj();
    let pb_w = d_w(&pb, phase);
    let pts: Vec<usize> = spec.interior().into_iter().filter(|&p| frame.mask[p]).collect();
    let star_size = sup_over(ys, &pts);
    let mut r = DarbouxResiduals {
        normalization: 0.0,
        null: 0.0,
        span: 0.0,
        structure: 0.0,
        frame_identities: 0.0,
        theta_mean: 0.0,
        theta_std: 0.0,
        theta_bias: 0.0,
        theta_imag: 0.0,
        congruence: 0.0,
        conformal: 0.0,
        isothermic: dt.inv.imaginary_defect(&dt.frame),
    };
    let mut thetas = Vec::with_capacity(pts.len());
    let mut buf = vec![ZERO; n];
    for &p in &pts {
        let (yp, ysp) = (y.at(p), ys.at(p));
        let mu = dt.mu.val(p);
        let xi = dt.xi.at(p);
        r.normalization = r.normalization.max((sig.dot(yp, ysp) + 1.0).norm());
        r.null = r.null.max(sig.dot(ysp, ysp).norm() / star_size.powi(2));
        let w_size = sup_at(&ys_w, p);
        r.span = r.span.max(span_residual(ys_w.at(p), &[ysp, yp, slots[2].at(p)]));
        combo(&[(mu * 0.5, ysp), (re(dt.theta), pb.at(p))], &mut buf);
        r.structure = r.structure.max(rel(ys_w.at(p), &buf, w_size));

        let kx = sig.dot(kappa.at(p), xi);
        let xx = sig.dot(xi, xi);
        let th = mu_w.val(p) - s_w.val(p) - mu * mu * 0.5 - kx * 2.0;
        thetas.push(th.re);
        r.theta_imag = r.theta_imag.max(th.im.abs());

        combo(&[(mu * 0.5, dt.p.at(p)), (re(dt.theta * 0.5) + kx, yp), (re(1.0), kappa.at(p))], &mut buf);
        let fi1 = rel(p_w.at(p), &buf, sup_at(&p_w, p));
        combo(&[(-mu * 0.5, pb.at(p)), (re(0.5), ysp), (-xx * 0.5, yp), (re(-0.5), xi)], &mut buf);
        let fi2 = rel(pb_w.at(p), &buf, sup_at(&pb_w, p));
        r.frame_identities = r.frame_identities.max(fi1).max(fi2);

        let yu = slots[1].at(p).iter().zip(slots[2].at(p)).map(|(a, b)| a + b).collect::<Vec<_>>();
        let yv = slots[1].at(p).iter().zip(slots[2].at(p)).map(|(a, b)| (a - b) * I).collect::<Vec<_>>();
        let fwd = span_residual(ys_u.at(p), &[yp, ysp, &yu, &yv]).max(span_residual(ys_v.at(p), &[yp, ysp, &yu, &yv]));
        let back = span_residual(&yu, &[yp, ysp, ys_u.at(p), ys_v.at(p)])
            .max(span_residual(&yv, &[yp, ysp, ys_u.at(p), ys_v.at(p)]));
        r.congruence = r.congruence.max(fwd).max(back);

        let ww = sig.dot(ys_w.at(p), ys_w.at(p)).norm();
        let wwb = sig.dot_conj(ys_w.at(p), ys_w.at(p)).re;
        r.conformal = r.conformal.max(ww / wwb);
    }
    let k = thetas.len().max(1) as f64;
    r.theta_mean = thetas.iter().sum::<f64>() / k;
    r.theta_std = (thetas.iter().map(|t| (t - r.theta_mean).powi(2)).sum::<f64>() / k).sqrt();
    r.theta_bias = (r.theta_mean - dt.theta).abs() / dt.theta.abs();
    r
}

/// Residuals of the Darboux permutability diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DarbouxDiagram {
    pub theta: f64,
    /// `|<ψ*,Y*>|, |<ψ*,Y*_w>|, |<ψ*,Y*_ww̄>|`, relative.
    pub orthogonality: f64,
    /// `max |<ψ*,ψ*> - c|`.
    pub length: f64,
    /// `ψ*` is a parallel section of `V*^⊥` of length `c`.
    pub polar: f64,
    /// The full polar identity suite of `ψ*` over `Y*`. It differentiates
    /// `κ*` twice, so on open grids it carries more stencil error.
    pub identities: PolarResiduals,
    /// Distance of `ψ*_w` from the span of the Darboux condition, relative.
    pub span: f64,
    /// `θ` recovered from the pair `(ψ, ψ*)`.
    pub theta_recovered: f64,
    /// `max |θ_ψ - θ| / |θ|`.
    pub theta_defect: f64,
}

impl DarbouxDiagram {
    pub fn composite(&self) -> f64 {
        self.orthogonality.max(self.length).max(self.polar).max(self.span).max(self.theta_defect)
    }
}

/// Form `ψ* = ψ + <ψ,ξ> Y + (2<ψ,κ>/θ) Y*` and check that it is a c-polar
/// transform of `Y*` and a `D^θ` transform of `ψ`.
pub fn permute_darboux(
    frame: &ConformalFrame,
    inv: &ConformalInvariants,
    ps: &PolarSurface,
    dt: &DarbouxTransform,
    tol: &Tolerances,
) -> Result<DarbouxDiagram> {
    untwisted(ps)?;
    let spec = *dt.y_star.spec();
    let sig = dt.y_star.sig();
    let phase = frame.phase;
    let r2 = Complex64::from_polar(1.0, -2.0 * phase);
    let y = rewrap(&frame.y, spec);
    let psi = rewrap(&ps.psi, spec);
    let pk = rewrap(&ps.psi_kappa(), spec).scale(r2);
    let ys = &dt.y_star;
    let psi_star = Field::build(spec, sig, |p, o| {
        let a = sig.dot(psi.at(p), dt.xi.at(p));
        let k = pk.val(p) * (-2.0 / dt.theta);
        for (i, oi) in o.iter_mut().enumerate() {
            *oi = (psi.at(p)[i] + a * y.at(p)[i] - k * ys.at(p)[i]).re.into();
        }
    });
    let ys_w = d_w(ys, phase);
    let ys_wwb = ys.d_z().d_zbar();
    let psi_w = d_w(&psi, phase);
    let psi_wb = psi_w.conj();
    let star_w = d_w(&psi_star, phase);
    let c = ps.c;
    let pts: Vec<usize> = spec.interior().into_iter().filter(|&p| ps.mask[p] && frame.mask[p]).collect();
    if pts.is_empty() {
        return Err(Error::EmptyMask);
    }
    let ps_size = sup_over(&psi_star, &pts).max(f64::MIN_POSITIVE);
    let (mut orthogonality, mut length, mut span, mut theta_defect) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut theta_sum = 0.0;
    for &p in &pts {
        let v = psi_star.at(p);
        for f in [ys, &ys_w, &ys_wwb] {
            let o = sig.dot(v, f.at(p)).norm() / (ps_size * sup_at(f, p).max(f64::MIN_POSITIVE));
            orthogonality = orthogonality.max(o);
        }
        length = length.max((sig.dot(v, v).re - c).abs());
        // ψ*_w = a ψ* + b ψ + d ψ_w̄, with b = -a when c ≠ 0 (the lifts of
        // ψ, ψ* to the light cone share their last coordinate).
        let diff: Vec<Complex64> = v.iter().zip(psi.at(p)).map(|(a, b)| a - b).collect();
        let target = star_w.at(p);
        let sol = if c != 0.0 {
            solve_coords(target, [diff.as_slice(), psi_wb.at(p)], f64::INFINITY)
        } else {
            solve_coords(target, [v, psi.at(p), psi_wb.at(p)], f64::INFINITY)
        };
        let Ok(sol) = sol else {
            span = span.max(1.0);
            continue;
        };
        span = span.max(sol.residual / sup_at(&star_w, p).max(f64::MIN_POSITIVE));
        let d = *sol.coefficients.last().expect("non-empty basis");
        let ww = sig.dot(psi_w.at(p), psi_wb.at(p));
        let th = -d * ww * 2.0 / (sig.dot(psi.at(p), v) - c);
        theta_sum += th.re;
        theta_defect = theta_defect.max((th - dt.theta).norm() / dt.theta.abs());
    }
    let ps_star = carried(&dt.frame, &dt.inv, psi_star, ps, tol);
    let pr = verify_polar(&ps_star);
    let _ = inv;
    Ok(DarbouxDiagram {
        theta: dt.theta,
        orthogonality,
        length,
        polar: pr.parallel.max(pr.length).max(pr.condition_i).max(pr.span),
        identities: pr,
        span,
        theta_recovered: theta_sum / pts.len() as f64,
        theta_defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::lift_catalog;
    use crate::polar::{from_coords, polar_transform, product_polar_seed, sphere_section_coords};
    use crate::pseudolinalg::random_isometry;
    use crate::surfaces::{clifford_torus, product_surface, Curve, SurfaceDef};
    use std::sync::OnceLock;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn lift(def: &SurfaceDef, n: usize) -> (ConformalFrame, ConformalInvariants) {
        lift_catalog(def, &def.grid(n, n).unwrap(), &tol()).unwrap()
    }

    fn ellipse_product() -> SurfaceDef {
        product_surface(Curve::circle(1.0).unwrap(), Curve::ellipse(1.0, 0.9).unwrap()).unwrap()
    }

    fn clifford(n: usize) -> &'static (ConformalFrame, ConformalInvariants) {
        static C64: OnceLock<(ConformalFrame, ConformalInvariants)> = OnceLock::new();
        static C128: OnceLock<(ConformalFrame, ConformalInvariants)> = OnceLock::new();
        let cell = if n == 64 { &C64 } else { &C128 };
        cell.get_or_init(|| lift(&clifford_torus(), n))
    }

    /// `θ` and `ξ_0` for `μ_0 = 1`: the constant transform `ξ = 2κ` when
    /// `eps = 0`, a genuinely varying one otherwise.
    fn darboux_data(frame: &ConformalFrame, inv: &ConformalInvariants, eps: f64) -> (f64, Vec<f64>) {
        let b = frame.y.spec().base_index();
        let theta = -inv.s.val(b).re - 4.0 * inv.g.val(b).re - 0.5;
        let xi0 = (0..frame.y.sig().dim())
            .map(|i| 2.0 * inv.kappa.at(b)[i].re + eps * frame.normal_basis[1].at(b)[i].re)
            .collect();
        (theta, xi0)
    }

    fn darboux(n: usize, eps: f64) -> DarbouxTransform {
        let (frame, inv) = clifford(n);
        let (theta, xi0) = darboux_data(frame, inv, eps);
        darboux_construct(frame, inv, theta, re(1.0), &xi0, &tol()).unwrap()
    }

    #[test]
    fn zero_deformation_is_a_motion() {
        let (frame, inv) = clifford(64);
        let st = spectral_transform(frame, inv, 0.0, None, &tol()).unwrap();
        assert!(st.closed);
        assert!(st.residuals.congruence < 1e-6, "{:?}", st.residuals);
        assert!(st.residuals.max() < 1e-6, "{:?}", st.residuals);
        let t = random_isometry(frame.y.sig(), 0.3, 11);
        let moved = spectral_transform(frame, inv, 0.0, Some(&t), &tol()).unwrap();
        assert!(moved.residuals.congruence < 1e-6, "{:?}", moved.residuals);
        let b = frame.y.spec().base_index();
        let want: Vec<f64> = (0..6).map(|i| (0..6).map(|j| t[(i, j)] * frame.y.at(b)[j].re).sum()).collect();
        let got = moved.y_out.real_at(b);
        assert!(want.iter().zip(&got).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn clifford_schwarzian_shift() {
        let (frame, inv) = clifford(64);
        let st = spectral_transform(frame, inv, 0.5, None, &tol()).unwrap();
        assert!(!st.closed);
        let r = st.residuals;
        assert!(r.schwarzian < 2e-5 && r.kappa_norm < 2e-5, "{r:?}");
        assert!(r.isothermic < 1e-5, "{r:?}");
        assert!(r.congruence > 0.1, "{r:?}");
        assert!(matches!(spectral_transform(frame, inv, f64::NAN, None, &tol()), Err(Error::Parameter(_))));
    }

    #[test]
    fn compatibility_converges() {
        let def = ellipse_product();
        let loose = Tolerances { compat_tol: 1.0, ..tol() };
        let res: Vec<f64> = [32, 64]
            .iter()
            .map(|&n| {
                let (frame, inv) = lift(&def, n);
                spectral_transform(&frame, &inv, 0.3, None, &loose).unwrap().residuals.compat
            })
            .collect();
        assert!(res[0] / res[1] >= 4.0, "{res:?}");
    }

    #[test]
    fn spectral_square_clifford() {
        let (frame, inv) = clifford(64);
        let ps = from_coords(frame, inv, sphere_section_coords(frame).unwrap(), 1.0, &tol()).unwrap();
        for ct in [0.0, 0.3] {
            let st = spectral_transform(frame, inv, ct, None, &tol()).unwrap();
            let dg = permute_spectral(frame, inv, &ps, &st, &tol()).unwrap();
            assert!(dg.schwarzian < 5e-5, "{dg:?}");
            assert!(dg.composite() < 1e-4, "{dg:?}");
        }
    }

    #[test]
    fn spectral_square_product() {
        let def = ellipse_product();
        let (frame, inv) = lift(&def, 128);
        let seed = product_polar_seed(&def, &frame, 0.3).unwrap();
        let ps = polar_transform(&frame, &inv, &seed, 1.0, &tol()).unwrap();
        let st = spectral_transform(&frame, &inv, 0.2, None, &tol()).unwrap();
        let dg = permute_spectral(&frame, &inv, &ps, &st, &tol()).unwrap();
        assert!(dg.schwarzian < 5e-5, "{dg:?}");
        assert!(dg.composite() < 1e-4, "{dg:?}");
    }

    #[test]
    fn constant_darboux_transform_closes() {
        let (frame, inv) = clifford(64);
        let dt = darboux(64, 0.0);
        assert!(dt.closed);
        let r = darboux_verify(frame, inv, &dt);
        assert!(r.max() < 1e-6, "{r:?}");
    }

    #[test]
    fn varying_darboux_transform() {
        let (frame, inv) = clifford(128);
        let dt = darboux(128, 0.05);
        assert!(!dt.closed);
        let pts = dt.y_star.spec().interior();
        let (lo, hi) = pts.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &p| {
            let m = dt.mu.val(p).norm();
            (lo.min(m), hi.max(m))
        });
        assert!(hi - lo > 0.5, "μ barely moves: [{lo}, {hi}]");
        let r = darboux_verify(frame, inv, &dt);
        assert!(r.max() < 1e-5, "{r:?}");
        assert!(r.theta_std < 1e-6 && r.theta_bias < 1e-6, "{r:?}");
        let coarse = darboux_verify(&clifford(64).0, &clifford(64).1, &darboux(64, 0.05));
        assert!(coarse.theta_std / r.theta_std >= 4.0, "{} vs {}", coarse.theta_std, r.theta_std);
    }

    #[test]
    fn darboux_defects_are_flagged() {
        let (frame, inv) = clifford(64);
        let dt = darboux(64, 0.0);
        let mut same = dt.clone();
        same.y_star = frame.y.clone();
        assert!((darboux_verify(frame, inv, &same).normalization - 1.0).abs() < 1e-9);
        let mut shifted = darboux(64, 0.05);
        shifted.mu = shifted.mu.map(shifted.mu.sig(), |_, v, o| o[0] = v[0] + 1e-3);
        let std = darboux_verify(frame, inv, &shifted).theta_std;
        assert!(std > 1e-4 && std < 1e-2, "{std}");
        let (theta, xi0) = darboux_data(frame, inv, 0.0);
        assert!(matches!(darboux_construct(frame, inv, 0.0, re(1.0), &xi0, &tol()), Err(Error::Parameter(_))));
        assert!(matches!(darboux_construct(frame, inv, theta, re(1.0), &xi0[1..], &tol()), Err(Error::Dimension { .. })));
        let b = frame.y.spec().base_index();
        let off = frame.y.real_at(b);
        assert!(matches!(darboux_construct(frame, inv, theta, re(1.0), &off, &tol()), Err(Error::Seed(_))));
    }

    #[test]
    fn darboux_square() {
        let (frame, inv) = clifford(128);
        let dt = darboux(128, 0.05);
        let ps = from_coords(frame, inv, sphere_section_coords(frame).unwrap(), 1.0, &tol()).unwrap();
        let dg = permute_darboux(frame, inv, &ps, &dt, &tol()).unwrap();
        assert!(dg.length < 1e-6, "{dg:?}");
        assert!((dg.theta_recovered - dt.theta).abs() < 1e-5, "{dg:?}");
        assert!(dg.composite() < 1e-4, "{dg:?}");
    }
}
