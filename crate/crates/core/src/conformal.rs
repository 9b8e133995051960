//! Light-cone model: a space-form surface `x` becomes the null map
//! `X = ((1-<x,x>)/2, x, (1+<x,x>)/2)`, normalized to the canonical lift
//! `Y` with `|dY|^2 = |dz|^2`, together with `N`, the bundle `V^⊥` and the
//! invariants `κ`, `s`, `<κ,κ̄>`.
//!
//! Coordinates are stored positives first, so the two extra light-cone
//! coordinates sit after the positive and negative blocks of `x`:
//! `[x_+, (1-<x,x>)/2, x_-, (1+<x,x>)/2]`. For `c = ±1` the vanishing
//! coordinate is dropped.
//!
//! Frame conventions: `Y_zz = -(s/2)Y + κ`, `Y_zz̄ = -<κ,κ̄>Y + N/2`,
//! `<N,Y> = -1`, `<N,N> = <N,Y_z> = 0`.

use nalgebra::{DMatrix, Matrix4};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gridcalc::{integrate_over, transport_sections, Axis, Field, Form, GridSpec, Transported};
use crate::isometric::{Gcr, IsometricInvariants};
use crate::pseudolinalg::{complete_frame_scaled, Signature};
use crate::surfaces::SurfaceDef;
use crate::tolerances::Tolerances;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Light-cone signature and output dimension for a space form of curvature `c`.
fn cone_sig(sig: Signature, c: f64) -> Result<Signature> {
    if c == 0.0 {
        Ok(sig.lightcone())
    } else if c == 1.0 {
        Signature::new(sig.positive, sig.negative + 1)
    } else if c == -1.0 {
        if sig.negative == 0 {
            return Err(Error::Signature {
                positive: sig.positive,
                negative: sig.negative,
            });
        }
        Signature::new(sig.positive + 1, sig.negative)
    } else {
        Err(Error::Parameter(format!("space-form curvature must be 0 or ±1, got {c}")))
    }
}

/// Writes `[a_+, first, a_-, last]` with the dropped slot skipped for `c ≠ 0`.
fn place<T: Copy>(sig: Signature, c: f64, a: &[T], first: T, last: T, out: &mut [T]) {
    let p = sig.positive;
    let mut k = 0;
    for &v in &a[..p] {
        out[k] = v;
        k += 1;
    }
    if c != 1.0 {
        out[k] = first;
        k += 1;
    }
    for &v in &a[p..] {
        out[k] = v;
        k += 1;
    }
    if c != -1.0 {
        out[k] = last;
    }
}

/// Null image of a point of `N^n_r(c)`.
pub fn embed_point(sig: Signature, c: f64, x: &[f64]) -> Result<Vec<f64>> {
    let cs = cone_sig(sig, c)?;
    let a = sig.dot(x, x);
    let mut out = vec![0.0; cs.dim()];
    place(sig, c, x, 0.5 * (1.0 - a), 0.5 * (1.0 + a), &mut out);
    Ok(out)
}

/// Differential of the embedding: `L_x(v) = (-<x,v>, v, <x,v>)`.
pub fn embed_vector(sig: Signature, c: f64, x: &[Complex64], v: &[Complex64], out: &mut [Complex64]) {
    let xv = sig.dot(x, v);
    place(sig, c, v, -xv, xv, out);
}

/// Embed a sampled surface of `N^n_r(c)` into the light cone.
pub fn embed(x: &Field, c: f64, tol: &Tolerances) -> Result<Field> {
    let sig = x.sig();
    let cs = cone_sig(sig, c)?;
    let spec = *x.spec();
    if c != 0.0 {
        let dev = (0..spec.len())
            .map(|p| (sig.dot(x.at(p), x.at(p)).re - 1.0 / c).abs())
            .fold(0.0, f64::max);
        if dev > tol.quadric_tol {
            return Err(Error::Embedding {
                expected: 1.0 / c,
                deviation: dev,
            });
        }
    }
    Ok(Field::build(spec, cs, |p, o| {
        let xr = x.real_at(p);
        let e = embed_point(sig, c, &xr).expect("signature checked above");
        for (oi, ei) in o.iter_mut().zip(e) {
            *oi = re(ei);
        }
    }))
}

/// Light-cone image of a catalog surface on `spec`.
pub fn catalog_light_cone(def: &SurfaceDef, spec: &GridSpec, tol: &Tolerances) -> Result<Field> {
    let x = def.sample(spec);
    match def.curvature() {
        Some(c) => embed(&x, c, tol),
        None => Ok(x),
    }
}

/// Lift a catalog surface and compute its conformal invariants, using the
/// surface's adapted phase.
pub fn lift_catalog(
    def: &SurfaceDef,
    spec: &GridSpec,
    tol: &Tolerances,
) -> Result<(ConformalFrame, ConformalInvariants)> {
    let frame = canonical_lift(&catalog_light_cone(def, spec, tol)?, None, tol)?.with_phase(def.adapted_phase());
    let inv = conformal_invariants(&frame);
    Ok((frame, inv))
}

/// Canonical lift with its moving frame and a parallel basis of `V^⊥`.
#[derive(Debug, Clone)]
pub struct ConformalFrame {
    pub y: Field,
    pub y_u: Field,
    pub y_v: Field,
    pub y_z: Field,
    pub y_zb: Field,
    pub y_zz: Field,
    pub n: Field,
    /// `e^{2ω} = 2<X_z,X_z̄>` of the input null map.
    pub e2w: Field,
    pub normal_basis: Vec<Field>,
    pub signs: Vec<f64>,
    /// `A_{αβ}` with `D_z ψ_α = Σ_β A_{αβ} ψ_β`, row-major.
    pub conn: Vec<Field>,
    /// Points where the lift is immersed (`M_0`).
    pub mask: Vec<bool>,
    pub holonomy: f64,
    /// Parallel basis after one loop from the base node along `[u, v]`.
    pub loop_ends: [Option<Vec<Vec<f64>>>; 2],
    /// Rotation `α` of the coordinate in which the surface is adapted.
    pub phase: f64,
    /// Inverse Gram matrices of `{Y, Y_u, Y_v, N}`.
    ginv: Vec<Matrix4<f64>>,
    /// Input map and scale floor, kept for further transports.
    source: Field,
    floor: f64,
}

/// Frame-level checks of a lift.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FrameDefects {
    /// `max |<Y,Y>|, |<Y_z,Y_z>|, |<Y_z,Y_z̄> - 1/2|`.
    pub lift: f64,
    /// `max |<N,N>|, |<N,Y_z>|, |<N,Y> + 1|`.
    pub gram: f64,
    /// `max |<ψ_α, {Y, Y_z, Y_zz̄}>|`.
    pub normal: f64,
}

/// Build the canonical lift of a null immersion `X`. `seed` optionally fixes
/// the basis of `V^⊥` at the grid's base node.
pub fn canonical_lift(x: &Field, seed: Option<&[Vec<f64>]>, tol: &Tolerances) -> Result<ConformalFrame> {
    let spec = *x.spec();
    let sig = x.sig();
    let d = sig.dim();
    if d < 5 {
        return Err(Error::Dimension { expected: 5, got: d });
    }
    let x = x.real_part();
    let lift_scale = |xf_u: &Field, xf_v: &Field| {
        Field::scalar(spec, |p| {
            re(0.5 * (sig.dot(xf_u.at(p), xf_u.at(p)).re + sig.dot(xf_v.at(p), xf_v.at(p)).re))
        })
    };
    let e2w = lift_scale(&x.d_u(), &x.d_v());
    let top = (0..spec.len()).map(|p| e2w.val(p).re).fold(0.0, f64::max);
    let floor = tol.imm_tol * top;
    let mask: Vec<bool> = (0..spec.len()).map(|p| e2w.val(p).re > floor).collect();
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    let normalize = |e: &Field| {
        x.map(sig, |p, v, o| {
            let k = 1.0 / e.val(p).re.max(floor).sqrt();
            for i in 0..d {
                o[i] = v[i] * k;
            }
        })
    };
    let y = normalize(&e2w);
    let y_u = y.d_u();
    let y_v = y.d_v();
    let y_z = y.d_z();
    let y_zb = y_z.conj();
    let y_zz = y_z.d_z();
    let y_zzb = y_z.d_zbar().real_part();
    let n = y_zzb.map(sig, |p, w, o| {
        let g = sig.dot(w, w).re;
        for i in 0..d {
            o[i] = 2.0 * w[i] + y.at(p)[i] * (2.0 * g);
        }
    });
    let ginv = gram_inverses(sig, [&y, &y_u, &y_v, &n])?;

    let base = spec.base_index();
    if !mask[base] {
        return Err(Error::Seed("base point is not immersed".into()));
    }
    let rank = d - 4;
    let mut frame = ConformalFrame {
        y,
        y_u,
        y_v,
        y_z,
        y_zb,
        y_zz,
        n,
        e2w,
        normal_basis: Vec::new(),
        signs: Vec::new(),
        conn: Vec::new(),
        mask,
        holonomy: 0.0,
        loop_ends: [None, None],
        phase: 0.0,
        ginv,
        source: x.clone(),
        floor,
    };
    let candidates: Vec<Vec<f64>> = match seed {
        Some(seed) => {
            for s in seed {
                if s.len() != d {
                    return Err(Error::Dimension { expected: d, got: s.len() });
                }
                let sc: Vec<Complex64> = s.iter().map(|&v| re(v)).collect();
                let r = frame.project_at(base, &sc);
                let size = s.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
                let defect = r.iter().zip(&sc).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / size;
                if defect > 1e-6 {
                    return Err(Error::Seed(format!("seed vector is not in V^perp (defect {defect:.3e})")));
                }
            }
            seed.to_vec()
        }
        None => (0..d)
            .map(|k| {
                let mut e = vec![ZERO; d];
                e[k] = re(1.0);
                frame.project_at(base, &e).iter().map(|z| z.re).collect()
            })
            .collect(),
    };
    let sizes: Vec<f64> = match seed {
        Some(_) => candidates.iter().map(|c| c.iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect(),
        None => vec![1.0; candidates.len()],
    };
    // an orthonormal seed is kept in the given order
    let (seed, signs) = match seed.and_then(|s| orthonormal_signs(sig, s, rank)) {
        Some(signs) => (candidates, signs),
        None => complete_frame_scaled(sig, &candidates, &sizes, rank, tol.null_tol)?,
    };
    let tr = transport_perp(&x, floor, &seed, [false; 2])?;
    let basis = frame.reorthonormalize(&tr.fields, &signs);
    frame.conn = connection(&frame, &basis, &signs);
    frame.normal_basis = basis;
    frame.signs = signs;
    frame.holonomy = tr.holonomy;
    frame.loop_ends = tr
        .ends
        .map(|e| e.map(|e| e.iter().map(|v| v.iter().map(|z| z.re).collect()).collect()));
    Ok(frame)
}

fn orthonormal_signs(sig: Signature, basis: &[Vec<f64>], rank: usize) -> Option<Vec<f64>> {
    if basis.len() != rank {
        return None;
    }
    let mut signs = Vec::with_capacity(rank);
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            let g = sig.dot(a, b);
            let want = if i == j { g.signum() } else { 0.0 };
            if (g - want).abs() > 1e-8 {
                return None;
            }
        }
        signs.push(sig.dot(a, a).signum());
    }
    Some(signs)
}

fn gram_inverses(sig: Signature, b: [&Field; 4]) -> Result<Vec<Matrix4<f64>>> {
    let spec = *b[0].spec();
    (0..spec.len())
        .map(|p| {
            let g = Matrix4::from_fn(|i, j| sig.dot(b[i].at(p), b[j].at(p)).re);
            g.try_inverse().ok_or(Error::DegenerateFrame { index: p, norm: 0.0 })
        })
        .collect()
}

/// Parallel transport in `V^⊥`:
/// `ψ_u = -<ψ,Y_uu>Y_u - <ψ,Y_uv>Y_v + <ψ,N_u>Y`, and likewise in `v`.
/// Coefficients come from the spectral derivative so that the marched
/// frame is limited by the line integrator rather than the stencil.
fn transport_perp(x: &Field, floor: f64, seed: &[Vec<f64>], reverse: [bool; 2]) -> Result<Transported> {
    let spec = *x.spec();
    let sig = x.sig();
    let d = sig.dim();
    let xu = x.d_fine(Axis::U);
    let xv = x.d_fine(Axis::V);
    let y = x.map(sig, |p, v, o| {
        let e = 0.5 * (sig.dot(xu.at(p), xu.at(p)).re + sig.dot(xv.at(p), xv.at(p)).re);
        let k = 1.0 / e.max(floor).sqrt();
        for i in 0..d {
            o[i] = v[i] * k;
        }
    });
    let yu = y.d_fine(Axis::U);
    let yv = y.d_fine(Axis::V);
    let yuu = yu.d_fine(Axis::U);
    let yuv = yu.d_fine(Axis::V);
    let yvv = yv.d_fine(Axis::V);
    let n = Field::build(spec, sig, |p, o| {
        let w: Vec<Complex64> = (0..d).map(|i| 0.25 * (yuu.at(p)[i] + yvv.at(p)[i])).collect();
        let g = sig.dot(&w, &w).re;
        for i in 0..d {
            o[i] = 2.0 * w[i] + y.at(p)[i] * (2.0 * g);
        }
    });
    let nu = n.d_fine(Axis::U);
    let nv = n.d_fine(Axis::V);
    let pack = |a: &Field, b: &Field, c: &Field| {
        Field::build(spec, Signature::euclidean(6 * d), |p, o| {
            for (k, f) in [a, b, c, &yu, &yv, &y].into_iter().enumerate() {
                o[k * d..(k + 1) * d].copy_from_slice(f.at(p));
            }
        })
    };
    let seed: Vec<Vec<Complex64>> = seed.iter().map(|s| s.iter().map(|&v| re(v)).collect()).collect();
    transport_sections(sig, &seed, &pack(&yuu, &yuv, &nu), &pack(&yuv, &yvv, &nv), reverse, |coef, w, out| {
        let c: Vec<&[Complex64]> = coef.chunks(d).collect();
        let ka = sig.dot(w, c[0]);
        let kb = sig.dot(w, c[1]);
        let kn = sig.dot(w, c[2]);
        for i in 0..d {
            out[i] = kn * c[5][i] - ka * c[3][i] - kb * c[4][i];
        }
    })
}

fn connection(frame: &ConformalFrame, basis: &[Field], signs: &[f64]) -> Vec<Field> {
    let spec = *frame.y.spec();
    let sig = frame.y.sig();
    let mut out = Vec::with_capacity(basis.len() * basis.len());
    for a in basis {
        let da = frame.d_z_perp(a);
        for (b, &eps) in basis.iter().zip(signs) {
            out.push(Field::scalar(spec, |p| sig.dot(da.at(p), b.at(p)) * eps));
        }
    }
    out
}

impl ConformalFrame {
    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    pub fn rank(&self) -> usize {
        self.normal_basis.len()
    }

    /// Project marched sections back onto `V^⊥` and remove the first-order
    /// drift of their Gram matrix from `diag(ε)`.
    pub(crate) fn reorthonormalize(&self, basis: &[Field], signs: &[f64]) -> Vec<Field> {
        let sig = self.y.sig();
        let m = basis.len();
        let proj: Vec<Field> = basis.iter().map(|b| self.perp(b)).collect();
        let mut out: Vec<Field> = proj.clone();
        for p in 0..self.y.spec().len() {
            for a in 0..m {
                for b in 0..m {
                    let mut g = sig.dot(proj[a].at(p), proj[b].at(p)).re;
                    if a == b {
                        g -= signs[a];
                    }
                    let k = 0.5 * g * signs[b];
                    for i in 0..sig.dim() {
                        let v = proj[b].at(p)[i];
                        out[a].at_mut(p)[i] -= v * k;
                    }
                }
            }
        }
        out
    }

    /// Parallel transport of vectors of `V^⊥` at the base node, walking
    /// periodic axes backwards where `reverse` is set.
    pub fn transport(&self, seed: &[Vec<f64>], reverse: [bool; 2]) -> Result<Transported> {
        transport_perp(&self.source, self.floor, seed, reverse)
    }

    /// `H` with `ψ_α(loop end) = Σ_β H_{αβ} ψ_β(base)`, for a periodic axis.
    pub fn holonomy_matrix(&self, axis: Axis) -> Option<DMatrix<f64>> {
        let ends = self.loop_ends[axis as usize].as_ref()?;
        let sig = self.y.sig();
        let b = self.y.spec().base_index();
        let m = self.rank();
        Some(DMatrix::from_fn(m, m, |a, k| {
            let e: Vec<Complex64> = ends[a].iter().map(|&v| re(v)).collect();
            sig.dot(&e, self.normal_basis[k].at(b)).re * self.signs[k]
        }))
    }

    /// Unmasked interior points: where reported quantities are evaluated.
    pub fn points(&self) -> Vec<usize> {
        let spec = self.y.spec();
        spec.interior().into_iter().filter(|&p| self.mask[p]).collect()
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }

    fn project_at(&self, p: usize, w: &[Complex64]) -> Vec<Complex64> {
        let sig = self.y.sig();
        let b = [self.y.at(p), self.y_u.at(p), self.y_v.at(p), self.n.at(p)];
        let rhs: Vec<Complex64> = b.iter().map(|v| sig.dot(w, v)).collect();
        let gi = &self.ginv[p];
        let mut out = w.to_vec();
        for i in 0..4 {
            let mut k = ZERO;
            for j in 0..4 {
                k += rhs[j] * gi[(i, j)];
            }
            for (o, bi) in out.iter_mut().zip(b[i]) {
                *o -= k * bi;
            }
        }
        out
    }

    /// Orthogonal projection onto `V^⊥`.
    pub fn perp(&self, w: &Field) -> Field {
        w.map(w.sig(), |p, v, o| o.copy_from_slice(&self.project_at(p, v)))
    }

    /// Normal connection `D_z w = (w_z)^⊥`.
    pub fn d_z_perp(&self, w: &Field) -> Field {
        self.perp(&w.d_z())
    }

    pub fn d_zbar_perp(&self, w: &Field) -> Field {
        self.perp(&w.d_zbar())
    }

    /// `ε_α <w, ψ_α>` for each basis section.
    pub fn coefficients(&self, w: &Field) -> Vec<Field> {
        let spec = *self.y.spec();
        let sig = self.y.sig();
        self.normal_basis
            .iter()
            .zip(&self.signs)
            .map(|(psi, &eps)| Field::scalar(spec, |p| sig.dot(w.at(p), psi.at(p)) * eps))
            .collect()
    }

    pub fn defects(&self) -> FrameDefects {
        let sig = self.y.sig();
        let pts = self.points();
        let y_zzb = self.y_z.d_zbar();
        let (mut lift, mut gram, mut normal) = (0.0f64, 0.0f64, 0.0f64);
        for &p in &pts {
            let (y, yz, yzb, n) = (self.y.at(p), self.y_z.at(p), self.y_zb.at(p), self.n.at(p));
            lift = lift
                .max(sig.dot(y, y).norm())
                .max(sig.dot(yz, yz).norm())
                .max((sig.dot(yz, yzb) - 0.5).norm());
            gram = gram
                .max(sig.dot(n, n).norm())
                .max(sig.dot(n, yz).norm())
                .max((sig.dot(n, y) + 1.0).norm());
            for psi in &self.normal_basis {
                let s = psi.at(p);
                normal = normal
                    .max(sig.dot(s, y).norm())
                    .max(sig.dot(s, yz).norm())
                    .max(sig.dot(s, y_zzb.at(p)).norm());
            }
        }
        FrameDefects { lift, gram, normal }
    }

    /// `max |<X_z,X_z̄>|` spread relative to its mean: zero when the input
    /// was already a canonical lift up to a constant.
    pub fn scale_spread(&self) -> f64 {
        let pts = self.points();
        let vals: Vec<f64> = pts.iter().map(|&p| self.e2w.val(p).re).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max) / mean
    }
}

/// Conformal Hopf differential, Schwarzian and invariant metric density.
#[derive(Debug, Clone)]
pub struct ConformalInvariants {
    pub kappa: Field,
    pub s: Field,
    /// `<κ,κ̄>` as a real scalar.
    pub g: Field,
    /// `k^α = ε_α <κ, ψ_α>`.
    pub kappa_coef: Vec<Field>,
}

pub fn conformal_invariants(frame: &ConformalFrame) -> ConformalInvariants {
    let spec = *frame.y.spec();
    let sig = frame.y.sig();
    let s = Field::scalar(spec, |p| sig.dot(frame.y_zz.at(p), frame.n.at(p)) * 2.0);
    let kappa = frame.perp(&frame.y_zz);
    let g = Field::scalar(spec, |p| re(sig.dot_conj(kappa.at(p), kappa.at(p)).re));
    let kappa_coef = frame.coefficients(&kappa);
    ConformalInvariants { kappa, s, g, kappa_coef }
}

/// `max |Y_zz + (s/2)Y - κ|` over unmasked points.
pub fn structure_defect(frame: &ConformalFrame, kappa: &Field, s: &Field) -> f64 {
    let d = frame.y.dim();
    let mut out: f64 = 0.0;
    for p in frame.points() {
        let k = s.val(p) * 0.5;
        for i in 0..d {
            out = out.max((frame.y_zz.at(p)[i] + k * frame.y.at(p)[i] - kappa.at(p)[i]).norm());
        }
    }
    out
}

impl ConformalInvariants {
    /// `max |<κ,Y>|, |<κ,Y_z>|` over unmasked points.
    pub fn orthogonality_defect(&self, frame: &ConformalFrame) -> f64 {
        let sig = frame.y.sig();
        frame
            .points()
            .into_iter()
            .map(|p| {
                let k = self.kappa.at(p);
                sig.dot(k, frame.y.at(p)).norm().max(sig.dot(k, frame.y_z.at(p)).norm())
            })
            .fold(0.0, f64::max)
    }

    /// `max |Im(e^{-2iα} k^α)|` for the frame's adapted phase `α`.
    pub fn imaginary_defect(&self, frame: &ConformalFrame) -> f64 {
        let rot = Complex64::from_polar(1.0, -2.0 * frame.phase);
        let pts = frame.points();
        self.kappa_coef
            .iter()
            .flat_map(|k| pts.iter().map(move |&p| (k.val(p) * rot).im.abs()))
            .fold(0.0, f64::max)
    }

    pub fn omega_range(&self, frame: &ConformalFrame) -> (f64, f64) {
        frame.points().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
            let w = 0.5 * frame.e2w.val(p).re.ln();
            (lo.min(w), hi.max(w))
        })
    }
}

/// `W = 2i ∫ <κ,κ̄> dz∧dz̄ = 4 ∫ <κ,κ̄> du dv` over a closed, fully immersed grid.
pub fn willmore(frame: &ConformalFrame, inv: &ConformalInvariants) -> Result<f64> {
    let spec = inv.g.spec();
    let masked = frame.masked_count();
    if !spec.closed() || masked > 0 {
        return Err(Error::GlobalIntegral { masked });
    }
    Ok(4.0 * integrate_over(&inv.g, Form::DuDv, None)?.re)
}

/// Defects of the conformal Gauss, Codazzi and Ricci equations:
/// `s_z̄/2 = 3<κ,D_zκ̄> + <D_zκ,κ̄>`, `Im(D_z̄D_z̄κ + s̄κ/2) = 0`,
/// `D_z̄D_zψ - D_zD_z̄ψ = 2(<ψ,κ>κ̄ - <ψ,κ̄>κ)`.
pub fn conformal_gcr_residuals(frame: &ConformalFrame, inv: &ConformalInvariants) -> Gcr {
    let sig = frame.y.sig();
    let d = sig.dim();
    let pts = frame.points();
    let kb = inv.kappa.conj();
    let dk = frame.d_z_perp(&inv.kappa);
    let dkb = frame.d_z_perp(&kb);
    let s_zb = inv.s.d_zbar();
    let mut gauss: f64 = 0.0;
    for &p in &pts {
        let rhs = sig.dot(inv.kappa.at(p), dkb.at(p)) * 3.0 + sig.dot(dk.at(p), kb.at(p));
        gauss = gauss.max((s_zb.val(p) * 0.5 - rhs).norm());
    }

    let ddk = frame.d_zbar_perp(&frame.d_zbar_perp(&inv.kappa));
    let mut codazzi: f64 = 0.0;
    for &p in &pts {
        let sb = inv.s.val(p).conj() * 0.5;
        for i in 0..d {
            codazzi = codazzi.max((ddk.at(p)[i] + sb * inv.kappa.at(p)[i]).im.abs());
        }
    }

    // The curvature is tensorial, so it is tested on the projected coordinate
    // axes: smooth and periodic even when parallel sections have holonomy.
    let mut ricci: f64 = 0.0;
    for k in 0..d {
        let psi = frame.perp(&Field::build(*frame.y.spec(), sig, |_, o| o[k] = re(1.0)));
        let psi = &psi;
        let a = frame.d_zbar_perp(&frame.d_z_perp(psi));
        let b = frame.d_z_perp(&frame.d_zbar_perp(psi));
        for &p in &pts {
            let (k, kbar, s) = (inv.kappa.at(p), kb.at(p), psi.at(p));
            let pk = sig.dot(s, k) * 2.0;
            let pkb = sig.dot(s, kbar) * 2.0;
            for i in 0..d {
                let r = a.at(p)[i] - b.at(p)[i] - (pk * kbar[i] - pkb * k[i]);
                ricci = ricci.max(r.norm());
            }
        }
    }
    Gcr { gauss, codazzi, ricci }
}

/// Residuals of the isometric-to-conformal dictionary for a surface in
/// flat `R^n_r`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DictionaryDefects {
    /// `κ - e^{-ω}L(Ω) - <Ω,H>Y`.
    pub kappa: f64,
    /// `s - 2ω_zz + 2ω_z^2 - 2<Ω,H>`.
    pub schwarzian: f64,
    /// Each `ψ_α - L(n_α) - <n_α,H>X`.
    pub frame: f64,
}

impl DictionaryDefects {
    pub fn max(&self) -> f64 {
        self.kappa.max(self.schwarzian).max(self.frame)
    }
}

/// Compares conformal data of `embed(x)` against the closed-form expressions
/// in the isometric invariants of `x`. Both must come from the same grid and
/// the conformal frame must have been seeded with the lifted isometric frame.
pub fn dictionary_defects(
    iso: &IsometricInvariants,
    frame: &ConformalFrame,
    inv: &ConformalInvariants,
) -> Result<DictionaryDefects> {
    if iso.c != 0.0 {
        return Err(Error::Parameter("the dictionary is stated for flat ambient space".into()));
    }
    let xs = iso.x.sig();
    let sig = frame.y.sig();
    let d = sig.dim();
    let w_z = iso.omega.d_z();
    let w_zz = w_z.d_z();
    let pts = frame.points();
    let mut lv = vec![ZERO; d];
    let (mut kd, mut sd, mut fd) = (0.0f64, 0.0f64, 0.0f64);
    for &p in &pts {
        let x = iso.x.at(p);
        let om = iso.hopf.at(p);
        let h = iso.mean_curvature.at(p);
        let oh = xs.dot(om, h);
        let ew = iso.e2w.val(p).re.sqrt();
        embed_vector(xs, 0.0, x, om, &mut lv);
        for i in 0..d {
            let want = lv[i] / ew + oh * frame.y.at(p)[i];
            kd = kd.max((inv.kappa.at(p)[i] - want).norm());
        }
        let s_want = w_zz.val(p) * 2.0 - w_z.val(p) * w_z.val(p) * 2.0 + oh * 2.0;
        sd = sd.max((inv.s.val(p) - s_want).norm());
        for (n, psi) in iso.frame.iter().zip(&frame.normal_basis) {
            let nh = xs.dot(n.at(p), h);
            embed_vector(xs, 0.0, x, n.at(p), &mut lv);
            for i in 0..d {
                let want = lv[i] + nh * ew * frame.y.at(p)[i];
                fd = fd.max((psi.at(p)[i] - want).norm());
            }
        }
    }
    Ok(DictionaryDefects {
        kappa: kd,
        schwarzian: sd,
        frame: fd,
    })
}

/// Lift an isometric normal frame at the base point into `V^⊥`, for seeding
/// [`canonical_lift`] consistently with [`dictionary_defects`].
pub fn lifted_seed(iso: &IsometricInvariants) -> Vec<Vec<f64>> {
    let spec = *iso.x.spec();
    let base = spec.base_index();
    let xs = iso.x.sig();
    let d = xs.lightcone().dim();
    let x = iso.x.at(base);
    let h = iso.mean_curvature.at(base);
    let a = xs.dot(x, x).re;
    let mut big_x = vec![0.0; d];
    let xr: Vec<f64> = x.iter().map(|z| z.re).collect();
    place(xs, 0.0, &xr, 0.5 * (1.0 - a), 0.5 * (1.0 + a), &mut big_x);
    iso.frame
        .iter()
        .map(|n| {
            let mut lv = vec![ZERO; d];
            embed_vector(xs, 0.0, x, n.at(base), &mut lv);
            let nh = xs.dot(n.at(base), h).re;
            lv.iter().zip(&big_x).map(|(l, b)| l.re + nh * b).collect()
        })
        .collect()
}

/// Apply a constant linear map to every point of a field.
pub fn transform_field(t: &nalgebra::DMatrix<f64>, x: &Field) -> Result<Field> {
    let d = x.dim();
    if t.nrows() != d || t.ncols() != d {
        return Err(Error::Dimension { expected: d, got: t.nrows() });
    }
    Ok(x.map(x.sig(), |_, v, o| {
        for i in 0..d {
            let mut acc = ZERO;
            for j in 0..d {
                acc += v[j] * t[(i, j)];
            }
            o[i] = acc;
        }
    }))
}
