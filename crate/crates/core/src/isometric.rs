//! Isometric invariants of a conformally parametrized spacelike surface
//! `x: M -> N^n_r(c)`: conformal factor `ω`, vector Hopf differential `Ω`,
//! mean curvature `H`, a parallel normal frame and the Gauss–Codazzi–Ricci
//! defects.
//!
//! Structure equations used throughout:
//! `x_zz = 2ω_z x_z + Ω`, `x_zz̄ = e^{2ω}H/2 - c e^{2ω} x/2`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gridcalc::{transport_sections, Axis, Field};
use crate::pseudolinalg::{complete_frame_scaled, Signature};
use crate::tolerances::Tolerances;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone)]
pub struct IsometricInvariants {
    pub c: f64,
    pub x: Field,
    pub x_u: Field,
    pub x_v: Field,
    /// `e^{2ω}` as a real scalar field.
    pub e2w: Field,
    pub omega: Field,
    /// Vector Hopf differential `Ω` (complex, normal-valued).
    pub hopf: Field,
    /// Mean curvature vector `H` (real, normal-valued).
    pub mean_curvature: Field,
    pub gauss_curvature: Field,
    /// D-parallel orthonormal normal frame `n_α`, transported from the base point.
    pub frame: Vec<Field>,
    pub signs: Vec<f64>,
    /// `Ω^α = ε_α <Ω, n_α>`.
    pub hopf_coef: Vec<Field>,
    /// `h^α = ε_α <H, n_α>`.
    pub h_coef: Vec<Field>,
    pub b11: Vec<Field>,
    pub b12: Vec<Field>,
    pub b22: Vec<Field>,
    /// Largest closure defect of the frame transport around grid loops.
    pub holonomy: f64,
    /// `max |<x_z,x_z>| / e^{2ω}` over reported points.
    pub conformality_defect: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Gcr {
    pub gauss: f64,
    pub codazzi: f64,
    pub ricci: f64,
}

impl Gcr {
    pub fn max(&self) -> f64 {
        self.gauss.max(self.codazzi).max(self.ricci)
    }
}

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Compute all isometric invariants. `frame_seed`, if given, is a basis of
/// the normal space at the base node of the grid; otherwise one is chosen from
/// the projected coordinate axes.
pub fn isometric_invariants(
    x: &Field,
    c: f64,
    frame_seed: Option<&[Vec<f64>]>,
    tol: &Tolerances,
) -> Result<IsometricInvariants> {
    let spec = *x.spec();
    let sig = x.sig();
    let d = sig.dim();
    let pts = spec.interior();
    let codim = if c != 0.0 { 3 } else { 2 };
    if d < codim {
        return Err(Error::Dimension {
            expected: codim,
            got: d,
        });
    }
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
    let x = x.real_part();
    let x_u = x.d_u();
    let x_v = x.d_v();
    let e2w = Field::scalar(spec, |p| {
        re(0.5 * (sig.dot(x_u.at(p), x_u.at(p)).re + sig.dot(x_v.at(p), x_v.at(p)).re))
    });
    let mut defect: f64 = 0.0;
    for &p in &pts {
        let (a, b) = (x_u.at(p), x_v.at(p));
        let e = e2w.val(p).re;
        if !(e > 0.0) {
            return Err(Error::Coordinate { defect: f64::INFINITY });
        }
        let q = Complex64::new(
            sig.dot(a, a).re - sig.dot(b, b).re,
            -2.0 * sig.dot(a, b).re,
        ) * 0.25;
        defect = defect.max(q.norm() / e);
    }
    if defect > tol.conf_tol {
        return Err(Error::Coordinate { defect });
    }
    let omega = e2w.map(Signature::euclidean(1), |_, v, o| o[0] = re(0.5 * v[0].re.ln()));
    let project = Projector {
        sig,
        c,
        x: &x,
        x_u: &x_u,
        x_v: &x_v,
        e2w: &e2w,
    };
    let x_z = x.d_z();
    let hopf = project.apply(&x_z.d_z());
    let x_zzb = x_z.d_zbar();
    let h_raw = x_zzb.map(sig, |p, w, o| {
        let k = 2.0 / e2w.val(p).re;
        for i in 0..d {
            o[i] = re(k * w[i].re + c * x.at(p)[i].re);
        }
    });
    let mean_curvature = project.apply(&h_raw).real_part();
    let w_zzb = omega.d_z().d_zbar();
    let gauss_curvature = Field::scalar(spec, |p| re(-4.0 * w_zzb.val(p).re / e2w.val(p).re));

    let base = spec.base_index();
    let rank = d - codim;
    let candidates: Vec<Vec<f64>> = match frame_seed {
        Some(seed) => {
            for s in seed {
                if s.len() != d {
                    return Err(Error::Dimension {
                        expected: d,
                        got: s.len(),
                    });
                }
                let sc: Vec<Complex64> = s.iter().map(|&v| re(v)).collect();
                let res = project.tangential_defect(base, &sc);
                if res > 1e-6 {
                    return Err(Error::Seed(format!("seed vector is not normal (defect {res:.3e})")));
                }
            }
            seed.to_vec()
        }
        None => (0..d)
            .map(|k| {
                let mut e = vec![ZERO; d];
                e[k] = re(1.0);
                project.at(base, &e).iter().map(|z| z.re).collect()
            })
            .collect(),
    };
    let sizes: Vec<f64> = match frame_seed {
        Some(_) => candidates.iter().map(|c| c.iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect(),
        None => vec![1.0; candidates.len()],
    };
    let (seed, signs) = complete_frame_scaled(sig, &candidates, &sizes, rank, tol.null_tol)?;
    let (frame, holonomy) = transport_normals(&project, &seed)?;

    let coef = |w: &Field| -> Vec<Field> {
        frame
            .iter()
            .zip(&signs)
            .map(|(n, &eps)| Field::scalar(spec, |p| sig.dot(w.at(p), n.at(p)) * eps))
            .collect()
    };
    let hopf_coef = coef(&hopf);
    let h_coef = coef(&mean_curvature);
    let mut b11 = Vec::with_capacity(rank);
    let mut b12 = Vec::with_capacity(rank);
    let mut b22 = Vec::with_capacity(rank);
    for (om, h) in hopf_coef.iter().zip(&h_coef) {
        b11.push(Field::scalar(spec, |p| re(e2w.val(p).re * h.val(p).re + 2.0 * om.val(p).re)));
        b22.push(Field::scalar(spec, |p| re(e2w.val(p).re * h.val(p).re - 2.0 * om.val(p).re)));
        b12.push(Field::scalar(spec, |p| re(-2.0 * om.val(p).im)));
    }
    Ok(IsometricInvariants {
        c,
        x,
        x_u,
        x_v,
        e2w,
        omega,
        hopf,
        mean_curvature,
        gauss_curvature,
        frame,
        signs,
        hopf_coef,
        h_coef,
        b11,
        b12,
        b22,
        holonomy,
        conformality_defect: defect,
    })
}

/// Orthogonal projection onto the normal bundle of `x` inside `N^n_r(c)`.
struct Projector<'a> {
    sig: Signature,
    c: f64,
    x: &'a Field,
    x_u: &'a Field,
    x_v: &'a Field,
    e2w: &'a Field,
}

impl Projector<'_> {
    fn at(&self, p: usize, w: &[Complex64]) -> Vec<Complex64> {
        let sig = self.sig;
        let (a, b, x) = (self.x_u.at(p), self.x_v.at(p), self.x.at(p));
        let ie = 1.0 / self.e2w.val(p).re;
        let ka = sig.dot(w, a) * ie;
        let kb = sig.dot(w, b) * ie;
        let kx = sig.dot(w, x) * self.c;
        (0..w.len()).map(|i| w[i] - ka * a[i] - kb * b[i] - kx * x[i]).collect()
    }

    fn tangential_defect(&self, p: usize, w: &[Complex64]) -> f64 {
        let n = self.at(p, w);
        let scale = w.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(1e-300);
        n.iter().zip(w).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale
    }

    fn apply(&self, w: &Field) -> Field {
        w.map(w.sig(), |p, v, o| o.copy_from_slice(&self.at(p, v)))
    }
}

/// Parallel transport of an orthonormal normal basis from the base point,
/// first along `u`, then along `v`:
/// `n_u = -e^{-2ω}(<n,x_uu> x_u + <n,x_uv> x_v)`, and likewise in `v`.
fn transport_normals(pr: &Projector, seed: &[Vec<f64>]) -> Result<(Vec<Field>, f64)> {
    let spec = *pr.x.spec();
    let sig = pr.sig;
    let d = sig.dim();
    let xf_u = pr.x.d_fine(Axis::U);
    let xf_v = pr.x.d_fine(Axis::V);
    let e2w = Field::scalar(spec, |p| {
        re(0.5 * (sig.dot(xf_u.at(p), xf_u.at(p)).re + sig.dot(xf_v.at(p), xf_v.at(p)).re))
    });
    let x_uu = xf_u.d_fine(Axis::U);
    let x_uv = xf_u.d_fine(Axis::V);
    let x_vv = xf_v.d_fine(Axis::V);
    let pack = |a: &Field, b: &Field| {
        Field::build(spec, Signature::euclidean(4 * d), |p, o| {
            let ie = 1.0 / e2w.val(p).re;
            for i in 0..d {
                o[i] = a.at(p)[i];
                o[d + i] = b.at(p)[i];
                o[2 * d + i] = xf_u.at(p)[i] * ie;
                o[3 * d + i] = xf_v.at(p)[i] * ie;
            }
        })
    };
    let seed: Vec<Vec<Complex64>> = seed.iter().map(|s| s.iter().map(|&v| re(v)).collect()).collect();
    let tr = transport_sections(sig, &seed, &pack(&x_uu, &x_uv), &pack(&x_uv, &x_vv), [false; 2], |coef, n, out| {
        let (a, rest) = coef.split_at(d);
        let (b, rest) = rest.split_at(d);
        let (t1, t2) = rest.split_at(d);
        let ka = sig.dot(n, a);
        let kb = sig.dot(n, b);
        for i in 0..d {
            out[i] = -(ka * t1[i] + kb * t2[i]);
        }
    })?;
    Ok((tr.fields, tr.holonomy))
}

impl IsometricInvariants {
    fn projector(&self) -> Projector<'_> {
        Projector {
            sig: self.x.sig(),
            c: self.c,
            x: &self.x,
            x_u: &self.x_u,
            x_v: &self.x_v,
            e2w: &self.e2w,
        }
    }

    /// Normal part of an ambient field.
    pub fn normal_part(&self, w: &Field) -> Field {
        self.projector().apply(w)
    }

    /// Normal connection `D_z w`.
    pub fn d_z_normal(&self, w: &Field) -> Field {
        self.normal_part(&w.d_z())
    }

    pub fn d_zbar_normal(&self, w: &Field) -> Field {
        self.normal_part(&w.d_zbar())
    }

    pub fn gcr_residuals(&self) -> Gcr {
        let spec = *self.x.spec();
        let sig = self.x.sig();
        let pts = spec.interior();
        let e2w = |p: usize| self.e2w.val(p).re;

        let mut gauss: f64 = 0.0;
        for &p in &pts {
            let hh = sig.dot(self.mean_curvature.at(p), self.mean_curvature.at(p));
            let oo = sig.dot_conj(self.hopf.at(p), self.hopf.at(p));
            let lhs = hh - self.gauss_curvature.val(p) + self.c;
            gauss = gauss.max((lhs - oo * (4.0 / (e2w(p) * e2w(p)))).norm());
        }

        let dh = self.d_z_normal(&self.mean_curvature);
        let dom = self.d_zbar_normal(&self.hopf);
        let mut codazzi: f64 = 0.0;
        for &p in &pts {
            let k = 2.0 / e2w(p);
            for (a, b) in dh.at(p).iter().zip(dom.at(p)) {
                codazzi = codazzi.max((a - b * k).norm());
            }
        }

        let hopf_bar = self.hopf.conj();
        let mut ricci: f64 = 0.0;
        for n in &self.frame {
            let dz = self.d_z_normal(n);
            let dzb = self.d_zbar_normal(n);
            let r1 = self.d_zbar_normal(&dz);
            let r2 = self.d_z_normal(&dzb);
            for &p in &pts {
                let a = sig.dot(n.at(p), self.hopf.at(p));
                let b = sig.dot(n.at(p), hopf_bar.at(p));
                let k = 2.0 / e2w(p);
                for i in 0..sig.dim() {
                    let lhs = r1.at(p)[i] - r2.at(p)[i];
                    let rhs = (a * hopf_bar.at(p)[i] - b * self.hopf.at(p)[i]) * k;
                    ricci = ricci.max((lhs - rhs).norm());
                }
            }
        }
        Gcr {
            gauss,
            codazzi,
            ricci,
        }
    }

    /// `max |Im Ω^α|` in the parallel frame.
    pub fn isothermic_defect(&self) -> f64 {
        self.isothermic_defect_rotated(0.0)
    }

    /// Same, after rotating the coordinate by `phase` (`Ω -> e^{-2i phase} Ω`).
    pub fn isothermic_defect_rotated(&self, phase: f64) -> f64 {
        let rot = Complex64::from_polar(1.0, -2.0 * phase);
        let pts = self.x.spec().interior();
        self.hopf_coef
            .iter()
            .flat_map(|f| pts.iter().map(move |&p| (f.val(p) * rot).im.abs()))
            .fold(0.0, f64::max)
    }

    /// `max |D_z n_α|`: how far the transported frame is from D-parallel.
    pub fn parallelism_defect(&self) -> f64 {
        let pts = self.x.spec().interior();
        self.frame
            .iter()
            .map(|n| self.d_z_normal(n).sup_over(&pts))
            .fold(0.0, f64::max)
    }

    /// Discrepancy between `b^α_ij` assembled from `Ω, H` and the direct
    /// projections `ε_α <x_ij, n_α>`.
    pub fn fundamental_form_defect(&self) -> f64 {
        let sig = self.x.sig();
        let pts = self.x.spec().interior();
        let x_uu = self.x_u.d_u();
        let x_uv = self.x_u.d_v();
        let x_vv = self.x_v.d_v();
        let mut worst: f64 = 0.0;
        for (a, (n, &eps)) in self.frame.iter().zip(&self.signs).enumerate() {
            for &p in &pts {
                let direct = [
                    sig.dot(x_uu.at(p), n.at(p)).re * eps,
                    sig.dot(x_uv.at(p), n.at(p)).re * eps,
                    sig.dot(x_vv.at(p), n.at(p)).re * eps,
                ];
                let assembled = [self.b11[a].val(p).re, self.b12[a].val(p).re, self.b22[a].val(p).re];
                for (x, y) in direct.iter().zip(&assembled) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
        worst
    }
}
