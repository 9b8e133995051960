//! Closed-form example surfaces with analytic first derivatives.
//!
//! Space-form members are sampled as `x: M -> R^n_r`; the homogeneous tori
//! are given directly as null maps into the light cone `R^6_2`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridcalc::{Field, GridSpec, Scheme};
use crate::pseudolinalg::Signature;

/// Closed curves with a numerically exact arc-length parametrization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveKind {
    Circle { r: f64 },
    Ellipse { a: f64, b: f64 },
    /// `(cos τ, sin τ, eps sin 2τ)` in R³.
    Twisted { eps: f64 },
}

/// Arc length `E(τ) = ∫_0^τ |γ'|` of a 2π-periodic raw curve, stored as the
/// Fourier series of the speed so partial integrals are spectrally exact.
#[derive(Debug, Clone, PartialEq)]
struct ArcLength {
    mean: f64,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl ArcLength {
    fn new(speed: impl Fn(f64) -> f64) -> Self {
        let m = 512;
        let samples: Vec<f64> = (0..m).map(|j| speed(2.0 * PI * j as f64 / m as f64)).collect();
        let mean = samples.iter().sum::<f64>() / m as f64;
        let modes = m / 2 - 1;
        let mut cos = vec![0.0; modes];
        let mut sin = vec![0.0; modes];
        for k in 1..=modes {
            let (mut a, mut b) = (0.0, 0.0);
            for (j, s) in samples.iter().enumerate() {
                let t = 2.0 * PI * (k * j) as f64 / m as f64;
                a += s * t.cos();
                b += s * t.sin();
            }
            cos[k - 1] = 2.0 * a / m as f64;
            sin[k - 1] = 2.0 * b / m as f64;
        }
        Self { mean, cos, sin }
    }

    fn length(&self) -> f64 {
        2.0 * PI * self.mean
    }

    fn eval(&self, tau: f64) -> f64 {
        let mut e = self.mean * tau;
        for (k, (a, b)) in self.cos.iter().zip(&self.sin).enumerate() {
            let k = (k + 1) as f64;
            e += (a * (k * tau).sin() - b * ((k * tau).cos() - 1.0)) / k;
        }
        e
    }

    /// Newton inversion of `E(τ) = s`.
    fn invert(&self, s: f64, speed: impl Fn(f64) -> f64) -> f64 {
        let mut tau = s / self.mean;
        for _ in 0..50 {
            let step = (self.eval(tau) - s) / speed(tau);
            tau -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        tau
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub kind: CurveKind,
    arc: Option<ArcLength>,
    reparametrize: bool,
}

impl Curve {
    pub fn new(kind: CurveKind) -> Result<Self> {
        let ok = match kind {
            CurveKind::Circle { r } => r > 0.0,
            CurveKind::Ellipse { a, b } => a > 0.0 && b > 0.0,
            CurveKind::Twisted { eps } => eps.is_finite(),
        };
        if !ok {
            return Err(Error::Parameter(format!("invalid curve {kind:?}")));
        }
        let arc = match kind {
            CurveKind::Circle { .. } => None,
            _ => Some(ArcLength::new(|t| raw_speed(kind, t))),
        };
        Ok(Self {
            kind,
            arc,
            reparametrize: true,
        })
    }

    pub fn circle(r: f64) -> Result<Self> {
        Self::new(CurveKind::Circle { r })
    }

    pub fn ellipse(a: f64, b: f64) -> Result<Self> {
        Self::new(CurveKind::Ellipse { a, b })
    }

    pub fn twisted(eps: f64) -> Result<Self> {
        Self::new(CurveKind::Twisted { eps })
    }

    /// The raw angular parametrization, without arc-length correction.
    pub fn unparametrized(kind: CurveKind) -> Result<Self> {
        let mut c = Self::new(kind)?;
        c.reparametrize = false;
        Ok(c)
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            CurveKind::Twisted { .. } => 3,
            _ => 2,
        }
    }

    pub fn is_planar(&self) -> bool {
        self.dim() == 2
    }

    pub fn length(&self) -> f64 {
        match (self.kind, &self.arc) {
            (CurveKind::Circle { r }, _) => 2.0 * PI * r,
            (_, Some(a)) if self.reparametrize => a.length(),
            _ => 2.0 * PI,
        }
    }

    fn tau(&self, s: f64) -> f64 {
        match (self.kind, &self.arc) {
            (CurveKind::Circle { r }, _) if self.reparametrize => s / r,
            (_, Some(a)) if self.reparametrize => a.invert(s, |t| raw_speed(self.kind, t)),
            _ => s,
        }
    }

    pub fn point(&self, s: f64) -> Vec<f64> {
        raw_derivs(self.kind, self.tau(s)).0
    }

    /// `γ'(s)` and `γ''(s)` with respect to the curve parameter.
    pub fn derivs(&self, s: f64) -> (Vec<f64>, Vec<f64>) {
        let (_, d1, d2) = raw_derivs(self.kind, self.tau(s));
        if !self.reparametrize {
            return (d1, d2);
        }
        let sp = norm(&d1);
        let sp_t = dotv(&d1, &d2) / sp;
        let t1: Vec<f64> = d1.iter().map(|x| x / sp).collect();
        let t2: Vec<f64> = d2
            .iter()
            .zip(&d1)
            .map(|(a, b)| (a - sp_t / sp * b) / (sp * sp))
            .collect();
        (t1, t2)
    }

    pub fn tangent(&self, s: f64) -> Vec<f64> {
        self.derivs(s).0
    }

    /// Left normal `β = J α` of a planar curve.
    pub fn normal(&self, s: f64) -> Option<Vec<f64>> {
        if !self.is_planar() {
            return None;
        }
        let a = self.tangent(s);
        Some(vec![-a[1], a[0]])
    }

    /// Signed curvature `k` with `α' = k β`.
    pub fn curvature(&self, s: f64) -> Option<f64> {
        let beta = self.normal(s)?;
        let (_, acc) = self.derivs(s);
        Some(dotv(&acc, &beta))
    }

    /// Max deviation of `|γ'|` from 1 over `samples` points of one period.
    pub fn arc_length_defect(&self, samples: usize) -> f64 {
        let l = self.length();
        (0..samples)
            .map(|j| (norm(&self.tangent(l * j as f64 / samples as f64)) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn raw_speed(kind: CurveKind, t: f64) -> f64 {
    norm(&raw_derivs(kind, t).1)
}

fn raw_derivs(kind: CurveKind, t: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (c, s) = (t.cos(), t.sin());
    match kind {
        CurveKind::Circle { r } => (vec![r * c, r * s], vec![-r * s, r * c], vec![-r * c, -r * s]),
        CurveKind::Ellipse { a, b } => (vec![a * c, b * s], vec![-a * s, b * c], vec![-a * c, -b * s]),
        CurveKind::Twisted { eps } => {
            let (c2, s2) = ((2.0 * t).cos(), (2.0 * t).sin());
            (
                vec![c, s, eps * s2],
                vec![-s, c, 2.0 * eps * c2],
                vec![-c, -s, -4.0 * eps * s2],
            )
        }
    }
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dotv(a, a).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    /// `(u, v)` in R^dim, remaining coordinates zero.
    Plane { dim: usize },
    /// Mercator-parametrized round sphere of radius `r` in R³.
    Sphere { r: f64 },
    Product { first: Curve, second: Curve },
    HomogeneousTorus { p: i64, q: i64 },
}

/// Where the sampled map lives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ambient {
    /// Space form `<x,x> = 1/c` for `c ≠ 0`, flat `R^n_r` for `c = 0`.
    SpaceForm { sig: Signature, c: f64 },
    /// Null vectors in the light cone of the given signature.
    LightCone { sig: Signature },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceDef {
    pub name: String,
    pub params: Vec<(String, f64)>,
    pub model: Model,
}

/// JSON parameter block accepted by [`SurfaceDef::from_config`].
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    t: Option<f64>,
    p: Option<i64>,
    q: Option<i64>,
    r: Option<f64>,
    dim: Option<usize>,
    curve1: Option<CurveKind>,
    curve2: Option<CurveKind>,
}

pub const CATALOG: &[(&str, &str)] = &[
    ("plane", "flat plane (u, v) in R^dim, params: dim (2 or 4)"),
    ("sphere", "round sphere in R^3, Mercator coordinates, params: r"),
    ("clifford_torus", "product of two unit circles in R^4"),
    ("homogeneous_torus", "homogeneous Willmore torus in the light cone of R^6_2, params: t (rational, |t| > 1) or p, q"),
    ("product", "product of two arc-length closed curves, params: curve1, curve2"),
];

pub fn plane(dim: usize) -> Result<SurfaceDef> {
    if dim < 2 {
        return Err(Error::Parameter("plane needs dim >= 2".into()));
    }
    Ok(SurfaceDef {
        name: "plane".into(),
        params: vec![("dim".into(), dim as f64)],
        model: Model::Plane { dim },
    })
}

pub fn sphere(r: f64) -> Result<SurfaceDef> {
    if r <= 0.0 {
        return Err(Error::Parameter("sphere radius must be positive".into()));
    }
    Ok(SurfaceDef {
        name: "sphere".into(),
        params: vec![("r".into(), r)],
        model: Model::Sphere { r },
    })
}

pub fn product_surface(first: Curve, second: Curve) -> Result<SurfaceDef> {
    for c in [&first, &second] {
        let d = c.arc_length_defect(256);
        if d > 1e-10 {
            return Err(Error::Parameter(format!(
                "curve {:?} is not arc-length parametrized: ||γ'| - 1| = {d:.3e}",
                c.kind
            )));
        }
    }
    Ok(SurfaceDef {
        name: "product".into(),
        params: vec![("length1".into(), first.length()), ("length2".into(), second.length())],
        model: Model::Product { first, second },
    })
}

pub fn clifford_torus() -> SurfaceDef {
    let mut s = product_surface(Curve::circle(1.0).unwrap(), Curve::circle(1.0).unwrap())
        .expect("circles are arc-length");
    s.name = "clifford_torus".into();
    s.params.clear();
    s
}

/// Rational approximation `p/q` of `t` with `q <= 1000`, if `t` is one.
fn rational(t: f64) -> Option<(i64, i64)> {
    (1..=1000i64).find_map(|q| {
        let p = (t * q as f64).round();
        ((p / q as f64 - t).abs() < 1e-12).then_some((p as i64, q))
    })
}

pub fn homogeneous_torus(t: f64) -> Result<SurfaceDef> {
    let (p, q) = rational(t).ok_or_else(|| {
        Error::Parameter(format!("t = {t} is not rational with denominator <= 1000; the torus does not close"))
    })?;
    homogeneous_torus_pq(p, q)
}

pub fn homogeneous_torus_pq(p: i64, q: i64) -> Result<SurfaceDef> {
    if q <= 0 {
        return Err(Error::Parameter("denominator must be positive".into()));
    }
    if p.abs() <= q {
        return Err(Error::Parameter(format!("|t| = |{p}/{q}| must exceed 1")));
    }
    Ok(SurfaceDef {
        name: "homogeneous_torus".into(),
        params: vec![("t".into(), p as f64 / q as f64)],
        model: Model::HomogeneousTorus { p, q },
    })
}

impl SurfaceDef {
    /// Resolve a catalog name with its JSON parameter block.
    pub fn from_config(name: &str, params: &serde_json::Value) -> Result<Self> {
        let params = if params.is_null() {
            serde_json::json!({})
        } else {
            params.clone()
        };
        let p: Params = serde_json::from_value(params)
            .map_err(|e| Error::Config(format!("surface parameters: {e}")))?;
        match name {
            "plane" => plane(p.dim.unwrap_or(4)),
            "sphere" => sphere(p.r.unwrap_or(1.0)),
            "clifford_torus" => Ok(clifford_torus()),
            "homogeneous_torus" => match (p.t, p.p, p.q) {
                (Some(t), None, None) => homogeneous_torus(t),
                (None, Some(a), Some(b)) => homogeneous_torus_pq(a, b),
                (None, None, None) => homogeneous_torus(2.0),
                _ => Err(Error::Config("homogeneous_torus takes either t or p and q".into())),
            },
            "product" => {
                let c1 = p.curve1.unwrap_or(CurveKind::Circle { r: 1.0 });
                let c2 = p.curve2.unwrap_or(CurveKind::Ellipse { a: 1.0, b: 0.9 });
                product_surface(Curve::new(c1)?, Curve::new(c2)?)
            }
            other => Err(Error::Config(format!("unknown surface '{other}'"))),
        }
    }

    pub fn ambient(&self) -> Ambient {
        match &self.model {
            Model::Plane { dim } => Ambient::SpaceForm {
                sig: Signature::euclidean(*dim),
                c: 0.0,
            },
            Model::Sphere { .. } => Ambient::SpaceForm {
                sig: Signature::euclidean(3),
                c: 0.0,
            },
            Model::Product { first, second } => Ambient::SpaceForm {
                sig: Signature::euclidean(first.dim() + second.dim()),
                c: 0.0,
            },
            Model::HomogeneousTorus { .. } => Ambient::LightCone {
                sig: Signature { positive: 4, negative: 2 },
            },
        }
    }

    pub fn signature(&self) -> Signature {
        match self.ambient() {
            Ambient::SpaceForm { sig, .. } | Ambient::LightCone { sig } => sig,
        }
    }

    /// Space-form curvature, `None` for light-cone input.
    pub fn curvature(&self) -> Option<f64> {
        match self.ambient() {
            Ambient::SpaceForm { c, .. } => Some(c),
            Ambient::LightCone { .. } => None,
        }
    }

    /// Grid covering one period (or a fixed patch) of the parameter domain.
    /// Uses the spectral scheme on periodic axes; see [`Scheme`].
    pub fn grid(&self, nu: usize, nv: usize) -> Result<GridSpec> {
        self.grid_with(nu, nv, Scheme::Spectral)
    }

    pub fn grid_with(&self, nu: usize, nv: usize, scheme: Scheme) -> Result<GridSpec> {
        let spec = match &self.model {
            Model::Plane { .. } => Ok(GridSpec::new(nu, nv, 2.0, 2.0, false, false)?.with_origin(-1.0, -1.0)),
            Model::Sphere { .. } => Ok(GridSpec::new(nu, nv, 2.0 * PI, 2.5, true, false)?.with_origin(0.0, -1.25)),
            Model::Product { first, second } => GridSpec::torus(nu, nv, first.length(), second.length()),
            Model::HomogeneousTorus { p, q } => {
                let t = *p as f64 / *q as f64;
                let sigma = (t * t - 1.0).sqrt();
                GridSpec::torus(nu, nv, 2.0 * PI * sigma * *q as f64, 2.0 * PI)
            }
        }?;
        Ok(spec.with_scheme(scheme))
    }

    /// Rotation `α` such that `e^{-2iα} κ` is real in the grid coordinate.
    pub fn adapted_phase(&self) -> f64 {
        match self.model {
            Model::HomogeneousTorus { .. } => PI / 4.0,
            _ => 0.0,
        }
    }

    pub fn position(&self, u: f64, v: f64) -> Vec<f64> {
        self.jet(u, v).0
    }

    /// Position and its first partial derivatives.
    pub fn jet(&self, u: f64, v: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        match &self.model {
            Model::Plane { dim } => {
                let mut x = vec![0.0; *dim];
                let mut xu = vec![0.0; *dim];
                let mut xv = vec![0.0; *dim];
                x[0] = u;
                x[1] = v;
                xu[0] = 1.0;
                xv[1] = 1.0;
                (x, xu, xv)
            }
            Model::Sphere { r } => {
                let (sech, th) = (1.0 / v.cosh(), v.tanh());
                (
                    vec![r * sech * u.cos(), r * sech * u.sin(), r * th],
                    vec![-r * sech * u.sin(), r * sech * u.cos(), 0.0],
                    vec![-r * sech * th * u.cos(), -r * sech * th * u.sin(), r * sech * sech],
                )
            }
            Model::Product { first, second } => {
                let (a, b) = (first.point(u), second.point(v));
                let (ta, tb) = (first.tangent(u), second.tangent(v));
                let za = vec![0.0; first.dim()];
                let zb = vec![0.0; second.dim()];
                (
                    [a, b].concat(),
                    [ta, zb].concat(),
                    [za, tb].concat(),
                )
            }
            Model::HomogeneousTorus { p, q } => {
                let t = *p as f64 / *q as f64;
                let sigma = (t * t - 1.0).sqrt();
                let phi = u / sigma;
                let (ct, st) = ((t * phi).cos(), (t * phi).sin());
                let (cv, sv) = (v.cos(), v.sin());
                let (cp, sp) = (phi.cos(), phi.sin());
                let k = t / sigma;
                (
                    vec![ct * cv, ct * sv, st * cv, st * sv, cp, sp],
                    vec![-k * st * cv, -k * st * sv, k * ct * cv, k * ct * sv, -sp / sigma, cp / sigma],
                    vec![-ct * sv, ct * cv, -st * sv, st * cv, 0.0, 0.0],
                )
            }
        }
    }

    pub fn sample(&self, spec: &GridSpec) -> Field {
        Field::from_real_fn(*spec, self.signature(), |u, v| self.position(u, v))
    }

    /// Closed-form `x_u`, `x_v` on the grid.
    pub fn sample_derivatives(&self, spec: &GridSpec) -> (Field, Field) {
        let fu = Field::from_real_fn(*spec, self.signature(), |u, v| self.jet(u, v).1);
        let fv = Field::from_real_fn(*spec, self.signature(), |u, v| self.jet(u, v).2);
        (fu, fv)
    }

    /// Known parallel orthonormal normal frame `{(β,0), (0,β̃)}` of a product
    /// of planar curves.
    pub fn product_normals(&self, u: f64, v: f64) -> Option<[Vec<f64>; 2]> {
        match &self.model {
            Model::Product { first, second } => {
                let b1 = first.normal(u)?;
                let b2 = second.normal(v)?;
                Some([[b1, vec![0.0; 2]].concat(), [vec![0.0; 2], b2].concat()])
            }
            _ => None,
        }
    }

    /// Curvatures `(k(u), k̃(v))` of a product of planar curves.
    pub fn product_curvatures(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        match &self.model {
            Model::Product { first, second } => Some((first.curvature(u)?, second.curvature(v)?)),
            _ => None,
        }
    }

    /// Max deviation from the quadric (`<x,x> = 0` for light-cone input,
    /// `<x,x> = 1/c` for curved space forms, none for flat ones).
    pub fn quadric_defect(&self, spec: &GridSpec) -> f64 {
        let sig = self.signature();
        let target = match self.ambient() {
            Ambient::LightCone { .. } => 0.0,
            Ambient::SpaceForm { c, .. } if c != 0.0 => 1.0 / c,
            Ambient::SpaceForm { .. } => return 0.0,
        };
        let f = self.sample(spec);
        (0..spec.len())
            .map(|p| (sig.dot(f.at(p), f.at(p)).re - target).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn homogeneous_torus_is_null_and_homogeneous() {
        let s = homogeneous_torus(2.0).unwrap();
        let spec = s.grid(32, 32).unwrap();
        assert!(s.quadric_defect(&spec) < 1e-14);
        let sig = s.signature();
        for &(u, v) in &[(0.1, 0.2), (3.0, -1.0), (7.7, 2.2)] {
            let (_, xu, xv) = s.jet(u, v);
            assert!((sig.dot(&xu, &xu) - 1.0).abs() < 1e-13);
            assert!((sig.dot(&xv, &xv) - 1.0).abs() < 1e-13);
            assert!(sig.dot(&xu, &xv).abs() < 1e-13);
        }
    }

    #[test]
    fn homogeneous_torus_closes() {
        let s = homogeneous_torus(1.5).unwrap();
        let spec = s.grid(16, 16).unwrap();
        let a = s.position(0.3, 0.4);
        let b = s.position(0.3 + spec.lu, 0.4 + spec.lv);
        let gap = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-12, "{gap}");
    }

    #[test]
    fn homogeneous_torus_parameter_errors() {
        assert!(matches!(homogeneous_torus(1.0), Err(Error::Parameter(_))));
        assert!(matches!(homogeneous_torus(-0.5), Err(Error::Parameter(_))));
        assert!(matches!(homogeneous_torus(std::f64::consts::SQRT_2 + 1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn ellipse_arc_length() {
        let e = Curve::ellipse(1.0, 0.8).unwrap();
        assert!(e.arc_length_defect(1000) < 1e-12);
        let l = e.length();
        let a = e.point(0.0);
        let b = e.point(l);
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        // curvature of an ellipse at the end of the major axis is a/b²
        assert!((e.curvature(0.0).unwrap() - 1.0 / 0.64).abs() < 1e-10);
    }

    #[test]
    fn raw_parametrization_rejected() {
        let raw = Curve::unparametrized(CurveKind::Ellipse { a: 1.0, b: 0.8 }).unwrap();
        let err = product_surface(Curve::circle(1.0).unwrap(), raw);
        assert!(matches!(err, Err(Error::Parameter(_))));
    }

    #[test]
    fn circle_left_normal_and_curvature() {
        let c = Curve::circle(2.0).unwrap();
        let s = 0.7;
        let x = c.point(s);
        let n = c.normal(s).unwrap();
        // left normal of a counter-clockwise circle points to the centre
        assert!((n[0] + x[0] / 2.0).abs() < 1e-14 && (n[1] + x[1] / 2.0).abs() < 1e-14);
        assert!((c.curvature(s).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn twisted_curve_unit_speed() {
        let c = Curve::twisted(0.3).unwrap();
        assert!(c.arc_length_defect(500) < 1e-12);
        assert!(c.normal(0.0).is_none());
    }

    #[test]
    fn closed_form_derivatives_match_fd() {
        for s in [
            clifford_torus(),
            sphere(1.3).unwrap(),
            homogeneous_torus(2.0).unwrap(),
            product_surface(Curve::circle(1.0).unwrap(), Curve::ellipse(1.0, 0.9).unwrap()).unwrap(),
        ] {
            let spec = s.grid(64, 64).unwrap();
            let x = s.sample(&spec);
            let (xu, xv) = s.sample_derivatives(&spec);
            let pts = spec.interior();
            let eu = x.d_u().sub(&xu).unwrap().sup_over(&pts);
            let ev = x.d_v().sub(&xv).unwrap().sup_over(&pts);
            assert!(eu < 1e-5 && ev < 1e-5, "{}: {eu} {ev}", s.name);
        }
    }

    #[test]
    fn catalog_by_name() {
        let s = SurfaceDef::from_config("homogeneous_torus", &serde_json::json!({"t": 2.0})).unwrap();
        assert_eq!(s.params[0].1, 2.0);
        let p = SurfaceDef::from_config(
            "product",
            &serde_json::json!({"curve1": {"kind": "circle", "r": 1.0}, "curve2": {"kind": "twisted", "eps": 0.2}}),
        )
        .unwrap();
        assert_eq!(p.signature().dim(), 5);
        assert!(matches!(SurfaceDef::from_config("klein_bottle", &serde_json::Value::Null), Err(Error::Config(_))));
        assert_eq!(CATALOG.len(), 5);
    }
}
