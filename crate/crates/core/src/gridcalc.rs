//! Uniform `(u, v)` grids carrying ambient-vector-valued fields.
//!
//! Derivatives use the fourth-order compact (Padé) central scheme
//! `f'_{i-1}/4 + f'_i + f'_{i+1}/4 = 3 (f_{i+1} - f_{i-1}) / (4h)`, cyclic on
//! periodic axes and closed by the fourth-order one-sided rows
//! `f'_0 + 3 f'_1 = (-17/6 f_0 + 3/2 f_1 + 3/2 f_2 - 1/6 f_3) / h` otherwise.
//! Second derivatives are compositions of first derivatives.
//!
//! A grid may instead select [`Scheme::Spectral`], which replaces the compact
//! scheme on periodic axes by the exact derivative of the trigonometric
//! interpolant. Open axes always use the compact scheme.
//!
//! Grid point `(i, j)` sits at `(u0 + i h_u, v0 + j h_v)` and is stored at
//! flat index `j * nu + i`.

use std::io::{BufRead, Write};

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pseudolinalg::Signature;

pub const MIN_POINTS: usize = 8;
pub const DEFAULT_MARGIN: usize = 12;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    U,
    V,
}

/// Derivative scheme on periodic axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Compact4,
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nu: usize,
    pub nv: usize,
    pub lu: f64,
    pub lv: f64,
    #[serde(default)]
    pub u0: f64,
    #[serde(default)]
    pub v0: f64,
    pub periodic_u: bool,
    pub periodic_v: bool,
    /// Points excluded from reports at each end of a non-periodic axis.
    #[serde(default = "default_margin")]
    pub margin: usize,
    #[serde(default)]
    pub scheme: Scheme,
}

fn default_margin() -> usize {
    DEFAULT_MARGIN
}

impl GridSpec {
    pub fn new(nu: usize, nv: usize, lu: f64, lv: f64, periodic_u: bool, periodic_v: bool) -> Result<Self> {
        let spec = Self {
            nu,
            nv,
            lu,
            lv,
            u0: 0.0,
            v0: 0.0,
            periodic_u,
            periodic_v,
            margin: DEFAULT_MARGIN,
            scheme: Scheme::Compact4,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Doubly periodic grid on `[0, lu) x [0, lv)`.
    pub fn torus(nu: usize, nv: usize, lu: f64, lv: f64) -> Result<Self> {
        Self::new(nu, nv, lu, lv, true, true)
    }

    pub fn with_origin(mut self, u0: f64, v0: f64) -> Self {
        self.u0 = u0;
        self.v0 = v0;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_margin(mut self, margin: usize) -> Self {
        self.margin = margin;
        self
    }

    /// Same nodes, both axes treated as open with the default margin.
    pub fn opened(mut self) -> Self {
        self.periodic_u = false;
        self.periodic_v = false;
        if self.margin == 0 {
            self.margin = DEFAULT_MARGIN;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu < MIN_POINTS {
            return Err(Error::Stencil {
                axis: 'u',
                points: self.nu,
                needed: MIN_POINTS,
            });
        }
        if self.nv < MIN_POINTS {
            return Err(Error::Stencil {
                axis: 'v',
                points: self.nv,
                needed: MIN_POINTS,
            });
        }
        if !(self.lu > 0.0 && self.lv > 0.0) {
            return Err(Error::Parameter("grid lengths must be positive".into()));
        }
        Ok(())
    }

    /// Step along u. Periodic axes place `nu` points on the period; open axes
    /// include both endpoints.
    pub fn hu(&self) -> f64 {
        if self.periodic_u {
            self.lu / self.nu as f64
        } else {
            self.lu / (self.nu - 1) as f64
        }
    }

    pub fn hv(&self) -> f64 {
        if self.periodic_v {
            self.lv / self.nv as f64
        } else {
            self.lv / (self.nv - 1) as f64
        }
    }

    pub fn len(&self) -> usize {
        self.nu * self.nv
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nu + i
    }

    #[inline]
    pub fn coords(&self, p: usize) -> (usize, usize) {
        (p % self.nu, p / self.nu)
    }

    #[inline]
    pub fn u(&self, i: usize) -> f64 {
        self.u0 + i as f64 * self.hu()
    }

    #[inline]
    pub fn v(&self, j: usize) -> f64 {
        self.v0 + j as f64 * self.hv()
    }

    /// Node where marched systems are seeded: index 0 on periodic axes, the
    /// middle of open ones (away from one-sided boundary stencils).
    pub fn base(&self) -> (usize, usize) {
        let pick = |n: usize, periodic: bool| if periodic { 0 } else { n / 2 };
        (pick(self.nu, self.periodic_u), pick(self.nv, self.periodic_v))
    }

    pub fn base_index(&self) -> usize {
        let (i, j) = self.base();
        self.index(i, j)
    }

    pub fn closed(&self) -> bool {
        self.periodic_u && self.periodic_v
    }

    pub fn n(&self, axis: Axis) -> usize {
        match axis {
            Axis::U => self.nu,
            Axis::V => self.nv,
        }
    }

    pub fn h(&self, axis: Axis) -> f64 {
        match axis {
            Axis::U => self.hu(),
            Axis::V => self.hv(),
        }
    }

    pub fn periodic(&self, axis: Axis) -> bool {
        match axis {
            Axis::U => self.periodic_u,
            Axis::V => self.periodic_v,
        }
    }

    fn range(&self, axis: Axis) -> std::ops::Range<usize> {
        let n = self.n(axis);
        if self.periodic(axis) {
            0..n
        } else {
            let m = self.margin.min(n / 2);
            m..n - m
        }
    }

    /// Flat indices of the points reported on (margins removed).
    pub fn interior(&self) -> Vec<usize> {
        let ru = self.range(Axis::U);
        let rv = self.range(Axis::V);
        rv.flat_map(|j| ru.clone().map(move |i| j * self.nu + i))
            .collect()
    }

    pub fn is_interior(&self, p: usize) -> bool {
        let (i, j) = self.coords(p);
        self.range(Axis::U).contains(&i) && self.range(Axis::V).contains(&j)
    }

    /// The grid with both point counts doubled over the same domain.
    pub fn refined(&self) -> Self {
        let mut s = *self;
        s.nu = if self.periodic_u { 2 * self.nu } else { 2 * self.nu - 1 };
        s.nv = if self.periodic_v { 2 * self.nv } else { 2 * self.nv - 1 };
        s.margin *= 2;
        s
    }
}

/// Compact fourth-order first-derivative operator along one grid line.
#[derive(Debug, Clone)]
pub struct Pade {
    n: usize,
    h: f64,
    periodic: bool,
    // Thomas factors of the (non-cyclic part of the) tridiagonal matrix.
    sub: Vec<f64>,
    cprime: Vec<f64>,
    denom: Vec<f64>,
    // Sherman–Morrison correction for the cyclic case.
    z: Vec<f64>,
    gamma: f64,
    corner: f64,
    fact_den: f64,
}

impl Pade {
    pub fn new(n: usize, h: f64, periodic: bool) -> Result<Self> {
        if n < 5 {
            return Err(Error::Stencil {
                axis: '?',
                points: n,
                needed: 5,
            });
        }
        let mut a = vec![0.25; n];
        let mut b = vec![1.0; n];
        let mut c = vec![0.25; n];
        let corner = 0.25;
        let mut gamma = 0.0;
        if periodic {
            gamma = -b[0];
            b[0] -= gamma;
            b[n - 1] -= corner * corner / gamma;
        } else {
            c[0] = 3.0;
            a[n - 1] = 3.0;
        }
        a[0] = 0.0;
        c[n - 1] = 0.0;
        let mut cprime = vec![0.0; n];
        let mut denom = vec![0.0; n];
        denom[0] = b[0];
        cprime[0] = c[0] / denom[0];
        for i in 1..n {
            denom[i] = b[i] - a[i] * cprime[i - 1];
            cprime[i] = c[i] / denom[i];
        }
        let mut op = Self {
            n,
            h,
            periodic,
            sub: a,
            cprime,
            denom,
            z: vec![],
            gamma,
            corner,
            fact_den: 1.0,
        };
        if periodic {
            let mut u = vec![0.0; n];
            u[0] = gamma;
            u[n - 1] = corner;
            let z = op.thomas_real(&u);
            op.fact_den = 1.0 + z[0] + corner * z[n - 1] / gamma;
            op.z = z;
        }
        Ok(op)
    }

    fn thomas_real(&self, r: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = vec![0.0; n];
        x[0] = r[0] / self.denom[0];
        for i in 1..n {
            x[i] = (r[i] - self.sub[i] * x[i - 1]) / self.denom[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.cprime[i] * x[i + 1];
        }
        x
    }

    fn thomas(&self, r: &mut [Complex64]) {
        let n = self.n;
        r[0] /= self.denom[0];
        for i in 1..n {
            let prev = r[i - 1];
            r[i] = (r[i] - prev * self.sub[i]) / self.denom[i];
        }
        for i in (0..n - 1).rev() {
            let next = r[i + 1];
            r[i] -= next * self.cprime[i];
        }
    }

    /// Derivative of the samples `f` (length `n`) written into `out`.
    pub fn apply(&self, f: &[Complex64], out: &mut [Complex64]) {
        let n = self.n;
        let k = 0.75 / self.h;
        if self.periodic {
            for i in 0..n {
                out[i] = (f[(i + 1) % n] - f[(i + n - 1) % n]) * k;
            }
            self.thomas(out);
            let fact = (out[0] + out[n - 1] * (self.corner / self.gamma)) / self.fact_den;
            for i in 0..n {
                out[i] -= fact * self.z[i];
            }
        } else {
            let ih = 1.0 / self.h;
            out[0] = (f[0] * (-17.0 / 6.0) + f[1] * 1.5 + f[2] * 1.5 - f[3] * (1.0 / 6.0)) * ih;
            for i in 1..n - 1 {
                out[i] = (f[i + 1] - f[i - 1]) * k;
            }
            out[n - 1] = -(f[n - 1] * (-17.0 / 6.0) + f[n - 2] * 1.5 + f[n - 3] * 1.5
                - f[n - 4] * (1.0 / 6.0))
                * ih;
            self.thomas(out);
        }
    }
}

/// Fourier (spectral) first derivative on a periodic line; exact for
/// trigonometric polynomials below Nyquist. The Nyquist mode of an even
/// grid is dropped.
#[derive(Clone)]
struct Spectral {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    mult: Vec<Complex64>,
}

impl Spectral {
    fn new(n: usize, period: f64) -> Self {
        let mut planner = FftPlanner::new();
        let k = 2.0 * PI / period / n as f64;
        let mult = (0..n)
            .map(|m| {
                if n % 2 == 0 && m == n / 2 {
                    return Complex64::new(0.0, 0.0);
                }
                let w = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
                Complex64::new(0.0, w * k)
            })
            .collect();
        Self {
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            mult,
        }
    }

    fn apply(&self, f: &[Complex64], out: &mut [Complex64]) {
        out.copy_from_slice(f);
        self.fwd.process(out);
        for (o, m) in out.iter_mut().zip(&self.mult) {
            *o *= m;
        }
        self.inv.process(out);
    }
}

const STENCIL: usize = 6;
const OFFSETS: [i64; STENCIL] = [-2, -1, 0, 1, 2, 3];

/// Quintic Lagrange weights for nodes `-2..=3` at offset `t` in `[0, 1]`.
fn lagrange_weights(t: f64) -> [f64; STENCIL] {
    let mut w = [1.0; STENCIL];
    for (k, &o) in OFFSETS.iter().enumerate() {
        for &q in OFFSETS.iter() {
            if q != o {
                w[k] *= (t - q as f64) / (o - q) as f64;
            }
        }
    }
    w
}

/// Six-point stencil around fractional position `x` on a line of `n` nodes.
/// Open lines shift the stencil inward.
fn lagrange_stencil(x: f64, n: usize, periodic: bool) -> ([usize; STENCIL], [f64; STENCIL]) {
    let base = if periodic {
        x.floor() as i64
    } else {
        (x.floor() as i64).clamp(2, n as i64 - 4)
    };
    let w = lagrange_weights(x - base as f64);
    let idx = OFFSETS.map(|o| (base + o).rem_euclid(n as i64) as usize);
    (idx, w)
}

/// A sampled field: every grid point carries `dim` complex components,
/// interpreted as a vector of the pseudo-Euclidean space `sig`.
/// Real-valued fields simply carry zero imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    spec: GridSpec,
    sig: Signature,
    data: Vec<Complex64>,
}

impl Field {
    pub fn zeros(spec: GridSpec, sig: Signature) -> Self {
        Self {
            spec,
            sig,
            data: vec![Complex64::new(0.0, 0.0); spec.len() * sig.dim()],
        }
    }

    pub fn from_data(spec: GridSpec, sig: Signature, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != spec.len() * sig.dim() {
            return Err(Error::Dimension {
                expected: spec.len() * sig.dim(),
                got: data.len(),
            });
        }
        Ok(Self { spec, sig, data })
    }

    /// Build by evaluating `f(p, out)` at every flat index.
    pub fn build(spec: GridSpec, sig: Signature, mut f: impl FnMut(usize, &mut [Complex64])) -> Self {
        let dim = sig.dim();
        let mut data = vec![Complex64::new(0.0, 0.0); spec.len() * dim];
        for (p, chunk) in data.chunks_mut(dim).enumerate() {
            f(p, chunk);
        }
        Self { spec, sig, data }
    }

    /// Real field sampled from a closed form in `(u, v)`.
    pub fn from_real_fn(spec: GridSpec, sig: Signature, f: impl Fn(f64, f64) -> Vec<f64>) -> Self {
        Self::build(spec, sig, |p, out| {
            let (i, j) = spec.coords(p);
            let vals = f(spec.u(i), spec.v(j));
            for (o, x) in out.iter_mut().zip(vals) {
                *o = Complex64::new(x, 0.0);
            }
        })
    }

    pub fn scalar(spec: GridSpec, f: impl FnMut(usize) -> Complex64) -> Self {
        let mut f = f;
        Self::build(spec, Signature::euclidean(1), |p, out| out[0] = f(p))
    }

    pub fn scalar_fn(spec: GridSpec, f: impl Fn(f64, f64) -> Complex64) -> Self {
        Self::scalar(spec, |p| {
            let (i, j) = spec.coords(p);
            f(spec.u(i), spec.v(j))
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn sig(&self) -> Signature {
        self.sig
    }

    pub fn dim(&self) -> usize {
        self.sig.dim()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, p: usize) -> &[Complex64] {
        let d = self.dim();
        &self.data[p * d..(p + 1) * d]
    }

    #[inline]
    pub fn at_mut(&mut self, p: usize) -> &mut [Complex64] {
        let d = self.dim();
        &mut self.data[p * d..(p + 1) * d]
    }

    /// Scalar value (first component).
    #[inline]
    pub fn val(&self, p: usize) -> Complex64 {
        self.data[p * self.dim()]
    }

    /// Real parts at `p`.
    pub fn real_at(&self, p: usize) -> Vec<f64> {
        self.at(p).iter().map(|z| z.re).collect()
    }

    /// Reinterpret the same samples on another grid description with the
    /// same node counts (e.g. to open a periodic axis).
    pub fn with_spec(mut self, spec: GridSpec) -> Result<Self> {
        if spec.nu != self.spec.nu || spec.nv != self.spec.nv {
            return Err(Error::Dimension {
                expected: self.spec.len(),
                got: spec.len(),
            });
        }
        self.spec = spec;
        Ok(self)
    }

    pub fn with_sig(mut self, sig: Signature) -> Result<Self> {
        if sig.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: sig.dim(),
            });
        }
        self.sig = sig;
        Ok(self)
    }

    pub fn component(&self, k: usize) -> Field {
        Field::scalar(self.spec, |p| self.at(p)[k])
    }

    pub fn map(&self, sig: Signature, mut f: impl FnMut(usize, &[Complex64], &mut [Complex64])) -> Field {
        Field::build(self.spec, sig, |p, out| f(p, self.at(p), out))
    }

    pub fn conj(&self) -> Field {
        Field {
            spec: self.spec,
            sig: self.sig,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn real_part(&self) -> Field {
        Field {
            spec: self.spec,
            sig: self.sig,
            data: self.data.iter().map(|z| Complex64::new(z.re, 0.0)).collect(),
        }
    }

    pub fn scale(&self, k: Complex64) -> Field {
        Field {
            spec: self.spec,
            sig: self.sig,
            data: self.data.iter().map(|&z| z * k).collect(),
        }
    }

    pub fn axpy(&self, k: Complex64, other: &Field) -> Result<Field> {
        self.check(other)?;
        Ok(Field {
            spec: self.spec,
            sig: self.sig,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + k * b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.axpy(Complex64::new(-1.0, 0.0), other)
    }

    /// Pointwise bilinear pairing, returned as a scalar field.
    pub fn dot(&self, other: &Field) -> Result<Field> {
        self.check(other)?;
        Ok(Field::scalar(self.spec, |p| self.sig.dot(self.at(p), other.at(p))))
    }

    /// Pointwise `<self, conj(other)>`.
    pub fn dot_conj(&self, other: &Field) -> Result<Field> {
        self.check(other)?;
        Ok(Field::scalar(self.spec, |p| self.sig.dot_conj(self.at(p), other.at(p))))
    }

    fn check(&self, other: &Field) -> Result<()> {
        if self.sig != other.sig || self.spec.len() != other.spec.len() {
            return Err(Error::Dimension {
                expected: self.data.len(),
                got: other.data.len(),
            });
        }
        Ok(())
    }

    /// Maximum of `|component|` over the given points.
    pub fn sup_over(&self, points: &[usize]) -> f64 {
        points
            .iter()
            .flat_map(|&p| self.at(p).iter())
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn sup_interior(&self) -> f64 {
        self.sup_over(&self.spec.interior())
    }

    pub fn max_imag_over(&self, points: &[usize]) -> f64 {
        points
            .iter()
            .flat_map(|&p| self.at(p).iter())
            .map(|z| z.im.abs())
            .fold(0.0, f64::max)
    }

    /// Partial derivative along one axis.
    pub fn d(&self, axis: Axis) -> Field {
        let spec = self.spec;
        if spec.scheme == Scheme::Spectral && spec.periodic(axis) {
            return self.d_fine(axis);
        }
        let op = Pade::new(spec.n(axis), spec.h(axis), spec.periodic(axis))
            .expect("grid spec validated at construction");
        self.apply_lines(axis, |f, out| op.apply(f, out))
    }

    /// Partial derivative that is spectrally accurate along periodic axes
    /// (Padé on open axes). Used for the coefficients of marched systems,
    /// whose truncation error would otherwise accumulate along each line.
    pub fn d_fine(&self, axis: Axis) -> Field {
        let spec = self.spec;
        if !spec.periodic(axis) {
            return self.d(axis);
        }
        let period = spec.h(axis) * spec.n(axis) as f64;
        let op = Spectral::new(spec.n(axis), period);
        self.apply_lines(axis, |f, out| op.apply(f, out))
    }

    pub(crate) fn apply_lines(&self, axis: Axis, op: impl Fn(&[Complex64], &mut [Complex64])) -> Field {
        let spec = self.spec;
        let n = spec.n(axis);
        let dim = self.dim();
        let mut out = self.clone();
        let lines = match axis {
            Axis::U => spec.nv,
            Axis::V => spec.nu,
        };
        let at = |t: usize, l: usize| match axis {
            Axis::U => spec.index(t, l),
            Axis::V => spec.index(l, t),
        };
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut res = vec![Complex64::new(0.0, 0.0); n];
        for l in 0..lines {
            for k in 0..dim {
                for (t, x) in line.iter_mut().enumerate() {
                    *x = self.data[at(t, l) * dim + k];
                }
                op(&line, &mut res);
                for (t, x) in res.iter().enumerate() {
                    out.data[at(t, l) * dim + k] = *x;
                }
            }
        }
        out
    }

    pub fn d_u(&self) -> Field {
        self.d(Axis::U)
    }

    pub fn d_v(&self) -> Field {
        self.d(Axis::V)
    }

    /// Wirtinger derivative `∂_z = (∂_u - i ∂_v) / 2`.
    pub fn d_z(&self) -> Field {
        self.wirtinger(-1.0)
    }

    /// `∂_z̄ = (∂_u + i ∂_v) / 2`.
    pub fn d_zbar(&self) -> Field {
        self.wirtinger(1.0)
    }

    fn wirtinger(&self, sign: f64) -> Field {
        let fu = self.d_u();
        let fv = self.d_v();
        let k = I * sign;
        Field {
            spec: self.spec,
            sig: self.sig,
            data: fu
                .data
                .iter()
                .zip(&fv.data)
                .map(|(&a, &b)| (a + k * b) * 0.5)
                .collect(),
        }
    }

    /// Quintic Lagrange interpolation along one axis at fractional node
    /// position `x` on grid line `line`.
    pub fn sample_line(&self, axis: Axis, x: f64, line: usize, out: &mut [Complex64]) {
        let n = self.spec.n(axis);
        let (idx, w) = lagrange_stencil(x, n, self.spec.periodic(axis));
        for o in out.iter_mut() {
            *o = Complex64::new(0.0, 0.0);
        }
        for (&t, &wt) in idx.iter().zip(&w) {
            let p = match axis {
                Axis::U => self.spec.index(t, line),
                Axis::V => self.spec.index(line, t),
            };
            for (o, z) in out.iter_mut().zip(self.at(p)) {
                *o += z * wt;
            }
        }
    }

    /// Exact node value when `x` is integral, interpolated otherwise.
    pub fn sample(&self, axis: Axis, x: f64, line: usize, out: &mut [Complex64]) {
        if x.fract() == 0.0 && x >= 0.0 && (x as usize) < self.spec.n(axis) {
            let t = x as usize;
            let p = match axis {
                Axis::U => self.spec.index(t, line),
                Axis::V => self.spec.index(line, t),
            };
            out.copy_from_slice(self.at(p));
        } else {
            self.sample_line(axis, x, line, out);
        }
    }

    /// JSON header describing the grid and value layout.
    pub fn header_json(&self) -> serde_json::Value {
        serde_json::json!({
            "grid": self.spec,
            "signature": self.sig,
            "columns": self.csv_columns(),
        })
    }

    fn csv_columns(&self) -> Vec<String> {
        let mut cols = vec!["u".to_string(), "v".to_string()];
        for k in 0..self.dim() {
            cols.push(format!("c{k}_re"));
            cols.push(format!("c{k}_im"));
        }
        cols
    }

    /// One row per grid point: `u, v, c0_re, c0_im, ...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.csv_columns().join(","))?;
        for p in 0..self.spec.len() {
            let (i, j) = self.spec.coords(p);
            let mut row = format!("{:.17e},{:.17e}", self.spec.u(i), self.spec.v(j));
            for z in self.at(p) {
                row.push_str(&format!(",{:.17e},{:.17e}", z.re, z.im));
            }
            writeln!(w, "{row}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(spec: GridSpec, sig: Signature, r: R) -> Result<Field> {
        let mut lines = r.lines();
        lines
            .next()
            .ok_or_else(|| Error::Io("empty csv".into()))??;
        let dim = sig.dim();
        let mut data = Vec::with_capacity(spec.len() * dim);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Io(format!("bad csv value: {e}")))?;
            if vals.len() != 2 + 2 * dim {
                return Err(Error::Dimension {
                    expected: 2 + 2 * dim,
                    got: vals.len(),
                });
            }
            for k in 0..dim {
                data.push(Complex64::new(vals[2 + 2 * k], vals[3 + 2 * k]));
            }
        }
        Field::from_data(spec, sig, data)
    }
}

/// Periodic interpolation kernel: value at fractional offset `y` (node
/// units) from a node, for `n` equispaced samples of a period.
/// Fourier multipliers (including the `1/n` of the inverse transform) that
/// evaluate the trigonometric interpolant at `t + delta`. The Nyquist mode
/// of an even grid gets `cos(π delta)`, which keeps real data real.
fn shift_phases(n: usize, delta: f64) -> Vec<Complex64> {
    let inv = 1.0 / n as f64;
    (0..n)
        .map(|m| {
            if n % 2 == 0 && m == n / 2 {
                return Complex64::new((PI * delta).cos() * inv, 0.0);
            }
            let k = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
            Complex64::from_polar(inv, 2.0 * PI * k * delta / n as f64)
        })
        .collect()
}

/// Coefficient lookup for marched systems: a field pre-shifted by every
/// fractional offset `k / (2 SUBSTEPS)` that RK4 visits along `axis`.
/// Shifts are exact trigonometric interpolation on periodic axes and
/// six-point Lagrange interpolation on open ones.
#[derive(Debug, Clone)]
pub struct Sampler {
    axis: Axis,
    shifts: Vec<Field>,
}

impl Sampler {
    pub fn new(field: &Field, axis: Axis) -> Self {
        let spec = *field.spec();
        let n = spec.n(axis);
        let slots = 2 * SUBSTEPS;
        let mut planner = FftPlanner::new();
        let fft = (planner.plan_fft_forward(n), planner.plan_fft_inverse(n));
        let mut shifts = vec![field.clone()];
        for k in 1..slots {
            let delta = k as f64 / slots as f64;
            let shifted = if spec.periodic(axis) {
                let phase = shift_phases(n, delta);
                field.apply_lines(axis, |f, out| {
                    out.copy_from_slice(f);
                    fft.0.process(out);
                    for (o, ph) in out.iter_mut().zip(&phase) {
                        *o *= ph;
                    }
                    fft.1.process(out);
                })
            } else {
                field.apply_lines(axis, |f, out| {
                    for (t, o) in out.iter_mut().enumerate() {
                        let (idx, w) = lagrange_stencil(t as f64 + delta, n, false);
                        *o = idx.iter().zip(&w).map(|(&i, &wi)| f[i] * wi).sum();
                    }
                })
            };
            shifts.push(shifted);
        }
        Self { axis, shifts }
    }

    /// Value at fractional node position `x` along the axis, on grid line `line`.
    pub fn at(&self, x: f64, line: usize, out: &mut [Complex64]) {
        let slots = self.shifts.len();
        let base = x.floor();
        let scaled = (x - base) * slots as f64;
        let k = scaled.round();
        let spec = self.shifts[0].spec();
        let n = spec.n(self.axis);
        if (scaled - k).abs() < 1e-9 {
            let (mut t, mut k) = (base as i64, k as usize);
            if k == slots {
                t += 1;
                k = 0;
            }
            let t = if spec.periodic(self.axis) {
                t.rem_euclid(n as i64) as usize
            } else if t >= n as i64 - 1 && k == 0 {
                n - 1
            } else {
                t.clamp(0, n as i64 - 1) as usize
            };
            let p = match self.axis {
                Axis::U => spec.index(t, line),
                Axis::V => spec.index(line, t),
            };
            out.copy_from_slice(self.shifts[k].at(p));
        } else {
            self.shifts[0].sample_line(self.axis, x, line, out);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Form {
    /// `∫ f du dv`
    DuDv,
    /// `∫ f i dz∧dz̄ = 2 ∫ f du dv`
    IDzDzbar,
}

/// Quadrature of a scalar field: rectangle rule (spectrally accurate) on
/// periodic axes, trapezoid over the non-margin range on open axes.
pub fn integrate(f: &Field, form: Form) -> Result<Complex64> {
    integrate_over(f, form, None)
}

/// As [`integrate`], skipping points where `mask` is false.
pub fn integrate_over(f: &Field, form: Form, mask: Option<&[bool]>) -> Result<Complex64> {
    let spec = f.spec;
    for axis in [Axis::U, Axis::V] {
        if !spec.periodic(axis) && spec.margin == 0 {
            return Err(Error::Quadrature(format!(
                "{axis:?} axis is open and has no margin policy"
            )));
        }
    }
    let weights = |axis: Axis| -> Vec<f64> {
        let n = spec.n(axis);
        let h = spec.h(axis);
        if spec.periodic(axis) {
            vec![h; n]
        } else {
            let m = spec.margin.min(n / 2);
            let mut w = vec![0.0; n];
            for (t, wt) in w.iter_mut().enumerate().take(n - m).skip(m) {
                *wt = if t == m || t == n - m - 1 { h / 2.0 } else { h };
            }
            w
        }
    };
    let wu = weights(Axis::U);
    let wv = weights(Axis::V);
    let mut acc = Complex64::new(0.0, 0.0);
    for p in 0..spec.len() {
        if let Some(m) = mask {
            if !m[p] {
                continue;
            }
        }
        let (i, j) = spec.coords(p);
        acc += f.val(p) * (wu[i] * wv[j]);
    }
    Ok(match form {
        Form::DuDv => acc,
        Form::IDzDzbar => acc * 2.0,
    })
}

/// RK4 substeps per grid interval used by [`march_grid`].
pub const SUBSTEPS: usize = 16;

/// Classical RK4 along one line of `steps` grid intervals of size `h`, each
/// split into `substeps` RK4 steps. `rhs(pos, y, out)` receives the position
/// in node units. Returns the `steps + 1` nodal states, or the first step at
/// which the solution stopped being finite.
pub fn rk4_line<F>(
    steps: usize,
    h: f64,
    substeps: usize,
    y0: &[Complex64],
    mut rhs: F,
) -> std::result::Result<Vec<Vec<Complex64>>, usize>
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]),
{
    let d = y0.len();
    let sub = substeps.max(1);
    let hs = h / sub as f64;
    let dx = 1.0 / sub as f64;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(y0.to_vec());
    let zero = Complex64::new(0.0, 0.0);
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![zero; d], vec![zero; d], vec![zero; d], vec![zero; d], vec![zero; d]);
    let mut y = y0.to_vec();
    for step in 0..steps {
        for s in 0..sub {
            let x = step as f64 + s as f64 * dx;
            rhs(x, &y, &mut k1);
            for t in 0..d {
                tmp[t] = y[t] + k1[t] * (hs / 2.0);
            }
            rhs(x + dx / 2.0, &tmp, &mut k2);
            for t in 0..d {
                tmp[t] = y[t] + k2[t] * (hs / 2.0);
            }
            rhs(x + dx / 2.0, &tmp, &mut k3);
            for t in 0..d {
                tmp[t] = y[t] + k3[t] * hs;
            }
            // land exactly on the node so callers can read exact grid values
            let xe = if s + 1 == sub { (step + 1) as f64 } else { x + dx };
            rhs(xe, &tmp, &mut k4);
            for t in 0..d {
                y[t] += (k1[t] + k2[t] * 2.0 + k3[t] * 2.0 + k4[t]) * (hs / 6.0);
            }
        }
        if y.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(step + 1);
        }
        states.push(y.clone());
    }
    Ok(states)
}

/// Result of marching a first-order system over the whole grid.
#[derive(Debug, Clone)]
pub struct Marched {
    pub field: Field,
    /// Closure defect of the first (edge) march when that axis is periodic.
    pub holonomy_first: f64,
    /// Maximum closure defect of the transverse lines when periodic.
    pub holonomy_second: f64,
    /// State after one full loop from the base node, per axis `[u, v]`,
    /// for periodic axes.
    pub ends: [Option<Vec<Complex64>>; 2],
}

/// March a system from [`GridSpec::base`]: first along `first` to build
/// the edge, then along every transverse line. `rhs(axis, pu, pv, y, out)`
/// receives fractional node positions; one of them is always integral.
/// Periodic positions may run past `n` and wrap.
pub fn march_grid<F>(spec: GridSpec, sig: Signature, y0: &[Complex64], first: Axis, rhs: F) -> Result<Marched>
where
    F: FnMut(Axis, f64, f64, &[Complex64], &mut [Complex64]),
{
    march_grid_dir(spec, sig, y0, first, [false, false], rhs)
}

/// [`march_grid`] with periodic axes optionally walked in the negative
/// direction (`reverse` indexed `[u, v]`). A solution that decays along an
/// axis is then marched in its growing direction.
pub fn march_grid_dir<F>(
    spec: GridSpec,
    sig: Signature,
    y0: &[Complex64],
    first: Axis,
    reverse: [bool; 2],
    mut rhs: F,
) -> Result<Marched>
where
    F: FnMut(Axis, f64, f64, &[Complex64], &mut [Complex64]),
{
    let second = match first {
        Axis::U => Axis::V,
        Axis::V => Axis::U,
    };
    let (bu, bv) = spec.base();
    let base_of = |axis: Axis| match axis {
        Axis::U => bu,
        Axis::V => bv,
    };
    let b1 = base_of(first);
    let edge = march_line(spec, first, b1, reverse[first as usize], y0, |x, y, out| match first {
        Axis::U => rhs(Axis::U, x, bv as f64, y, out),
        Axis::V => rhs(Axis::V, bu as f64, x, y, out),
    })
    .map_err(|step| Error::Diverged { line: b1, step })?;
    let mut field = Field::zeros(spec, sig);
    let mut holonomy_second: f64 = 0.0;
    let b2 = base_of(second);
    let mut end_second = None;
    for (l, start) in edge.nodes.iter().enumerate() {
        let lf = l as f64;
        let line = march_line(spec, second, b2, reverse[second as usize], start, |x, y, out| match second {
            Axis::U => rhs(Axis::U, x, lf, y, out),
            Axis::V => rhs(Axis::V, lf, x, y, out),
        })
        .map_err(|step| Error::Diverged { line: l, step })?;
        holonomy_second = holonomy_second.max(line.closure);
        if l == b1 {
            end_second = line.end;
        }
        for (t, state) in line.nodes.iter().enumerate() {
            let p = match second {
                Axis::U => spec.index(t, l),
                Axis::V => spec.index(l, t),
            };
            field.at_mut(p).copy_from_slice(state);
        }
    }
    let ends = match first {
        Axis::U => [edge.end, end_second],
        Axis::V => [end_second, edge.end],
    };
    Ok(Marched {
        field,
        holonomy_first: edge.closure,
        holonomy_second,
        ends,
    })
}

struct LineStates {
    /// State at every node of the line, in index order.
    nodes: Vec<Vec<Complex64>>,
    /// `|y(b + n) - y(b)|` on periodic axes, zero otherwise.
    closure: f64,
    end: Option<Vec<Complex64>>,
}

/// One line from node `b`: once around a periodic axis, or out to both ends
/// of an open one.
fn march_line<F>(
    spec: GridSpec,
    axis: Axis,
    b: usize,
    reverse: bool,
    y0: &[Complex64],
    mut rhs: F,
) -> std::result::Result<LineStates, usize>
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]),
{
    let n = spec.n(axis);
    let h = spec.h(axis);
    let bf = b as f64;
    if spec.periodic(axis) {
        let nf = n as f64;
        let states = if reverse {
            rk4_line(n, -h, SUBSTEPS, y0, |x, y, out| rhs(bf + nf - x, y, out))?
        } else {
            rk4_line(n, h, SUBSTEPS, y0, |x, y, out| rhs(bf + x, y, out))?
        };
        let closure = states[n]
            .iter()
            .zip(&states[0])
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        let mut states = states;
        let end = states.pop();
        let mut nodes = vec![Vec::new(); n];
        for (k, st) in states.into_iter().enumerate() {
            let at = if reverse { (b + n - k) % n } else { (b + k) % n };
            nodes[at] = st;
        }
        return Ok(LineStates { nodes, closure, end });
    }
    let fwd = rk4_line(n - 1 - b, h, SUBSTEPS, y0, |x, y, out| rhs(bf + x, y, out))?;
    let back = rk4_line(b, -h, SUBSTEPS, y0, |x, y, out| rhs(bf - x, y, out))?;
    let mut nodes: Vec<Vec<Complex64>> = back.into_iter().rev().collect();
    nodes.extend(fwd.into_iter().skip(1));
    Ok(LineStates {
        nodes,
        closure: 0.0,
        end: None,
    })
}

/// Transport each seed vector from the base point by the linear law
/// `w_axis = apply(coef_axis, w)`, first along `u`, then along `v`.
/// `coef_u` and `coef_v` pack whatever per-point data `apply` needs.
pub fn transport_sections<F>(
    sig: Signature,
    seed: &[Vec<Complex64>],
    coef_u: &Field,
    coef_v: &Field,
    reverse: [bool; 2],
    apply: F,
) -> Result<Transported>
where
    F: Fn(&[Complex64], &[Complex64], &mut [Complex64]),
{
    transport_sections_from(Axis::U, sig, seed, coef_u, coef_v, reverse, apply)
}

/// [`transport_sections`] with the edge marched along `first`.
pub fn transport_sections_from<F>(
    first: Axis,
    sig: Signature,
    seed: &[Vec<Complex64>],
    coef_u: &Field,
    coef_v: &Field,
    reverse: [bool; 2],
    apply: F,
) -> Result<Transported>
where
    F: Fn(&[Complex64], &[Complex64], &mut [Complex64]),
{
    let spec = *coef_u.spec();
    let d = sig.dim();
    let m = seed.len();
    let su = Sampler::new(coef_u, Axis::U);
    let sv = Sampler::new(coef_v, Axis::V);
    let y0: Vec<Complex64> = seed.iter().flatten().copied().collect();
    let mut buf_u = vec![Complex64::new(0.0, 0.0); coef_u.dim()];
    let mut buf_v = vec![Complex64::new(0.0, 0.0); coef_v.dim()];
    let marched = march_grid_dir(spec, Signature::euclidean(m * d), &y0, first, reverse, |axis, pu, pv, y, out| {
        let coef: &[Complex64] = match axis {
            Axis::U => {
                su.at(pu, pv as usize, &mut buf_u);
                &buf_u
            }
            Axis::V => {
                sv.at(pv, pu as usize, &mut buf_v);
                &buf_v
            }
        };
        for k in 0..m {
            apply(coef, &y[k * d..(k + 1) * d], &mut out[k * d..(k + 1) * d]);
        }
    })?;
    let holonomy = marched.holonomy_first.max(marched.holonomy_second);
    let fields = (0..m)
        .map(|k| Field::build(spec, sig, |p, o| o.copy_from_slice(&marched.field.at(p)[k * d..(k + 1) * d])))
        .collect();
    let ends = marched
        .ends
        .map(|e| e.map(|e| e.chunks(d).map(|c| c.to_vec()).collect()));
    Ok(Transported { fields, holonomy, ends })
}

/// Sections transported by [`transport_sections`].
#[derive(Debug, Clone)]
pub struct Transported {
    pub fields: Vec<Field>,
    /// Largest loop-closure defect.
    pub holonomy: f64,
    /// Each section after one loop from the base node along `[u, v]`.
    pub ends: [Option<Vec<Vec<Complex64>>>; 2],
}

/// Max over interior points of `|∂_axis F - rhs(F)|`, i.e. how well a marched
/// field satisfies the equation along the axis it was *not* marched in.
pub fn compatibility_residual<F>(field: &Field, axis: Axis, mut rhs: F) -> f64
where
    F: FnMut(usize, &[Complex64], &mut [Complex64]),
{
    let df = field.d(axis);
    let mut out = vec![Complex64::new(0.0, 0.0); field.dim()];
    let mut worst: f64 = 0.0;
    for p in field.spec().interior() {
        rhs(p, field.at(p), &mut out);
        for (a, b) in df.at(p).iter().zip(&out) {
            worst = worst.max((a - b).norm());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn open(n: usize) -> GridSpec {
        GridSpec::new(n, n, 2.0, 3.0, false, false).unwrap()
    }

    fn torus(n: usize) -> GridSpec {
        GridSpec::torus(n, n, 2.0 * PI, 2.0 * PI).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn wirtinger_of_coordinates() {
        let spec = open(16);
        let u = Field::scalar_fn(spec, |u, _| c(u, 0.0));
        let v = Field::scalar_fn(spec, |_, v| c(v, 0.0));
        let all: Vec<usize> = (0..spec.len()).collect();
        let err = |f: &Field, want: Complex64| all.iter().map(|&p| (f.val(p) - want).norm()).fold(0.0, f64::max);
        assert!(err(&u.d_z(), c(0.5, 0.0)) < 1e-13);
        assert!(err(&v.d_z(), c(0.0, -0.5)) < 1e-13);
        assert!(err(&u.d_zbar(), c(0.5, 0.0)) < 1e-13);
        assert!(err(&v.d_zbar(), c(0.0, 0.5)) < 1e-13);
    }

    #[test]
    fn wirtinger_of_cosine_64() {
        let spec = torus(64);
        let f = Field::scalar_fn(spec, |u, _| c(u.cos(), 0.0));
        let fz = f.d_z();
        let err = (0..spec.len())
            .map(|p| {
                let (i, _) = spec.coords(p);
                (fz.val(p) - c(-spec.u(i).sin() / 2.0, 0.0)).norm()
            })
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn mixed_wirtinger_commute() {
        let spec = torus(32);
        let f = Field::scalar_fn(spec, |u, v| c((u + 2.0 * v).sin() * v.cos(), u.cos()));
        let a = f.d_z().d_zbar();
        let b = f.d_zbar().d_z();
        assert!(a.sub(&b).unwrap().sup_over(&(0..spec.len()).collect::<Vec<_>>()) < 1e-12);
    }

    #[test]
    fn conjugate_symmetry_on_real_fields() {
        let spec = torus(24);
        let f = Field::scalar_fn(spec, |u, v| c((u - v).sin() + (2.0 * v).cos(), 0.0));
        assert_eq!(f.d_z().conj(), f.d_zbar());
    }

    fn deriv_error(n: usize, periodic: bool) -> f64 {
        let spec = if periodic {
            torus(n)
        } else {
            GridSpec::new(n, n, 2.0, 2.0, false, false).unwrap()
        };
        let f = Field::scalar_fn(spec, |u, v| c((u + v).sin() * (0.5 * u).cos(), 0.0));
        let fu = f.d_u();
        let exact = |u: f64, v: f64| (u + v).cos() * (0.5 * u).cos() - 0.5 * (u + v).sin() * (0.5 * u).sin();
        spec.interior()
            .iter()
            .map(|&p| {
                let (i, j) = spec.coords(p);
                (fu.val(p).re - exact(spec.u(i), spec.v(j))).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn fourth_order_convergence() {
        // periodic torus has period 2π but the test field has period 4π in u;
        // use the open grid for the ratio and a periodic analytic field below
        let r_open = deriv_error(32, false) / deriv_error(63, false);
        assert!((8.0..=32.0).contains(&r_open), "open ratio {r_open}");
        let spec_err = |n: usize| {
            let spec = torus(n);
            let f = Field::scalar_fn(spec, |u, v| c((2.0 * u + v).sin(), 0.0));
            let fu = f.d_u();
            (0..spec.len())
                .map(|p| {
                    let (i, j) = spec.coords(p);
                    (fu.val(p).re - 2.0 * (2.0 * spec.u(i) + spec.v(j)).cos()).abs()
                })
                .fold(0.0, f64::max)
        };
        let r = spec_err(32) / spec_err(64);
        assert!((8.0..=32.0).contains(&r), "periodic ratio {r}");
    }

    #[test]
    fn integrate_examples() {
        let spec = torus(32);
        let one = Field::scalar(spec, |_| c(1.0, 0.0));
        assert!((integrate(&one, Form::DuDv).unwrap().re - 4.0 * PI * PI).abs() < 1e-12);
        let cu = Field::scalar_fn(spec, |u, _| c(u.cos(), 0.0));
        assert!(integrate(&cu, Form::DuDv).unwrap().norm() < 1e-12);
        let k = Field::scalar(spec, |_| c(1.0 / 8.0, 0.0));
        let w = 2.0 * integrate(&k, Form::IDzDzbar).unwrap().re;
        assert!((w - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn integrate_needs_margin_policy() {
        let spec = open(16).with_margin(0);
        let one = Field::scalar(spec, |_| c(1.0, 0.0));
        assert!(matches!(integrate(&one, Form::DuDv), Err(Error::Quadrature(_))));
    }

    #[test]
    fn integrate_translation_invariant() {
        let f = |u: f64, v: f64| c((u + 0.3).sin().exp() * (2.0 * v).cos().powi(2), 0.0);
        let a = integrate(&Field::scalar_fn(torus(40), f), Form::DuDv).unwrap();
        let shifted = torus(40).with_origin(0.37, -1.1);
        let b = integrate(&Field::scalar_fn(shifted, f), Form::DuDv).unwrap();
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn stencil_error_on_tiny_grid() {
        assert!(matches!(GridSpec::torus(4, 16, 1.0, 1.0), Err(Error::Stencil { axis: 'u', .. })));
    }

    #[test]
    fn rk4_constant_and_exponential() {
        let s = rk4_line(10, 0.1, 1, &[c(2.5, 0.0)], |_, _, out| out[0] = c(0.0, 0.0)).unwrap();
        assert!(s.iter().all(|y| y[0] == c(2.5, 0.0)));
        let s = rk4_line(64, 1.0 / 64.0, 1, &[c(1.0, 0.0)], |_, y, out| out[0] = y[0]).unwrap();
        assert!((s[64][0].re - std::f64::consts::E).abs() < 1e-8);
    }

    #[test]
    fn rk4_reports_divergence() {
        let r = rk4_line(100, 0.5, 1, &[c(1.0, 0.0)], |_, y, out| out[0] = y[0] * y[0] * y[0]);
        assert!(r.is_err());
        let spec = open(8);
        let err = march_grid(spec, Signature::euclidean(1), &[c(1.0, 0.0)], Axis::U, |_, _, _, y, out| {
            out[0] = y[0] * y[0] * y[0] * 100.0
        });
        assert!(matches!(err, Err(Error::Diverged { .. })));
    }

    #[test]
    fn march_grid_plane_wave() {
        // y = exp(i(u + 2v)) solves y_u = i y, y_v = 2i y
        let spec = torus(64);
        let m = march_grid(spec, Signature::euclidean(1), &[c(1.0, 0.0)], Axis::U, |ax, _, _, y, out| {
            out[0] = match ax {
                Axis::U => y[0] * c(0.0, 1.0),
                Axis::V => y[0] * c(0.0, 2.0),
            }
        })
        .unwrap();
        assert!(m.holonomy_first < 1e-7 && m.holonomy_second < 1e-6, "{} {}", m.holonomy_first, m.holonomy_second);
        let res = compatibility_residual(&m.field, Axis::U, |_, y, out| out[0] = y[0] * c(0.0, 1.0));
        assert!(res < 1e-4, "{res}");
    }

    #[test]
    fn csv_round_trip() {
        let spec = torus(8);
        let f = Field::from_real_fn(spec, Signature::new(2, 1).unwrap(), |u, v| vec![u, v, u * v]);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let g = Field::read_csv(spec, f.sig(), std::io::Cursor::new(buf)).unwrap();
        assert_eq!(f, g);
        assert_eq!(f.header_json()["grid"]["nu"], 8);
    }

    #[test]
    fn sampling_exact_on_quintics() {
        let spec = open(12);
        let f = Field::scalar_fn(spec, |u, _| c(u.powi(5) - u * u * u - u, 0.0));
        let mut out = [c(0.0, 0.0)];
        for x in [0.3, 4.5, 10.7] {
            f.sample_line(Axis::U, x, 3, &mut out);
            let u = x * spec.hu();
            assert!((out[0].re - (u.powi(5) - u * u * u - u)).abs() < 1e-11);
        }
    }

    #[test]
    fn fine_derivative_is_spectral_on_periodic_axes() {
        for n in [16, 17] {
            let spec = GridSpec::torus(n, 8, 3.0, 2.0).unwrap();
            let k = 2.0 * PI / 3.0;
            let f = Field::scalar_fn(spec, |u, _| c((2.0 * k * u).sin(), 0.0));
            let fu = f.d_fine(Axis::U);
            let err = (0..spec.len())
                .map(|p| (fu.val(p).re - 2.0 * k * (2.0 * k * spec.u(spec.coords(p).0)).cos()).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-12, "{n}: {err}");
        }
    }

    #[test]
    fn sampler_exact_on_trig_lines() {
        let spec = GridSpec::torus(16, 8, 2.0 * PI, 1.0).unwrap();
        let f = Field::scalar_fn(spec, |u, v| c((3.0 * u).cos() + (2.0 * u).sin(), v));
        let s = Sampler::new(&f, Axis::U);
        let mut out = [c(0.0, 0.0)];
        for x in [0.0, 0.125, 3.5, 15.875, 16.0, 2.3] {
            s.at(x, 2, &mut out);
            let u = x * spec.hu();
            let want = (3.0 * u).cos() + (2.0 * u).sin();
            let tol = if x == 2.3 { 1e-2 } else { 1e-12 };
            assert!((out[0].re - want).abs() < tol, "{x}: {} vs {want}", out[0].re);
        }
        let open = GridSpec::new(12, 8, 1.0, 1.0, false, false).unwrap();
        let g = Field::scalar_fn(open, |u, _| c(u.powi(5), 0.0));
        let s = Sampler::new(&g, Axis::U);
        for x in [0.375, 10.5, 11.0] {
            s.at(x, 0, &mut out);
            assert!((out[0].re - (x * open.hu()).powi(5)).abs() < 1e-12);
        }
    }
}
