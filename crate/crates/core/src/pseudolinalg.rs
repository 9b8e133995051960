//! Linear algebra on the pseudo-Euclidean spaces `R^m_s`.
//!
//! The metric is diagonal with the positive entries first:
//! `<x,x> = x_1^2 + ... + x_p^2 - x_{p+1}^2 - ... - x_{p+q}^2`.
//! Complex vectors are paired *bilinearly*; callers conjugate explicitly
//! whenever a Hermitian pairing such as `<kappa, kappa-bar>` is meant.

use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tolerances::{COND_MAX, NULL_TOL, SPAN_TOL};

/// Field of scalars a [`SigVector`] may carry.
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
{
    fn zero() -> Self;
    fn from_real(x: f64) -> Self;
    fn to_complex(self) -> Complex64;
    fn from_complex(z: Complex64) -> Self;
    fn modulus(self) -> f64;
    fn scale(self, k: f64) -> Self;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_real(x: f64) -> Self {
        x
    }
    fn to_complex(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
    fn from_complex(z: Complex64) -> Self {
        z.re
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn scale(self, k: f64) -> Self {
        self * k
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn to_complex(self) -> Complex64 {
        self
    }
    fn from_complex(z: Complex64) -> Self {
        z
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn scale(self, k: f64) -> Self {
        self * k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub positive: usize,
    pub negative: usize,
}

impl Signature {
    pub fn new(positive: usize, negative: usize) -> Result<Self> {
        if positive + negative == 0 {
            return Err(Error::Signature { positive, negative });
        }
        Ok(Self { positive, negative })
    }

    pub fn euclidean(dim: usize) -> Self {
        Self {
            positive: dim,
            negative: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.positive + self.negative
    }

    /// Diagonal entry `±1` of the metric at coordinate `i`.
    #[inline]
    pub fn metric(&self, i: usize) -> f64 {
        if i < self.positive {
            1.0
        } else {
            -1.0
        }
    }

    /// Signature of the light-cone ambient space `((1-<x,x>)/2, x, (1+<x,x>)/2)`
    /// built over this one.
    pub fn lightcone(&self) -> Self {
        Self {
            positive: self.positive + 1,
            negative: self.negative + 1,
        }
    }

    /// Bilinear pairing of two coordinate slices. Lengths are not checked here;
    /// the field layer guarantees them.
    #[inline]
    pub fn dot<T: Scalar>(&self, a: &[T], b: &[T]) -> T {
        let mut pos = T::zero();
        let mut neg = T::zero();
        for i in 0..self.positive {
            pos = pos + a[i] * b[i];
        }
        for i in self.positive..self.dim() {
            neg = neg + a[i] * b[i];
        }
        pos - neg
    }

    /// `<a, b>` for a complex `a` and a real `b`.
    #[inline]
    pub fn dot_cr(&self, a: &[Complex64], b: &[f64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..self.dim() {
            acc += a[i] * (b[i] * self.metric(i));
        }
        acc
    }

    /// `<a, conj(b)>`.
    #[inline]
    pub fn dot_conj(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..self.dim() {
            acc += a[i] * b[i].conj() * self.metric(i);
        }
        acc
    }

    /// Diagonal metric matrix `diag(1,..,1,-1,..,-1)`.
    pub fn metric_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            if i == j {
                self.metric(i)
            } else {
                0.0
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigVector<T: Scalar = f64> {
    signature: Signature,
    components: Vec<T>,
}

impl<T: Scalar> SigVector<T> {
    pub fn new(signature: Signature, components: Vec<T>) -> Result<Self> {
        if components.len() != signature.dim() {
            return Err(Error::Dimension {
                expected: signature.dim(),
                got: components.len(),
            });
        }
        Ok(Self {
            signature,
            components,
        })
    }

    pub fn zeros(signature: Signature) -> Self {
        Self {
            signature,
            components: vec![T::zero(); signature.dim()],
        }
    }

    /// Standard basis vector `e_i`.
    pub fn basis(signature: Signature, i: usize) -> Self {
        let mut v = Self::zeros(signature);
        v.components[i] = T::from_real(1.0);
        v
    }

    pub fn signature(&self) -> Signature {
        self.signature
    }

    pub fn components(&self) -> &[T] {
        &self.components
    }

    pub fn into_components(self) -> Vec<T> {
        self.components
    }

    pub fn sup_norm(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.modulus())
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, k: T) -> Self {
        Self {
            signature: self.signature,
            components: self.components.iter().map(|&c| c * k).collect(),
        }
    }

    pub fn axpy(&self, k: T, other: &Self) -> Result<Self> {
        self.check(other)?;
        Ok(Self {
            signature: self.signature,
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(&a, &b)| a + k * b)
                .collect(),
        })
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.signature != other.signature {
            return Err(Error::Dimension {
                expected: self.signature.dim(),
                got: other.signature.dim(),
            });
        }
        Ok(())
    }
}

impl SigVector<f64> {
    pub fn to_complex(&self) -> SigVector<Complex64> {
        SigVector {
            signature: self.signature,
            components: self.components.iter().map(|&x| x.to_complex()).collect(),
        }
    }
}

/// Bilinear pairing `<u, v>`.
pub fn dot<T: Scalar>(u: &SigVector<T>, v: &SigVector<T>) -> Result<T> {
    u.check(v)?;
    Ok(u.signature.dot(&u.components, &v.components))
}

/// Orthonormalise with respect to an indefinite metric.
///
/// Returns the frame together with the signs `ε_α = <w_α, w_α>`.
pub fn gram_schmidt(vectors: &[SigVector<f64>]) -> Result<(Vec<SigVector<f64>>, Vec<f64>)> {
    gram_schmidt_tol(vectors, NULL_TOL)
}

pub fn gram_schmidt_tol(
    vectors: &[SigVector<f64>],
    null_tol: f64,
) -> Result<(Vec<SigVector<f64>>, Vec<f64>)> {
    let mut out: Vec<SigVector<f64>> = Vec::with_capacity(vectors.len());
    let mut signs: Vec<f64> = Vec::with_capacity(vectors.len());
    for (index, v) in vectors.iter().enumerate() {
        let mut w = v.clone();
        for (e, &eps) in out.iter().zip(&signs) {
            let k = dot(&w, e)? * eps;
            w = w.axpy(-k, e)?;
        }
        let scale = v.sup_norm().max(f64::MIN_POSITIVE);
        let norm = dot(&w, &w)?;
        if norm.abs() <= null_tol * scale * scale {
            return Err(Error::DegenerateFrame {
                index,
                norm: norm.abs(),
            });
        }
        let eps = norm.signum();
        out.push(w.scaled(1.0 / norm.abs().sqrt()));
        signs.push(eps);
    }
    Ok((out, signs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSolution<T: Scalar> {
    pub coefficients: Vec<T>,
    pub residual: f64,
    pub condition: f64,
}

/// Express `target` in `basis` by Euclidean least squares on coordinates.
///
/// Coefficients are unique whenever the basis is independent, so the
/// (indefinite) signature plays no role here.
pub fn solve_in_basis<T: Scalar>(
    target: &SigVector<T>,
    basis: &[SigVector<T>],
) -> Result<BasisSolution<T>> {
    for b in basis {
        target.check(b)?;
    }
    let sol = solve_coords(target.components(), basis.iter().map(|b| b.components()), COND_MAX)?;
    if sol.residual > SPAN_TOL {
        return Err(Error::NotInSpan {
            residual: sol.residual,
        });
    }
    Ok(sol)
}

/// Least-squares core of [`solve_in_basis`] on raw coordinate slices. Never
/// fails on residual size; the caller decides what residual is acceptable.
pub fn solve_coords<'a, T, I>(target: &[T], basis: I, cond_max: f64) -> Result<BasisSolution<T>>
where
    T: Scalar + 'a,
    I: IntoIterator<Item = &'a [T]>,
{
    let cols: Vec<&[T]> = basis.into_iter().collect();
    let m = target.len();
    let k = cols.len();
    if k == 0 {
        let residual = target.iter().map(|c| c.modulus()).fold(0.0, f64::max);
        return Ok(BasisSolution {
            coefficients: vec![],
            residual,
            condition: 1.0,
        });
    }
    let a = DMatrix::<Complex64>::from_fn(m, k, |i, j| cols[j][i].to_complex());
    let rhs = DVector::<Complex64>::from_fn(m, |i, _| target[i].to_complex());
    let gram = a.adjoint() * &a;
    let sv = gram.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= cond_max) {
        return Err(Error::IllConditioned {
            cond: condition,
            max: cond_max,
        });
    }
    let coeffs = gram
        .lu()
        .solve(&(a.adjoint() * &rhs))
        .ok_or(Error::IllConditioned {
            cond: f64::INFINITY,
            max: cond_max,
        })?;
    let recon = &a * &coeffs;
    let residual = (0..m)
        .map(|i| (rhs[i] - recon[i]).norm())
        .fold(0.0, f64::max);
    Ok(BasisSolution {
        coefficients: coeffs.iter().map(|&z| T::from_complex(z)).collect(),
        residual,
        condition,
    })
}

/// A random element of the identity component of `O(p, q)`, obtained as the
/// exponential of `η K` with `K` antisymmetric and entries in `[-scale, scale]`.
///
/// Acting on the light cone these are the Möbius motions of `Q^n_r`.
pub fn random_isometry(sig: Signature, scale: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sig.dim();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let x: f64 = rng.gen_range(-scale..scale);
            k[(i, j)] = x;
            k[(j, i)] = -x;
        }
    }
    (sig.metric_matrix() * k).exp()
}

/// Greedy orthonormal frame of rank `rank` drawn from `candidates`: at each
/// stage the candidate whose orthogonalized remainder has the largest
/// `|<w,w>|` (relative to its size) is kept. Pairwise sums are tried when all
/// single candidates have become null.
pub fn complete_frame(
    sig: Signature,
    candidates: &[Vec<f64>],
    rank: usize,
    null_tol: f64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let sizes: Vec<f64> = candidates.iter().map(|c| c.iter().fold(0.0f64, |m, x| m.max(x.abs()))).collect();
    complete_frame_scaled(sig, candidates, &sizes, rank, null_tol)
}

/// As [`complete_frame`], scoring each candidate against a caller-supplied
/// reference size, e.g. the length of the vector before it was projected.
pub fn complete_frame_scaled(
    sig: Signature,
    candidates: &[Vec<f64>],
    sizes: &[f64],
    rank: usize,
    null_tol: f64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(rank);
    let mut signs: Vec<f64> = Vec::with_capacity(rank);
    let reduce = |w: &[f64], frame: &[Vec<f64>], signs: &[f64]| {
        let mut w = w.to_vec();
        for (e, &eps) in frame.iter().zip(signs) {
            let k = sig.dot(&w, e) * eps;
            for (wi, ei) in w.iter_mut().zip(e) {
                *wi -= k * ei;
            }
        }
        w
    };
    // size measured against the reference, so roundoff remainders score 0
    let score = |w: &[f64], orig: f64| {
        if orig == 0.0 {
            0.0
        } else {
            sig.dot(w, w).abs() / (orig * orig)
        }
    };
    while frame.len() < rank {
        let reduced: Vec<Vec<f64>> = candidates.iter().map(|c| reduce(c, &frame, &signs)).collect();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for (w, c) in reduced.iter().zip(sizes) {
            let sc = score(w, *c);
            if best.as_ref().map_or(true, |(b, _)| sc > *b) {
                best = Some((sc, w.clone()));
            }
        }
        if best.as_ref().map_or(true, |(b, _)| *b <= null_tol) {
            for i in 0..reduced.len() {
                for j in (i + 1)..reduced.len() {
                    let w: Vec<f64> = reduced[i].iter().zip(&reduced[j]).map(|(a, b)| a + b).collect();
                    let sc = score(&w, sizes[i].max(sizes[j]));
                    if best.as_ref().map_or(true, |(b, _)| sc > *b) {
                        best = Some((sc, w));
                    }
                }
            }
        }
        match best {
            Some((sc, w)) if sc > null_tol => {
                let n = sig.dot(&w, &w);
                let k = 1.0 / n.abs().sqrt();
                frame.push(w.iter().map(|x| x * k).collect());
                signs.push(n.signum());
            }
            other => {
                return Err(Error::DegenerateFrame {
                    index: frame.len(),
                    norm: other.map_or(0.0, |(sc, _)| sc),
                })
            }
        }
    }
    Ok((frame, signs))
}
