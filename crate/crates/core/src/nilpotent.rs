//! Two-step nilpotent groups `G_B = R^p x R^q` built from an arbitrary
//! bilinear map `B: R^p x R^p -> R^q`, with law
//! `(h, n) * (h', n') = (h + h', n + n' + B(h, h'))`.
//!
//! Group elements and Lie algebra elements share the [`GroupElement`]
//! coordinate container. The exponential and logarithm are always explicit:
//! `exp(h, n) = (h, n + B(h, h)/2)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for deciding that two bilinear maps share their skew part.
pub const SKEW_TOLERANCE: f64 = 1e-12;

/// Bilinear map `R^p x R^p -> R^q` with coefficients `B_{ij}^k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilinearMap {
    pub p: usize,
    pub q: usize,
    /// `coeffs[k][i][j] = B_{ij}^k`.
    pub coeffs: Vec<Vec<Vec<f64>>>,
}

impl BilinearMap {
    pub fn zeros(p: usize, q: usize) -> Self {
        Self {
            p,
            q,
            coeffs: vec![vec![vec![0.0; p]; p]; q],
        }
    }

    pub fn from_coeffs(coeffs: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let q = coeffs.len();
        let p = coeffs.first().map_or(0, Vec::len);
        if coeffs.iter().any(|m| m.len() != p || m.iter().any(|r| r.len() != p)) {
            return Err(Error::DimensionMismatch(
                "bilinear map coefficients must be q x p x p".into(),
            ));
        }
        Ok(Self { p, q, coeffs })
    }

    /// Sets `B(e_i, e_j)^k` (0-based indices).
    pub fn set(&mut self, k: usize, i: usize, j: usize, value: f64) {
        self.coeffs[k][i][j] = value;
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.coeffs[k][i][j]
    }

    pub fn apply(&self, v: &[f64], w: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.p);
        debug_assert_eq!(w.len(), self.p);
        self.coeffs
            .iter()
            .map(|m| {
                m.iter()
                    .zip(v)
                    .map(|(row, vi)| vi * row.iter().zip(w).map(|(b, wj)| b * wj).sum::<f64>())
                    .sum()
            })
            .collect()
    }

    /// `(B - B^T) / 2`.
    pub fn skew_part(&self) -> Self {
        self.map_pairs(|a, b| 0.5 * (a - b))
    }

    /// `(B + B^T) / 2`.
    pub fn symmetric_part(&self) -> Self {
        self.map_pairs(|a, b| 0.5 * (a + b))
    }

    fn map_pairs(&self, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(self.p, self.q);
        for k in 0..self.q {
            for i in 0..self.p {
                for j in 0..self.p {
                    out.coeffs[k][i][j] = f(self.coeffs[k][i][j], self.coeffs[k][j][i]);
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs
            .iter()
            .flatten()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Rank of the `p x (p q)` matrix stacking the skew parts of every
    /// component.
    pub fn skew_rank(&self) -> usize {
        if self.p == 0 || self.q == 0 {
            return 0;
        }
        let skew = self.skew_part();
        let m = DMatrix::from_fn(self.p, self.p * self.q, |i, c| {
            skew.coeffs[c / self.p][i][c % self.p]
        });
        let scale = skew.max_abs();
        if scale == 0.0 {
            return 0;
        }
        m.svd(false, false)
            .singular_values
            .iter()
            .filter(|s| **s > 1e-10 * scale.max(1.0))
            .count()
    }

    pub fn class_hint(&self) -> ClassHint {
        let rank = self.skew_rank();
        if rank == 0 {
            ClassHint::Abelian
        } else if self.q == 1 && rank == self.p {
            ClassHint::HeisenbergLike
        } else {
            ClassHint::Other
        }
    }

    fn check(&self, g: &GroupElement) -> Result<()> {
        if g.h.len() != self.p || g.n.len() != self.q {
            return Err(Error::DimensionMismatch(format!(
                "element has dims ({}, {}), group has ({}, {})",
                g.h.len(),
                g.n.len(),
                self.p,
                self.q
            )));
        }
        Ok(())
    }
}

/// Coarse isomorphism-class label derived from the skew rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassHint {
    Abelian,
    HeisenbergLike,
    Other,
}

/// Coordinates `(h, n)` on `G_B` or on its Lie algebra.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupElement {
    pub h: Vec<f64>,
    pub n: Vec<f64>,
}

/// Lie algebra elements use the same coordinates as group elements.
pub type AlgebraElement = GroupElement;

impl GroupElement {
    pub fn new(h: Vec<f64>, n: Vec<f64>) -> Self {
        Self { h, n }
    }

    pub fn identity(p: usize, q: usize) -> Self {
        Self {
            h: vec![0.0; p],
            n: vec![0.0; q],
        }
    }

    /// Splits a flat `(h, n)` vector.
    pub fn from_flat(v: &[f64], p: usize) -> Self {
        Self {
            h: v[..p].to_vec(),
            n: v[p..].to_vec(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.h.iter().chain(&self.n).copied().collect()
    }

    pub fn dist(&self, other: &Self) -> f64 {
        self.to_flat()
            .iter()
            .zip(other.to_flat())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Coordinate-wise sum (algebra addition).
    pub fn add(&self, other: &Self) -> Self {
        Self {
            h: self.h.iter().zip(&other.h).map(|(a, b)| a + b).collect(),
            n: self.n.iter().zip(&other.n).map(|(a, b)| a + b).collect(),
        }
    }

    /// Coordinate-wise scaling (algebra scalar multiplication).
    pub fn scale(&self, c: f64) -> Self {
        Self {
            h: self.h.iter().map(|a| c * a).collect(),
            n: self.n.iter().map(|a| c * a).collect(),
        }
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn gb_mul(b: &BilinearMap, x: &GroupElement, y: &GroupElement) -> Result<GroupElement> {
    b.check(x)?;
    b.check(y)?;
    let cross = b.apply(&x.h, &y.h);
    Ok(GroupElement {
        h: add(&x.h, &y.h),
        n: x.n
            .iter()
            .zip(&y.n)
            .zip(&cross)
            .map(|((a, c), d)| a + c + d)
            .collect(),
    })
}

/// `(h, n)^-1 = (-h, -n + B(h, h))`.
pub fn gb_inv(b: &BilinearMap, x: &GroupElement) -> Result<GroupElement> {
    b.check(x)?;
    let bhh = b.apply(&x.h, &x.h);
    Ok(GroupElement {
        h: x.h.iter().map(|v| -v).collect(),
        n: x.n.iter().zip(&bhh).map(|(n, s)| -n + s).collect(),
    })
}

/// `x y x^-1 y^-1 = (0, B(h1, h2) - B(h2, h1))`.
pub fn gb_commutator(b: &BilinearMap, x: &GroupElement, y: &GroupElement) -> Result<GroupElement> {
    b.check(x)?;
    b.check(y)?;
    Ok(GroupElement {
        h: vec![0.0; b.p],
        n: antisymmetrized(b, &x.h, &y.h),
    })
}

fn antisymmetrized(b: &BilinearMap, v: &[f64], w: &[f64]) -> Vec<f64> {
    // Differences of coefficients first, so symmetric parts cancel exactly.
    b.coeffs
        .iter()
        .map(|m| {
            let mut s = 0.0;
            for i in 0..b.p {
                for j in 0..b.p {
                    s += (m[i][j] - m[j][i]) * v[i] * w[j];
                }
            }
            s
        })
        .collect()
}

/// `exp(h, n) = (h, n + B(h, h)/2)`.
pub fn gb_exp(b: &BilinearMap, x: &AlgebraElement) -> Result<GroupElement> {
    b.check(x)?;
    let bhh = b.apply(&x.h, &x.h);
    Ok(GroupElement {
        h: x.h.clone(),
        n: x.n.iter().zip(&bhh).map(|(n, s)| n + 0.5 * s).collect(),
    })
}

/// `log(h, n) = (h, n - B(h, h)/2)`.
pub fn gb_log(b: &BilinearMap, g: &GroupElement) -> Result<AlgebraElement> {
    b.check(g)?;
    let bhh = b.apply(&g.h, &g.h);
    Ok(GroupElement {
        h: g.h.clone(),
        n: g.n.iter().zip(&bhh).map(|(n, s)| n - 0.5 * s).collect(),
    })
}

/// `[(h1, n1), (h2, n2)] = (0, B(h1, h2) - B(h2, h1))`.
pub fn gb_bracket(b: &BilinearMap, x: &AlgebraElement, y: &AlgebraElement) -> Result<AlgebraElement> {
    gb_commutator(b, x, y)
}

/// `delta_s(h, n) = (s h, s^2 n)`.
pub fn gb_dilate(g: &GroupElement, s: f64) -> Result<GroupElement> {
    if !(s > 0.0) {
        return Err(Error::NonpositiveScale(s));
    }
    Ok(dilate_unchecked(g, s))
}

/// Dilation without the positivity check; used for the `t`-scaling of
/// arrows where `t` may be any real.
pub(crate) fn dilate_unchecked(g: &GroupElement, s: f64) -> GroupElement {
    GroupElement {
        h: g.h.iter().map(|v| s * v).collect(),
        n: g.n.iter().map(|v| s * s * v).collect(),
    }
}

/// The isomorphism `G_C -> G_B`, `(h, n) -> (h, n + B(h,h)/2 - C(h,h)/2)`,
/// for bilinear maps with the same skew part.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticIso {
    /// `(B - C) / 2`, symmetric.
    half_difference: BilinearMap,
}

impl QuadraticIso {
    pub fn apply(&self, g: &GroupElement) -> Result<GroupElement> {
        self.half_difference.check(g)?;
        let s = self.half_difference.apply(&g.h, &g.h);
        Ok(GroupElement {
            h: g.h.clone(),
            n: add(&g.n, &s),
        })
    }

    pub fn inverse(&self) -> QuadraticIso {
        let mut neg = self.half_difference.clone();
        neg.coeffs.iter_mut().flatten().flatten().for_each(|v| *v = -*v);
        QuadraticIso {
            half_difference: neg,
        }
    }
}

pub fn gb_iso_phi(b: &BilinearMap, c: &BilinearMap) -> Result<QuadraticIso> {
    if b.p != c.p || b.q != c.q {
        return Err(Error::DimensionMismatch(
            "bilinear maps have different shapes".into(),
        ));
    }
    let mut diff = BilinearMap::zeros(b.p, b.q);
    for k in 0..b.q {
        for i in 0..b.p {
            for j in 0..b.p {
                diff.coeffs[k][i][j] = 0.5 * (b.coeffs[k][i][j] - c.coeffs[k][i][j]);
            }
        }
    }
    let residual = diff.skew_part().max_abs() * 2.0;
    if residual > SKEW_TOLERANCE {
        return Err(Error::SkewPartMismatch(residual));
    }
    Ok(QuadraticIso {
        half_difference: diff,
    })
}
