//! Second-order forward-mode differentiation.
//!
//! A [`Jet2`] carries a value together with its gradient and Hessian with
//! respect to a fixed set of seed variables. Arithmetic on jets is truncated
//! Taylor arithmetic, so composites carry exact first and second derivatives
//! (up to rounding). A jet with an empty gradient is a constant and broadcasts
//! against jets of any seed count.
//!
//! The [`Scalar`] trait abstracts over `f64` and `Jet2` so that expression
//! evaluation, the ODE integrators and the linear solves used by charts can be
//! run either on plain numbers or on jets.

use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

use serde::Serialize;

use crate::error::{Error, Result};

/// Denominators smaller than this in magnitude are rejected.
pub const DIV_GUARD: f64 = f64::MIN_POSITIVE;

/// Numeric type that expressions and integrators can run on.
pub trait Scalar:
    Clone
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    fn powi(&self, n: i32) -> Result<Self>;
    fn checked_div(&self, rhs: &Self) -> Result<Self>;

    fn scale(&self, c: f64) -> Self {
        self.clone() * Self::from_f64(c)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn powi(&self, n: i32) -> Result<Self> {
        if n < 0 && self.abs() < DIV_GUARD {
            return Err(Error::DivisionByZero(*self));
        }
        Ok(f64::powi(*self, n))
    }
    fn checked_div(&self, rhs: &Self) -> Result<Self> {
        if rhs.abs() < DIV_GUARD {
            return Err(Error::DivisionByZero(*rhs));
        }
        Ok(self / rhs)
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
}

/// Index of entry `(i, j)`, `i <= j`, in a packed upper triangle of order `n`.
#[inline]
fn packed(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < n);
    i * (2 * n - i - 1) / 2 + j
}

#[inline]
fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Value, gradient and Hessian of a scalar with respect to seed variables.
///
/// The Hessian is stored as a packed upper triangle, so it is symmetric by
/// construction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Jet2 {
    value: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl Jet2 {
    /// A constant jet. Broadcasts against jets of any seed count.
    pub fn constant(value: f64) -> Self {
        Self {
            value,
            grad: Vec::new(),
            hess: Vec::new(),
        }
    }

    /// The `index`-th seed variable out of `nvars`, at `value`.
    pub fn variable(value: f64, index: usize, nvars: usize) -> Self {
        assert!(index < nvars, "seed index out of range");
        let mut grad = vec![0.0; nvars];
        grad[index] = 1.0;
        Self {
            value,
            grad,
            hess: vec![0.0; packed_len(nvars)],
        }
    }

    /// Builds a jet from explicit data. `hess` is a full row-major `n x n`
    /// matrix; only its upper triangle is read.
    pub fn from_parts(value: f64, grad: Vec<f64>, hess: &[f64]) -> Self {
        let n = grad.len();
        assert_eq!(hess.len(), n * n, "hessian must be n x n");
        let mut packed_hess = vec![0.0; packed_len(n)];
        for i in 0..n {
            for j in i..n {
                packed_hess[packed(n, i, j)] = hess[i * n + j];
            }
        }
        Self {
            value,
            grad,
            hess: packed_hess,
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Number of seed variables (0 for a constant).
    pub fn nvars(&self) -> usize {
        self.grad.len()
    }

    pub fn is_constant(&self) -> bool {
        self.grad.is_empty()
    }

    /// Gradient, padded with zeros to `n` entries for constants.
    pub fn grad(&self, n: usize) -> Vec<f64> {
        if self.grad.is_empty() {
            vec![0.0; n]
        } else {
            self.grad.clone()
        }
    }

    pub fn d(&self, i: usize) -> f64 {
        self.grad.get(i).copied().unwrap_or(0.0)
    }

    pub fn d2(&self, i: usize, j: usize) -> f64 {
        if self.grad.is_empty() {
            return 0.0;
        }
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.hess[packed(self.grad.len(), a, b)]
    }

    /// Full dense Hessian, `n x n`.
    pub fn hessian(&self, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| self.d2(i, j)).collect())
            .collect()
    }

    /// Applies a scalar function given its first and second derivative at the
    /// current value (chain rule to second order).
    pub fn chain(mut self, f: f64, df: f64, d2f: f64) -> Self {
        let n = self.grad.len();
        for i in 0..n {
            for j in i..n {
                let k = packed(n, i, j);
                self.hess[k] = df * self.hess[k] + d2f * self.grad[i] * self.grad[j];
            }
        }
        for g in &mut self.grad {
            *g *= df;
        }
        self.value = f;
        self
    }

    fn recip(self) -> Result<Self> {
        let v = self.value;
        if v.abs() < DIV_GUARD {
            return Err(Error::DivisionByZero(v));
        }
        let r = 1.0 / v;
        Ok(self.chain(r, -r * r, 2.0 * r * r * r))
    }

    fn add_scaled(mut self, rhs: &Jet2, sign: f64) -> Self {
        self.value += sign * rhs.value;
        if rhs.grad.is_empty() {
            return self;
        }
        if self.grad.is_empty() {
            self.grad = rhs.grad.iter().map(|g| sign * g).collect();
            self.hess = rhs.hess.iter().map(|h| sign * h).collect();
            return self;
        }
        assert_eq!(self.grad.len(), rhs.grad.len(), "seed count mismatch");
        for (a, b) in self.grad.iter_mut().zip(&rhs.grad) {
            *a += sign * b;
        }
        for (a, b) in self.hess.iter_mut().zip(&rhs.hess) {
            *a += sign * b;
        }
        self
    }

    fn mul_jet(self, rhs: &Jet2) -> Self {
        if rhs.grad.is_empty() {
            let c = rhs.value;
            let mut out = self;
            out.value *= c;
            out.grad.iter_mut().for_each(|g| *g *= c);
            out.hess.iter_mut().for_each(|h| *h *= c);
            return out;
        }
        if self.grad.is_empty() {
            return rhs.clone().mul_jet(&self);
        }
        let n = self.grad.len();
        assert_eq!(n, rhs.grad.len(), "seed count mismatch");
        let (a, b) = (self.value, rhs.value);
        let mut out = self;
        for i in 0..n {
            for j in i..n {
                let k = packed(n, i, j);
                out.hess[k] = out.hess[k] * b
                    + rhs.hess[k] * a
                    + out.grad[i] * rhs.grad[j]
                    + rhs.grad[i] * out.grad[j];
            }
        }
        for i in 0..n {
            out.grad[i] = out.grad[i] * b + rhs.grad[i] * a;
        }
        out.value = a * b;
        out
    }
}

/// Seeds one jet per input coordinate: value `values[i]`, gradient `e_i`,
/// zero Hessian.
pub fn seed(values: &[f64]) -> Vec<Jet2> {
    let n = values.len();
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| Jet2::variable(v, i, n))
        .collect()
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, rhs: Jet2) -> Jet2 {
        if self.grad.is_empty() && !rhs.grad.is_empty() {
            return rhs.add_scaled(&self, 1.0);
        }
        self.add_scaled(&rhs, 1.0)
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, rhs: Jet2) -> Jet2 {
        self.add_scaled(&rhs, -1.0)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: Jet2) -> Jet2 {
        if self.grad.is_empty() && !rhs.grad.is_empty() {
            return rhs.mul_jet(&self);
        }
        self.mul_jet(&rhs)
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(mut self) -> Jet2 {
        self.value = -self.value;
        self.grad.iter_mut().for_each(|g| *g = -*g);
        self.hess.iter_mut().for_each(|h| *h = -*h);
        self
    }
}

impl Scalar for Jet2 {
    fn from_f64(v: f64) -> Self {
        Jet2::constant(v)
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn sin(&self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.clone().chain(s, c, -s)
    }
    fn cos(&self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.clone().chain(c, -s, -c)
    }
    fn exp(&self) -> Self {
        let e = self.value.exp();
        self.clone().chain(e, e, e)
    }
    fn powi(&self, n: i32) -> Result<Self> {
        let x = self.value;
        match n {
            0 => Ok(Jet2::constant(1.0)),
            1 => Ok(self.clone()),
            _ => {
                if n < 0 && x.abs() < DIV_GUARD {
                    return Err(Error::DivisionByZero(x));
                }
                let nf = n as f64;
                let f = x.powi(n);
                let df = nf * x.powi(n - 1);
                let d2f = nf * (nf - 1.0) * x.powi(n - 2);
                Ok(self.clone().chain(f, df, d2f))
            }
        }
    }
    fn checked_div(&self, rhs: &Self) -> Result<Self> {
        Ok(self.clone().mul_jet(&rhs.clone().recip()?))
    }
    fn scale(&self, c: f64) -> Self {
        self.clone().mul_jet(&Jet2::constant(c))
    }
}

/// Operations accepted by [`jet_arith`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JetOp {
    Add,
    Sub,
    Mul,
    Div,
    /// Integer power of the first operand; the exponent is the second
    /// operand's value, which must be integral.
    PowInt,
    Sin,
    Cos,
    Exp,
}

/// Applies `op` to `a` (and `b` for binary operations).
pub fn jet_arith(a: &Jet2, b: &Jet2, op: JetOp) -> Result<Jet2> {
    Ok(match op {
        JetOp::Add => a.clone() + b.clone(),
        JetOp::Sub => a.clone() - b.clone(),
        JetOp::Mul => a.clone() * b.clone(),
        JetOp::Div => a.checked_div(b)?,
        JetOp::PowInt => {
            let e = b.value();
            if e.fract() != 0.0 || e.abs() > i32::MAX as f64 {
                return Err(Error::DimensionMismatch(format!(
                    "pow_int exponent {e} is not an integer"
                )));
            }
            a.powi(e as i32)?
        }
        JetOp::Sin => Scalar::sin(a),
        JetOp::Cos => Scalar::cos(a),
        JetOp::Exp => Scalar::exp(a),
    })
}

/// Value, Jacobian and per-output Hessians of a map `R^n -> R^m` at a point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MapJet2 {
    pub value: Vec<f64>,
    /// `m x n`
    pub jacobian: Vec<Vec<f64>>,
    /// `m x n x n`, each slice symmetric.
    pub hessian: Vec<Vec<Vec<f64>>>,
}

impl MapJet2 {
    /// Second derivative of output `k` applied to `(u, v)`.
    pub fn second(&self, k: usize, u: &[f64], v: &[f64]) -> f64 {
        let h = &self.hessian[k];
        let mut s = 0.0;
        for (i, ui) in u.iter().enumerate() {
            for (j, vj) in v.iter().enumerate() {
                s += h[i][j] * ui * vj;
            }
        }
        s
    }

    /// Jacobian applied to `v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.jacobian
            .iter()
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Evaluates `f` once on seeded jets and unpacks value, Jacobian and Hessian.
pub fn map_jet2<F>(f: F, point: &[f64]) -> Result<MapJet2>
where
    F: FnOnce(&[Jet2]) -> Result<Vec<Jet2>>,
{
    let n = point.len();
    let out = f(&seed(point))?;
    Ok(MapJet2 {
        value: out.iter().map(Jet2::value).collect(),
        jacobian: out.iter().map(|j| j.grad(n)).collect(),
        hessian: out.iter().map(|j| j.hessian(n)).collect(),
    })
}

/// How the derivatives in a [`CurveJet`] were obtained.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum DerivativeMethod {
    /// Forward-mode jets; exact up to rounding.
    Exact,
    /// Central differences with Richardson extrapolation in `h^2`.
    Richardson {
        h0: f64,
        levels: usize,
        /// Extrapolation order reached for both derivatives (`2 * levels`).
        order: usize,
        /// Last diagonal change of the first / second derivative tableaux.
        residual_first: f64,
        residual_second: f64,
    },
}

/// Value, velocity and acceleration of a curve at a parameter value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveJet {
    pub value: Vec<f64>,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub method: DerivativeMethod,
}

/// Exact derivatives of a curve given as a jet-evaluable function of `t`.
pub fn curve_jet2<F>(c: F, t0: f64) -> Result<CurveJet>
where
    F: FnOnce(&Jet2) -> Result<Vec<Jet2>>,
{
    let t = Jet2::variable(t0, 0, 1);
    let out = c(&t)?;
    Ok(CurveJet {
        value: out.iter().map(Jet2::value).collect(),
        first: out.iter().map(|j| j.d(0)).collect(),
        second: out.iter().map(|j| j.d2(0, 0)).collect(),
        method: DerivativeMethod::Exact,
    })
}

/// Starting step for black-box curve differentiation.
pub const RICHARDSON_H0: f64 = 1e-2;
/// Number of step halvings for black-box curve differentiation.
pub const RICHARDSON_LEVELS: usize = 4;

/// Derivatives of a black-box curve by central differences, step halving from
/// [`RICHARDSON_H0`] and Richardson extrapolation.
pub fn curve_jet2_sampled<F>(c: F, t0: f64) -> Result<CurveJet>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    let value = c(t0)?;
    let dim = value.len();
    let levels = RICHARDSON_LEVELS;
    // tableau[level][order][component]
    let mut first: Vec<Vec<Vec<f64>>> = Vec::with_capacity(levels);
    let mut second: Vec<Vec<Vec<f64>>> = Vec::with_capacity(levels);
    for level in 0..levels {
        let h = RICHARDSON_H0 / f64::powi(2.0, level as i32);
        let plus = c(t0 + h)?;
        let minus = c(t0 - h)?;
        if plus.len() != dim || minus.len() != dim {
            return Err(Error::DimensionMismatch(
                "curve changed output dimension".into(),
            ));
        }
        let d1: Vec<f64> = (0..dim).map(|i| (plus[i] - minus[i]) / (2.0 * h)).collect();
        let d2: Vec<f64> = (0..dim)
            .map(|i| (plus[i] - 2.0 * value[i] + minus[i]) / (h * h))
            .collect();
        first.push(vec![d1]);
        second.push(vec![d2]);
        for k in 1..=level {
            let factor = f64::powi(4.0, k as i32) - 1.0;
            let e1: Vec<f64> = (0..dim)
                .map(|i| {
                    first[level][k - 1][i]
                        + (first[level][k - 1][i] - first[level - 1][k - 1][i]) / factor
                })
                .collect();
            let e2: Vec<f64> = (0..dim)
                .map(|i| {
                    second[level][k - 1][i]
                        + (second[level][k - 1][i] - second[level - 1][k - 1][i]) / factor
                })
                .collect();
            first[level].push(e1);
            second[level].push(e2);
        }
    }
    let diag_changes = |tab: &Vec<Vec<Vec<f64>>>| -> Vec<f64> {
        (1..levels)
            .map(|l| {
                (0..dim)
                    .map(|i| (tab[l][l][i] - tab[l - 1][l - 1][i]).abs())
                    .fold(0.0, f64::max)
            })
            .collect()
    };
    let r1 = diag_changes(&first);
    let r2 = diag_changes(&second);
    let scale = 1.0 + value.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    for r in [&r1, &r2] {
        let last = *r.last().unwrap_or(&0.0);
        let first_change = r.first().copied().unwrap_or(0.0);
        if !last.is_finite() || (last > 1e-5 * scale && last >= first_change) {
            return Err(Error::NonSmoothSample(last));
        }
    }
    let top = levels - 1;
    Ok(CurveJet {
        value,
        first: first[top][top].clone(),
        second: second[top][top].clone(),
        method: DerivativeMethod::Richardson {
            h0: RICHARDSON_H0,
            levels,
            order: 2 * levels,
            residual_first: *r1.last().unwrap_or(&0.0),
            residual_second: *r2.last().unwrap_or(&0.0),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-14 * (1.0 + b.abs())
    }

    #[test]
    fn seeding() {
        let x = seed(&[3.0]);
        assert_eq!(x[0].value(), 3.0);
        assert_eq!(x[0].grad(1), vec![1.0]);
        assert_eq!(x[0].hessian(1), vec![vec![0.0]]);

        let z = seed(&[0.0, 0.0, 0.0]);
        assert_eq!(z[2].grad(3), vec![0.0, 0.0, 1.0]);
        assert_eq!(z[2].hessian(3), vec![vec![0.0; 3]; 3]);
    }

    #[test]
    fn product_of_seeds() {
        let v = seed(&[1.0, 2.0]);
        let p = v[0].clone() * v[1].clone();
        assert_eq!(p.value(), 2.0);
        assert_eq!(p.grad(2), vec![2.0, 1.0]);
        assert_eq!(p.hessian(2), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn square_and_sine() {
        let x = Jet2::variable(3.0, 0, 1);
        let sq = jet_arith(&x, &x, JetOp::Mul).unwrap();
        assert_eq!((sq.value(), sq.d(0), sq.d2(0, 0)), (9.0, 6.0, 2.0));

        let z = Jet2::variable(0.0, 0, 1);
        let s = jet_arith(&z, &z, JetOp::Sin).unwrap();
        assert_eq!((s.value(), s.d(0), s.d2(0, 0)), (0.0, 1.0, 0.0));
    }

    #[test]
    fn quotient_rule() {
        let v = seed(&[1.0, 2.0]);
        let q = jet_arith(&v[0], &v[1], JetOp::Div).unwrap();
        assert!(close(q.value(), 0.5));
        assert!(close(q.d(0), 0.5));
        assert!(close(q.d(1), -0.25));
        assert!(close(q.d2(0, 0), 0.0));
        assert!(close(q.d2(0, 1), -0.25));
        assert!(close(q.d2(1, 1), 0.25));
    }

    #[test]
    fn division_by_zero_is_reported() {
        let v = seed(&[1.0, 0.0]);
        assert!(matches!(
            jet_arith(&v[0], &v[1], JetOp::Div),
            Err(Error::DivisionByZero(_))
        ));
        assert!(matches!(
            Scalar::powi(&v[1], -2),
            Err(Error::DivisionByZero(_))
        ));
    }

    #[test]
    fn integer_powers_at_zero() {
        let x = Jet2::variable(0.0, 0, 1);
        let c = Scalar::powi(&x, 3).unwrap();
        assert_eq!((c.value(), c.d(0), c.d2(0, 0)), (0.0, 0.0, 0.0));
        let s = Scalar::powi(&x, 2).unwrap();
        assert_eq!(s.d2(0, 0), 2.0);
        let one = Scalar::powi(&x, 0).unwrap();
        assert_eq!(one.value(), 1.0);
    }

    #[test]
    fn map_jet2_shear() {
        let m = map_jet2(
            |x| {
                let sq = Scalar::powi(&x[0], 2)?;
                Ok(vec![x[0].clone(), x[1].clone(), x[2].clone() + sq])
            },
            &[0.0, 0.0, 0.0],
        )
        .unwrap();
        let id = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        assert_eq!(m.jacobian, id);
        assert_eq!(m.hessian[0], vec![vec![0.0; 3]; 3]);
        assert_eq!(m.hessian[1], vec![vec![0.0; 3]; 3]);
        let mut h2 = vec![vec![0.0; 3]; 3];
        h2[0][0] = 2.0;
        assert_eq!(m.hessian[2], h2);
    }

    #[test]
    fn map_jet2_identity_and_product() {
        let m = map_jet2(|x| Ok(x.to_vec()), &[0.3, -1.2]).unwrap();
        assert_eq!(m.jacobian, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(m.hessian.iter().flatten().flatten().all(|&h| h == 0.0));

        let p = map_jet2(|x| Ok(vec![x[0].clone() * x[1].clone()]), &[1.0, 2.0]).unwrap();
        assert_eq!(p.jacobian, vec![vec![2.0, 1.0]]);
        assert_eq!(p.hessian[0], vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn curve_derivatives() {
        let c = curve_jet2(
            |t| {
                Ok(vec![
                    t.clone(),
                    t.clone(),
                    Scalar::powi(t, 2)?,
                ])
            },
            0.0,
        )
        .unwrap();
        assert_eq!(c.value, vec![0.0, 0.0, 0.0]);
        assert_eq!(c.first, vec![1.0, 1.0, 0.0]);
        assert_eq!(c.second, vec![0.0, 0.0, 2.0]);

        let k = curve_jet2(|_| Ok(vec![Jet2::constant(1.5), Jet2::constant(-2.0)]), 0.0).unwrap();
        assert_eq!(k.value, vec![1.5, -2.0]);
        assert_eq!(k.first, vec![0.0, 0.0]);
        assert_eq!(k.second, vec![0.0, 0.0]);

        let h = curve_jet2(
            |t| {
                let half = Scalar::powi(t, 2)?.scale(-0.5);
                Ok(vec![t.clone(), Jet2::constant(0.0), half])
            },
            0.0,
        )
        .unwrap();
        assert_eq!(h.second, vec![0.0, 0.0, -1.0]);
    }

    #[test]
    fn sampled_curve_matches_jets() {
        let f = |t: f64| vec![t.sin(), (2.0 * t).exp(), t * t * t - t];
        let sampled = curve_jet2_sampled(|t| Ok(f(t)), 0.3).unwrap();
        let exact = curve_jet2(
            |t| {
                Ok(vec![
                    Scalar::sin(t),
                    Scalar::exp(&t.scale(2.0)),
                    Scalar::powi(t, 3)? - t.clone(),
                ])
            },
            0.3,
        )
        .unwrap();
        for i in 0..3 {
            assert!((sampled.first[i] - exact.first[i]).abs() < 1e-7);
            assert!((sampled.second[i] - exact.second[i]).abs() < 1e-7);
        }
        assert!(matches!(sampled.method, DerivativeMethod::Richardson { levels: 4, .. }));
    }

    #[test]
    fn sampled_kink_is_rejected() {
        let err = curve_jet2_sampled(|t| Ok(vec![t.abs()]), 0.0).unwrap_err();
        assert!(matches!(err, Error::NonSmoothSample(_)));
    }
}
