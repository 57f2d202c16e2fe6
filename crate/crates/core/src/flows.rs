//! Flow maps of vector fields, composition of flows at a shared time, and the
//! flow-based oracles that cross-check the algebraic group structure.
//!
//! Arrows are measured from flow lines by sampling on a dyadic grid and
//! reading off the quotients `y^H / t` and `y^N / t^2` in the auto H-chart;
//! these converge at rate `O(t)` and are extrapolated with Richardson steps.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, Expression};
use crate::geometry::{osculating_b, AutoChart, Geometry, ParabolicArrow};
use crate::jets::{seed, Jet2, Scalar};
use crate::linalg::{max_abs, norm};
use crate::nilpotent::{gb_bracket, gb_log, gb_mul, GroupElement};

pub const DEFAULT_STEPS: usize = 256;
pub const MIN_STEPS: usize = 16;
/// Flows are only integrated for `|t| <= MAX_TIME`.
pub const MAX_TIME: f64 = 1.0;
/// Residuals below this are indistinguishable from rounding in the
/// second-order flow identity.
pub const SECOND_ORDER_FLOOR: f64 = 1e-13;
/// Tolerance for the t = 0 generator of a parabolic flow to lie in H.
pub const GENERATOR_TOLERANCE: f64 = 1e-8;
/// Tolerance for the measured first-order normal component of a flow line.
pub const TANGENCY_TOLERANCE: f64 = 1e-6;
/// Tolerance on extrapolated values compared with algebraic predictions.
pub const ORACLE_TOLERANCE: f64 = 1e-6;

/// The sample times `2^-3, ..., 2^-10`.
pub fn dyadic_grid() -> Vec<f64> {
    (3..=10).map(|k| f64::powi(2.0, -k)).collect()
}

/// Richardson extrapolation to `t = 0` of samples at `t, t/2, t/4, ...` of a
/// quantity with an expansion in integer powers of `t`.
pub fn richardson(samples: &[Vec<f64>]) -> Vec<f64> {
    let mut row: Vec<Vec<f64>> = samples.to_vec();
    for level in 1..samples.len() {
        let w = f64::powi(2.0, level as i32);
        row = row
            .windows(2)
            .map(|pair| {
                pair[0]
                    .iter()
                    .zip(&pair[1])
                    .map(|(coarse, fine)| (w * fine - coarse) / (w - 1.0))
                    .collect()
            })
            .collect();
    }
    row.pop().unwrap_or_default()
}

/// Extrapolates from the three finest samples of a dyadic grid.
pub fn extrapolate_tail(samples: &[Vec<f64>]) -> Vec<f64> {
    let start = samples.len().saturating_sub(3);
    richardson(&samples[start..])
}

/// Least-squares slope of `log r` against `log t`, using only the samples
/// above `floor`. `None` when fewer than three samples remain.
pub fn fit_slope(t_grid: &[f64], residuals: &[f64], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = t_grid
        .iter()
        .zip(residuals)
        .filter(|(_, r)| **r > floor && r.is_finite())
        .map(|(t, r)| (t.ln(), r.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Probe output shared by the flow and groupoid probes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeReport {
    pub t_grid: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fitted_slope: Option<f64>,
    pub extrapolated_value: Vec<f64>,
    pub predicted_value: Vec<f64>,
    pub pass: bool,
}

/// A vector field given by component expressions in the chart variables and,
/// optionally, the flow time `t` (declared as one extra variable).
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    components: Vec<Expr>,
    vars: Vec<String>,
    dim: usize,
}

impl VectorField {
    /// Components may use the chart variables and the trailing time variable.
    pub fn new(components: Vec<Expression>, dim: usize) -> Result<Self> {
        if components.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "field has {} components, expected {dim}",
                components.len()
            )));
        }
        let mut vars: Vec<String> = components
            .first()
            .map(|c| c.vars().to_vec())
            .unwrap_or_default();
        if components.iter().any(|c| c.vars().len() > dim + 1) {
            return Err(Error::DimensionMismatch("field declares too many variables".into()));
        }
        vars.truncate(dim);
        while vars.len() < dim {
            vars.push(format!("x{}", vars.len() + 1));
        }
        vars.push("t".into());
        Ok(Self {
            components: components.into_iter().map(|c| c.root().clone()).collect(),
            vars,
            dim,
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            components: vec![Expr::num(0.0); dim],
            vars: (1..=dim).map(|i| format!("x{i}")).chain(["t".to_string()]).collect(),
            dim,
        }
    }

    /// Frame field `i` of a geometry.
    pub fn frame_field(geom: &Geometry, i: usize) -> Result<Self> {
        let (_, comps) = geom
            .spec()
            .frame
            .get(i)
            .ok_or_else(|| Error::UnknownName(format!("frame field {i}")))?;
        Self::new(comps.clone(), geom.dim())
    }

    pub fn named(geom: &Geometry, name: &str) -> Result<Self> {
        let i = geom
            .spec()
            .frame_field(name)
            .ok_or_else(|| Error::UnknownName(name.into()))?;
        Self::frame_field(geom, i)
    }

    /// `sum_i coeffs[i] X_i` for constant coefficients.
    pub fn combination(geom: &Geometry, coeffs: &[f64]) -> Result<Self> {
        if coeffs.len() > geom.dim() {
            return Err(Error::DimensionMismatch("too many frame coefficients".into()));
        }
        let mut out = Self::zero(geom.dim());
        out.vars = geom.spec().vars.iter().cloned().chain(["t".to_string()]).collect();
        for (i, &c) in coeffs.iter().enumerate() {
            if c != 0.0 {
                out = out.add(&Self::frame_field(geom, i)?.scaled(c))?;
            }
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_time_dependent(&self) -> bool {
        self.components
            .iter()
            .any(|c| c.max_var().is_some_and(|v| v >= self.dim))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            components: self
                .components
                .iter()
                .map(|e| Expr::mul(Expr::num(c), e.clone()))
                .collect(),
            ..self.clone()
        }
    }

    pub fn negated(&self) -> Self {
        self.scaled(-1.0)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch("adding fields of different dimension".into()));
        }
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| match (a, b) {
                (Expr::Num(z), _) if *z == 0.0 => b.clone(),
                (_, Expr::Num(z)) if *z == 0.0 => a.clone(),
                _ => Expr::add(a.clone(), b.clone()),
            })
            .collect();
        Ok(Self {
            components,
            vars: self.vars.clone(),
            dim: self.dim,
        })
    }

    /// Adds `2 t * sum_k w_k X_{p+k}`: the time-dependent normal perturbation
    /// that shifts a flow line's arrow by `(0, w)`.
    pub fn with_normal_drift(&self, geom: &Geometry, w: &[f64]) -> Result<Self> {
        let time = Expr::Var(self.dim);
        let mut out = self.clone();
        for (k, &wk) in w.iter().enumerate() {
            if wk == 0.0 {
                continue;
            }
            let field = Self::frame_field(geom, geom.p() + k)?;
            let drift = Self {
                components: field
                    .components
                    .iter()
                    .map(|e| Expr::mul(Expr::mul(Expr::num(2.0 * wk), time.clone()), e.clone()))
                    .collect(),
                ..field
            };
            out = out.add(&drift)?;
        }
        Ok(out)
    }

    pub fn eval<S: Scalar>(&self, x: &[S], t: &S) -> Result<Vec<S>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch("point dimension".into()));
        }
        let mut env: Vec<S> = x.to_vec();
        env.push(t.clone());
        self.components.iter().map(|c| c.eval(&env)).collect()
    }

    pub fn expressions(&self) -> Vec<Expression> {
        self.components
            .iter()
            .map(|c| Expression::new(c.clone(), self.vars.clone()).expect("variables in range"))
            .collect()
    }
}

/// Classical fourth-order Runge-Kutta for `x' = f(x, s)` from `s = 0` to
/// `s = t` in `steps` equal steps.
///
/// The displacement `x - x0` is accumulated separately so that rounding
/// scales with the size of the displacement rather than with `|x0|`; short
/// flows are then accurate enough to be divided by `t^2`.
pub fn rk4<S, F>(f: F, x0: &[S], t: &S, steps: usize) -> Result<Vec<S>>
where
    S: Scalar,
    F: Fn(&[S], &S) -> Result<Vec<S>>,
{
    if steps < MIN_STEPS {
        return Err(Error::StepUnderflow { t: t.value(), steps });
    }
    if !(t.value().abs() <= MAX_TIME) {
        return Err(Error::OutsideDomain(t.value()));
    }
    let h = t.scale(1.0 / steps as f64);
    let half = h.scale(0.5);
    let at = |d: &[S], k: Option<(&[S], &S)>| -> Vec<S> {
        x0.iter()
            .zip(d)
            .enumerate()
            .map(|(i, (xi, di))| match k {
                Some((k, a)) => xi.clone() + (di.clone() + a.clone() * k[i].clone()),
                None => xi.clone() + di.clone(),
            })
            .collect()
    };
    let mut d: Vec<S> = vec![S::from_f64(0.0); x0.len()];
    for step in 0..steps {
        let s = h.scale(step as f64);
        let s_mid = s.clone() + half.clone();
        let k1 = f(&at(&d, None), &s)?;
        let k2 = f(&at(&d, Some((&k1, &half))), &s_mid)?;
        let k3 = f(&at(&d, Some((&k2, &half))), &s_mid)?;
        let k4 = f(&at(&d, Some((&k3, &h))), &(s + h.clone()))?;
        let sixth = h.scale(1.0 / 6.0);
        for i in 0..d.len() {
            let incr = k1[i].clone() + k2[i].scale(2.0) + k3[i].scale(2.0) + k4[i].clone();
            d[i] = d[i].clone() + sixth.clone() * incr;
        }
        if d.iter().any(|v| !v.value().is_finite()) {
            return Err(Error::NonFiniteState);
        }
    }
    Ok(at(&d, None))
}

/// Endpoint at time `t` of the flow line of `field` through `point`.
pub fn integrate_flow<S: Scalar>(field: &VectorField, point: &[S], t: &S, steps: usize) -> Result<Vec<S>> {
    rk4(|x, s| field.eval(x, s), point, t, steps)
}

/// A composition `Phi^1_t o ... o Phi^k_t` of flows (applied right to left).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowMap {
    fields: Vec<VectorField>,
    steps: usize,
}

impl FlowMap {
    pub fn new(field: VectorField) -> Self {
        Self {
            fields: vec![field],
            steps: DEFAULT_STEPS,
        }
    }

    pub fn composition(fields: Vec<VectorField>) -> Self {
        Self {
            fields,
            steps: DEFAULT_STEPS,
        }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// The inverse flow `(Phi_t)^-1`, valid for time-independent fields.
    pub fn inverse(&self) -> Self {
        Self {
            fields: self.fields.iter().rev().map(VectorField::negated).collect(),
            steps: self.steps,
        }
    }

    pub fn apply<S: Scalar>(&self, point: &[S], t: &S) -> Result<Vec<S>> {
        let mut x = point.to_vec();
        for field in self.fields.iter().rev() {
            x = integrate_flow(field, &x, t, self.steps)?;
        }
        Ok(x)
    }

    /// Velocity of `t -> Phi_t(m)` at `t = 0`: the sum of the generators.
    pub fn generator(&self, m: &[f64]) -> Result<Vec<f64>> {
        let mut v = vec![0.0; m.len()];
        for f in &self.fields {
            for (vi, fi) in v.iter_mut().zip(f.eval(m, &0.0)?) {
                *vi += fi;
            }
        }
        Ok(v)
    }
}

/// `Phi^1_t o ... o Phi^k_t (point)`.
pub fn compose_flows<S: Scalar>(flows: &[FlowMap], point: &[S], t: &S) -> Result<Vec<S>> {
    let mut x = point.to_vec();
    for flow in flows.iter().rev() {
        x = flow.apply(&x, t)?;
    }
    Ok(x)
}

/// Arrow quotients `(y^H / t, y^N / t^2)` of a curve through `m` sampled on
/// the dyadic grid, with their extrapolation to `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArrowMeasurement {
    pub t_grid: Vec<f64>,
    pub quotients: Vec<GroupElement>,
    pub extrapolated: GroupElement,
}

/// Measures the Taylor coordinates of `curve` (with `curve(0) = m`) in the
/// auto chart at `m`.
pub fn measure_arrow<F>(chart: &AutoChart, curve: F) -> Result<ArrowMeasurement>
where
    F: Fn(f64) -> Result<Vec<f64>> + Sync,
{
    let p = chart.p();
    let t_grid = dyadic_grid();
    let quotients: Vec<GroupElement> = t_grid
        .par_iter()
        .map(|&t| {
            let y = chart.to_chart(&curve(t)?);
            Ok(GroupElement::new(
                y[..p].iter().map(|v| v / t).collect(),
                y[p..].iter().map(|v| v / (t * t)).collect(),
            ))
        })
        .collect::<Result<_>>()?;
    let flat: Vec<Vec<f64>> = quotients.iter().map(GroupElement::to_flat).collect();
    let extrapolated = GroupElement::from_flat(&extrapolate_tail(&flat), p);
    Ok(ArrowMeasurement {
        t_grid,
        quotients,
        extrapolated,
    })
}

fn normal_part_of_generator(chart: &AutoChart, v: &[f64]) -> f64 {
    max_abs(&chart.vector_to_chart(v)[chart.p()..])
}

/// Measured arrow of the flow line `t -> Phi_t(m)`, with the grid data.
pub fn measure_flowline(geom: &Geometry, flow: &FlowMap, m: &[f64]) -> Result<ArrowMeasurement> {
    let chart = geom.auto_chart(m)?;
    let gen = flow.generator(m)?;
    let leak = normal_part_of_generator(&chart, &gen);
    if leak > GENERATOR_TOLERANCE {
        return Err(Error::NotTangentToH(leak));
    }
    let meas = measure_arrow(&chart, |t| flow.apply(m, &t))?;
    // first-order normal component of the curve, c'(0)^N
    let first_normal: Vec<Vec<f64>> = meas
        .quotients
        .iter()
        .zip(&meas.t_grid)
        .map(|(q, t)| q.n.iter().map(|v| v * t).collect())
        .collect();
    let leak = max_abs(&extrapolate_tail(&first_normal));
    if leak > TANGENCY_TOLERANCE {
        return Err(Error::NotTangentToH(leak));
    }
    Ok(meas)
}

/// Arrow of the flow line `t -> Phi_t(m)` in the auto H-chart at `m`.
pub fn arrow_of_flowline(geom: &Geometry, flow: &FlowMap, m: &[f64]) -> Result<ParabolicArrow> {
    let meas = measure_flowline(geom, flow, m)?;
    Ok(ParabolicArrow::auto(m.to_vec(), meas.extrapolated))
}

fn distance_report(
    t_grid: Vec<f64>,
    samples: &[Vec<f64>],
    predicted: Vec<f64>,
    floor: f64,
) -> ProbeReport {
    let residuals: Vec<f64> = samples
        .iter()
        .map(|s| norm(&s.iter().zip(&predicted).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .collect();
    let extrapolated = extrapolate_tail(samples);
    let err = norm(&extrapolated.iter().zip(&predicted).map(|(a, b)| a - b).collect::<Vec<_>>());
    ProbeReport {
        fitted_slope: fit_slope(&t_grid, &residuals, floor),
        t_grid,
        residuals,
        pass: err <= ORACLE_TOLERANCE,
        extrapolated_value: extrapolated,
        predicted_value: predicted,
    }
}

/// Oracle check of the group law: the measured arrow of `Phi o Psi` against
/// `gb_mul` of the measured arrows of `Phi` and `Psi`.
pub fn oracle_equivalence(geom: &Geometry, phi: &FlowMap, psi: &FlowMap, m: &[f64]) -> Result<ProbeReport> {
    let b = osculating_b(geom, m)?;
    let a_phi = arrow_of_flowline(geom, phi, m)?;
    let a_psi = arrow_of_flowline(geom, psi, m)?;
    let predicted = gb_mul(&b, &a_phi.coords(), &a_psi.coords())?;
    let mut fields = phi.fields().to_vec();
    fields.extend_from_slice(psi.fields());
    let composite = FlowMap::composition(fields).with_steps(phi.steps().max(psi.steps()));
    let meas = measure_flowline(geom, &composite, m)?;
    let samples: Vec<Vec<f64>> = meas.quotients.iter().map(GroupElement::to_flat).collect();
    Ok(distance_report(meas.t_grid, &samples, predicted.to_flat(), 0.0))
}

/// Output of [`oracle_second_order`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SecondOrderReport {
    /// Residual of the identity after subtracting `t^2 nabla_Y X`.
    pub probe: ProbeReport,
    /// Extrapolated `(Phi^X_t Phi^Y_t - Phi^X_t - Phi^Y_t + id)(m) / t^2`.
    pub measured_cross_term: Vec<f64>,
    pub predicted: Vec<f64>,
    pub cross_term_error: f64,
}

/// `(nabla_Y X)(m)`: derivative of the components of `X` along `Y(m)`.
pub fn flat_derivative(x_field: &VectorField, y_field: &VectorField, m: &[f64]) -> Result<Vec<f64>> {
    let dir = y_field.eval(m, &0.0)?;
    let jets: Vec<Jet2> = x_field.eval(&seed(m), &Jet2::constant(0.0))?;
    Ok(jets
        .iter()
        .map(|j| (0..m.len()).map(|s| j.d(s) * dir[s]).sum())
        .collect())
}

/// Second-order flow composition identity
/// `Phi^X_t Phi^Y_t(m) = Phi^X_t(m) + Phi^Y_t(m) - m + t^2 (nabla_Y X)(m) + O(t^3)`.
pub fn oracle_second_order(x_field: &VectorField, y_field: &VectorField, m: &[f64]) -> Result<SecondOrderReport> {
    let predicted = flat_derivative(x_field, y_field, m)?;
    let fx = FlowMap::new(x_field.clone());
    let fy = FlowMap::new(y_field.clone());
    let t_grid = dyadic_grid();
    let cross: Vec<Vec<f64>> = t_grid
        .par_iter()
        .map(|&t| {
            let both = compose_flows(&[fx.clone(), fy.clone()], m, &t)?;
            let a = fx.apply(m, &t)?;
            let b = fy.apply(m, &t)?;
            Ok((0..m.len())
                .map(|i| (both[i] - a[i] - b[i] + m[i]) / (t * t))
                .collect())
        })
        .collect::<Result<_>>()?;
    let residuals: Vec<f64> = cross
        .iter()
        .zip(&t_grid)
        .map(|(c, t)| {
            let d: Vec<f64> = c.iter().zip(&predicted).map(|(a, b)| (a - b) * t * t).collect();
            norm(&d)
        })
        .collect();
    let measured = extrapolate_tail(&cross);
    let err = norm(&measured.iter().zip(&predicted).map(|(a, b)| a - b).collect::<Vec<_>>());
    let slope = fit_slope(&t_grid, &residuals, SECOND_ORDER_FLOOR);
    let order_ok = match slope {
        Some(s) => s >= 2.9,
        None => max_abs(&residuals) <= SECOND_ORDER_FLOOR,
    };
    let pass = order_ok && err <= ORACLE_TOLERANCE;
    Ok(SecondOrderReport {
        probe: ProbeReport {
            t_grid,
            residuals,
            fitted_slope: slope,
            extrapolated_value: measured.clone(),
            predicted_value: predicted.clone(),
            pass,
        },
        measured_cross_term: measured,
        predicted,
        cross_term_error: err,
    })
}

fn h_coordinates(chart: &AutoChart, v: &[f64]) -> Result<Vec<f64>> {
    let c = chart.vector_to_chart(v);
    let leak = max_abs(&c[chart.p()..]);
    if leak > GENERATOR_TOLERANCE {
        return Err(Error::NotTangentToH(leak));
    }
    Ok(c[..chart.p()].to_vec())
}

/// Measures `lim t^-2 (Phi^X_t Phi^Y_t (Phi^X_t)^-1 (Phi^Y_t)^-1 (m))^N` and
/// compares it with the osculating bracket of `X(m)` and `Y(m)`.
pub fn flow_commutator_probe(geom: &Geometry, x_field: &VectorField, y_field: &VectorField, m: &[f64]) -> Result<ProbeReport> {
    let chart = geom.auto_chart(m)?;
    let b = osculating_b(geom, m)?;
    let xh = h_coordinates(&chart, &x_field.eval(m, &0.0)?)?;
    let yh = h_coordinates(&chart, &y_field.eval(m, &0.0)?)?;
    let q = geom.q();
    let predicted = gb_bracket(
        &b,
        &GroupElement::new(xh, vec![0.0; q]),
        &GroupElement::new(yh, vec![0.0; q]),
    )?
    .n;
    let fx = FlowMap::new(x_field.clone());
    let fy = FlowMap::new(y_field.clone());
    let word = [fx.clone(), fy.clone(), fx.inverse(), fy.inverse()];
    let p = geom.p();
    let t_grid = dyadic_grid();
    let samples: Vec<Vec<f64>> = t_grid
        .par_iter()
        .map(|&t| {
            let y = chart.to_chart(&compose_flows(&word, m, &t)?);
            Ok(y[p..].iter().map(|v| v / (t * t)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(distance_report(t_grid, &samples, predicted, 0.0))
}

/// Output of [`check_hug`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HugReport {
    pub probe: ProbeReport,
    pub arrow: GroupElement,
    pub log: GroupElement,
    /// Worst normal component of the field along the sampled flow line.
    pub normal_residual: f64,
}

/// Checks that the flow line of a field in H represents `exp(h, 0)`, i.e. that
/// the logarithm of its measured arrow has no normal part.
pub fn check_hug(geom: &Geometry, field: &VectorField, m: &[f64]) -> Result<HugReport> {
    let flow = FlowMap::new(field.clone());
    let mut normal_residual: f64 = 0.0;
    for t in std::iter::once(0.0).chain(dyadic_grid()) {
        for s in [t, -t] {
            let x = flow.apply(m, &s)?;
            let v = field.eval(&x, &s)?;
            let chart = geom.auto_chart(&x)?;
            normal_residual = normal_residual.max(normal_part_of_generator(&chart, &v));
        }
    }
    if normal_residual > GENERATOR_TOLERANCE {
        return Err(Error::FieldNotInH(normal_residual));
    }
    let chart = geom.auto_chart(m)?;
    let h = h_coordinates(&chart, &field.eval(m, &0.0)?)?;
    let b = osculating_b(geom, m)?;
    let meas = measure_flowline(geom, &flow, m)?;
    let expected = GroupElement::new(h, vec![0.0; geom.q()]);
    let logs: Vec<Vec<f64>> = meas
        .quotients
        .iter()
        .map(|q| gb_log(&b, q).map(|l| l.to_flat()))
        .collect::<Result<_>>()?;
    let probe = distance_report(meas.t_grid.clone(), &logs, expected.to_flat(), 0.0);
    let log = gb_log(&b, &meas.extrapolated)?;
    Ok(HugReport {
        probe,
        arrow: meas.extrapolated,
        log,
        normal_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEIS: &str = include_str!("../../../geometries/heis3.geom");
    const POL: &str = include_str!("../../../geometries/heis3-polarized.geom");
    const FOL: &str = include_str!("../../../geometries/foliation.geom");
    const TWIST: &str = include_str!("../../../geometries/contact-twist.geom");

    fn geom(text: &str) -> Geometry {
        Geometry::parse(text).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn integrate_examples() {
        let g = geom(HEIS);
        let o = [0.0, 0.0, 0.0];
        let x1 = VectorField::named(&g, "X1").unwrap();
        let out = integrate_flow(&x1, &o, &0.25, DEFAULT_STEPS).unwrap();
        assert!(close(&out, &[0.25, 0.0, 0.0], 1e-15));

        let p = geom(POL);
        let y = VectorField::combination(&p, &[1.0, 1.0]).unwrap();
        let t = 0.5;
        let out = integrate_flow(&y, &o, &t, DEFAULT_STEPS).unwrap();
        assert!(close(&out, &[t, t, t * t / 2.0], 1e-14));

        let z = VectorField::zero(3);
        assert_eq!(integrate_flow(&z, &[1.0, 2.0, 3.0], &0.3, 16).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn integrate_errors() {
        let z = VectorField::zero(3);
        assert!(matches!(
            integrate_flow(&z, &[0.0; 3], &0.1, 8),
            Err(Error::StepUnderflow { steps: 8, .. })
        ));
        assert!(matches!(
            integrate_flow(&z, &[0.0; 3], &1.5, 64),
            Err(Error::OutsideDomain(_))
        ));
        let blow = VectorField::new(
            (0..3)
                .map(|_| crate::expr::parse_expr("x^9", &["x", "y", "z"]).unwrap())
                .collect(),
            3,
        )
        .unwrap();
        assert!(matches!(
            integrate_flow(&blow, &[100.0, 0.0, 0.0], &1.0, 16),
            Err(Error::NonFiniteState)
        ));
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let g = geom(TWIST);
        let f = VectorField::combination(&g, &[1.0, 1.0]).unwrap();
        let m = [0.0, 0.0, 0.0];
        let exact = integrate_flow(&f, &m, &1.0, 4096).unwrap();
        let err = |steps| {
            let x = integrate_flow(&f, &m, &1.0, steps).unwrap();
            norm(&x.iter().zip(&exact).map(|(a, b)| a - b).collect::<Vec<_>>())
        };
        let ratio = err(16) / err(32);
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn compose_examples() {
        let g = geom(HEIS);
        let o = [0.0, 0.0, 0.0];
        let f1 = FlowMap::new(VectorField::named(&g, "X1").unwrap());
        let f2 = FlowMap::new(VectorField::named(&g, "X2").unwrap());
        let t = 0.5;
        let out = compose_flows(&[f1.clone(), f2], &o, &t).unwrap();
        assert!(close(&out, &[t, t, -t * t / 2.0], 1e-14));

        let m = [0.3, -0.2, 0.1];
        let back = compose_flows(&[f1.inverse(), f1], &m, &0.7).unwrap();
        assert!(close(&back, &m, 1e-14));

        let p = geom(POL);
        let y1 = FlowMap::new(VectorField::named(&p, "Y1").unwrap());
        let y2 = FlowMap::new(VectorField::named(&p, "Y2").unwrap());
        let out = compose_flows(&[y2, y1], &o, &t).unwrap();
        assert!(close(&out, &[t, t, t * t], 1e-14));
    }

    #[test]
    fn flowline_arrows() {
        let g = geom(HEIS);
        let o = [0.0, 0.0, 0.0];
        let x1 = VectorField::named(&g, "X1").unwrap();
        let x2 = VectorField::named(&g, "X2").unwrap();
        let a = arrow_of_flowline(&g, &FlowMap::new(x1.clone()), &o).unwrap();
        assert!(a.coords().dist(&GroupElement::new(vec![1.0, 0.0], vec![0.0])) < 1e-9);
        let a = arrow_of_flowline(&g, &FlowMap::composition(vec![x1, x2]), &o).unwrap();
        assert!(a.coords().dist(&GroupElement::new(vec![1.0, 1.0], vec![-0.5])) < 1e-9);
        let x3 = VectorField::named(&g, "X3").unwrap();
        assert!(matches!(
            arrow_of_flowline(&g, &FlowMap::new(x3), &o),
            Err(Error::NotTangentToH(_))
        ));
    }

    #[test]
    fn second_order_examples() {
        let g = geom(HEIS);
        let o = [0.0, 0.0, 0.0];
        let x1 = VectorField::named(&g, "X1").unwrap();
        let x2 = VectorField::named(&g, "X2").unwrap();
        let r = oracle_second_order(&x1, &x2, &o).unwrap();
        assert_eq!(r.predicted, vec![0.0, 0.0, -0.5]);
        assert!(r.cross_term_error < 1e-6);
        assert!(r.probe.pass);

        let r = oracle_second_order(&x1, &x1, &[0.2, 0.4, 0.0]).unwrap();
        assert!(r.cross_term_error < 1e-6 && r.probe.pass);

        let p = geom(POL);
        let y1 = VectorField::named(&p, "Y1").unwrap();
        let y2 = VectorField::named(&p, "Y2").unwrap();
        let r = oracle_second_order(&y1, &y2, &o).unwrap();
        assert_eq!(r.predicted, vec![0.0, 0.0, 0.0]);
        assert!(max_abs(&r.probe.residuals) < 1e-13);

        let tw = geom(TWIST);
        let a = VectorField::combination(&tw, &[1.0, 0.0]).unwrap();
        let b = VectorField::combination(&tw, &[0.0, 1.0]).unwrap();
        let r = oracle_second_order(&a, &b, &o).unwrap();
        let slope = r.probe.fitted_slope.unwrap();
        assert!(slope >= 2.9, "slope {slope}");
        assert!(r.probe.pass);
    }

    #[test]
    fn commutator_examples() {
        let g = geom(HEIS);
        let o = [0.0, 0.0, 0.0];
        let x1 = VectorField::named(&g, "X1").unwrap();
        let x2 = VectorField::named(&g, "X2").unwrap();
        let r = flow_commutator_probe(&g, &x1, &x2, &o).unwrap();
        assert_eq!(r.predicted_value, vec![-1.0]);
        assert!((r.extrapolated_value[0] + 1.0).abs() < 1e-9 && r.pass);
        let r = flow_commutator_probe(&g, &x1, &x1, &o).unwrap();
        assert!(r.extrapolated_value[0].abs() < 1e-9 && r.pass);

        let f = geom(FOL);
        let a = VectorField::named(&f, "E1").unwrap();
        let b = VectorField::named(&f, "E2").unwrap();
        let r = flow_commutator_probe(&f, &a, &b, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.predicted_value, vec![0.0]);
        assert!(r.pass);

        let tw = geom(TWIST);
        let a = VectorField::combination(&tw, &[0.6, -0.3]).unwrap();
        let b = VectorField::combination(&tw, &[0.2, 0.9]).unwrap();
        let r = flow_commutator_probe(&tw, &a, &b, &[0.1, -0.2, 0.3]).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn oracle_group_law_on_twist() {
        let tw = geom(TWIST);
        let a = FlowMap::new(VectorField::combination(&tw, &[0.6, -0.3]).unwrap());
        let b = FlowMap::new(VectorField::combination(&tw, &[0.2, 0.9]).unwrap());
        let r = oracle_equivalence(&tw, &a, &b, &[0.1, -0.2, 0.3]).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn hug_examples() {
        let p = geom(POL);
        let o = [0.0, 0.0, 0.0];
        let y = VectorField::combination(&p, &[1.0, 1.0]).unwrap();
        let r = check_hug(&p, &y, &o).unwrap();
        assert!(r.arrow.dist(&GroupElement::new(vec![1.0, 1.0], vec![0.5])) < 1e-9);
        assert!(r.log.dist(&GroupElement::new(vec![1.0, 1.0], vec![0.0])) < 1e-9);
        assert!(r.probe.pass);

        let g = geom(HEIS);
        for c in [[1.0, 0.0], [1.0, 1.0]] {
            let f = VectorField::combination(&g, &c).unwrap();
            let r = check_hug(&g, &f, &o).unwrap();
            assert!(r.log.dist(&GroupElement::new(c.to_vec(), vec![0.0])) < 1e-9);
        }

        let coord_x = VectorField::new(
            ["1", "0", "0"]
                .iter()
                .map(|e| crate::expr::parse_expr(e, &["x", "y", "z"]).unwrap())
                .collect(),
            3,
        )
        .unwrap();
        // d/dx is in H only where y = 0
        assert!(matches!(
            check_hug(&g, &coord_x, &[0.0, 1.0, 0.0]),
            Err(Error::FieldNotInH(_))
        ));
    }

    #[test]
    fn richardson_removes_low_orders() {
        let f = |t: f64| vec![2.0 + 3.0 * t - t * t];
        let s: Vec<Vec<f64>> = [0.1, 0.05, 0.025].iter().map(|&t| f(t)).collect();
        assert!((richardson(&s)[0] - 2.0).abs() < 1e-13);
        let slope = fit_slope(&[0.1, 0.05, 0.025], &[1e-3, 1.25e-4, 1.5625e-5], 0.0).unwrap();
        assert!((slope - 3.0).abs() < 1e-12);
        assert_eq!(fit_slope(&[0.1, 0.05], &[1.0, 0.5], 0.0), None);
    }
}
