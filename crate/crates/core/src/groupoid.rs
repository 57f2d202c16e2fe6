//! Probes of the parabolic tangent groupoid: pairs `(a, b, t)` for `t > 0`
//! glued to osculating-group arrows at `t = 0` through an exponential map.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expmaps::ExpMapHandle;
use crate::expr::Expression;
use crate::flows::{
    extrapolate_tail, fit_slope, measure_flowline, FlowMap, ProbeReport, VectorField,
    ORACLE_TOLERANCE,
};
use crate::geometry::{osculating_b, Geometry, ParabolicArrow};
use crate::jets::{curve_jet2, seed, Jet2, Scalar};
use crate::linalg::{max_abs, norm, solve};
use crate::nilpotent::{dilate_unchecked, gb_inv, gb_mul, GroupElement};

/// Points closer than this are identified when composing pairs.
pub const MATCH_TOLERANCE: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;
pub const NEWTON_TOLERANCE: f64 = 1e-10;
/// Residual accepted when damping can no longer make progress.
pub const NEWTON_STAGNATION: f64 = 1e-9;
/// Transition and convergence defects below this are rounding noise.
pub const DEFECT_FLOOR: f64 = 1e-9;
pub const MIN_ORDER: f64 = 0.9;
/// Largest ratio growth across the grid still counted as bounded.
pub const BOUNDED_GROWTH: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupoidElement {
    Pair { a: Vec<f64>, b: Vec<f64>, t: f64 },
    Arrow { arrow: ParabolicArrow },
}

fn same_point(x: &[f64], y: &[f64]) -> bool {
    x.len() == y.len() && x.iter().zip(y).all(|(a, b)| (a - b).abs() <= MATCH_TOLERANCE)
}

impl GroupoidElement {
    pub fn unit(m: &[f64], t: f64) -> Self {
        GroupoidElement::Pair {
            a: m.to_vec(),
            b: m.to_vec(),
            t,
        }
    }

    pub fn inverse(&self, geom: &Geometry) -> Result<Self> {
        Ok(match self {
            GroupoidElement::Pair { a, b, t } => GroupoidElement::Pair {
                a: b.clone(),
                b: a.clone(),
                t: *t,
            },
            GroupoidElement::Arrow { arrow } => {
                let b = osculating_b(geom, &arrow.base)?;
                GroupoidElement::Arrow {
                    arrow: ParabolicArrow::auto(arrow.base.clone(), gb_inv(&b, &arrow.coords())?),
                }
            }
        })
    }

    /// `(a, b, t) (b, c, t) = (a, c, t)`; arrows multiply in the osculating
    /// group at their common base point.
    pub fn compose(&self, other: &Self, geom: &Geometry) -> Result<Self> {
        match (self, other) {
            (
                GroupoidElement::Pair { a, b, t },
                GroupoidElement::Pair { a: b2, b: c, t: t2 },
            ) => {
                if t != t2 || !same_point(b, b2) {
                    return Err(Error::NotComposable(format!(
                        "source {b:?} at t={t} does not match target {b2:?} at t={t2}"
                    )));
                }
                Ok(GroupoidElement::Pair {
                    a: a.clone(),
                    b: c.clone(),
                    t: *t,
                })
            }
            (GroupoidElement::Arrow { arrow: x }, GroupoidElement::Arrow { arrow: y }) => {
                if !same_point(&x.base, &y.base) {
                    return Err(Error::NotComposable("arrows at different base points".into()));
                }
                let b = osculating_b(geom, &x.base)?;
                Ok(GroupoidElement::Arrow {
                    arrow: ParabolicArrow::auto(x.base.clone(), gb_mul(&b, &x.coords(), &y.coords())?),
                })
            }
            _ => Err(Error::NotComposable("elements at t = 0 and t > 0".into())),
        }
    }
}

/// `(v, t) -> (evaluate(m, delta_t v), m, t)` for `t > 0`, the arrow itself at
/// `t = 0`.
pub fn chart_psi(handle: &ExpMapHandle, m: &[f64], v: &GroupElement, t: f64) -> Result<GroupoidElement> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::OutsideDomain(t));
    }
    if t == 0.0 {
        return Ok(GroupoidElement::Arrow {
            arrow: ParabolicArrow::auto(m.to_vec(), v.clone()),
        });
    }
    let a = handle.evaluate_arrow(m, &dilate_unchecked(v, t))?;
    Ok(GroupoidElement::Pair {
        a,
        b: m.to_vec(),
        t,
    })
}

/// Scaled defect `delta_t^-1 (chart_b(evaluate(b, delta_t v)) - chart_b(a))`.
fn scaled_defect<S: Scalar>(
    handle: &ExpMapHandle,
    chart: &crate::geometry::AutoChart,
    b: &[f64],
    target: &[f64],
    v: &[S],
    t: f64,
) -> Result<Vec<S>> {
    let p = chart.p();
    let dv: Vec<S> = v
        .iter()
        .enumerate()
        .map(|(i, x)| x.scale(if i < p { t } else { t * t }))
        .collect();
    let y = chart.to_chart(&handle.evaluate(b, &dv)?);
    Ok(y
        .into_iter()
        .zip(target)
        .enumerate()
        .map(|(i, (yi, ti))| (yi - S::from_f64(*ti)).scale(if i < p { 1.0 / t } else { 1.0 / (t * t) }))
        .collect())
}

/// The arrow `v` with `evaluate(b, delta_t v) = a`, by damped Newton iteration
/// started at `v = 0`.
pub fn chart_psi_inverse(handle: &ExpMapHandle, a: &[f64], b: &[f64], t: f64) -> Result<GroupElement> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::OutsideDomain(t));
    }
    let geom = handle.geometry();
    let p = geom.p();
    let n = geom.dim();
    let chart = geom.auto_chart(b)?;
    let target = chart.to_chart(a);
    let mut v = vec![0.0; n];
    let mut f = scaled_defect(handle, &chart, b, &target, &v, t)?;
    let mut res = max_abs(&f);
    for _ in 0..NEWTON_MAX_ITER {
        if res < NEWTON_TOLERANCE {
            return Ok(GroupElement::from_flat(&v, p));
        }
        let jets: Vec<Jet2> = scaled_defect(handle, &chart, b, &target, &seed(&v), t)?;
        let jac: Vec<Vec<f64>> = jets.iter().map(|j| j.grad(n)).collect();
        let step = solve(&jac, &f).map_err(|_| Error::NewtonDivergence(res))?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = v.iter().zip(&step).map(|(x, d)| x - lambda * d).collect();
            if let Ok(ft) = scaled_defect(handle, &chart, b, &target, &trial, t) {
                let rt = max_abs(&ft);
                if rt < res {
                    v = trial;
                    f = ft;
                    res = rt;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res < NEWTON_STAGNATION {
        Ok(GroupElement::from_flat(&v, p))
    } else {
        Err(Error::NewtonDivergence(res))
    }
}

/// Output of [`transition_probe`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransitionReport {
    /// Residuals are `|phi(v, t) - v|`; the slope is the convergence order.
    pub probe: ProbeReport,
    /// `|phi(v, t) - v| / t` per grid point.
    pub ratios: Vec<f64>,
    pub sup_ratio: f64,
    /// Ratio at the finest grid point above the noise floor over the ratio at
    /// the coarsest.
    pub ratio_growth: f64,
    pub bounded: bool,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}

/// Transition `phi(v, t) = psi_1^-1(psi_2(v, t))` between two exponential maps
/// at `m`, sampled on `t_grid` (decreasing, ratio 2).
pub fn transition_probe(
    h1: &ExpMapHandle,
    h2: &ExpMapHandle,
    m: &[f64],
    v: &GroupElement,
    t_grid: &[f64],
) -> Result<TransitionReport> {
    let target = v.to_flat();
    let values: Vec<Vec<f64>> = t_grid
        .par_iter()
        .map(|&t| {
            let a = h2.evaluate_arrow(m, &dilate_unchecked(v, t))?;
            Ok(chart_psi_inverse(h1, &a, m, t)?.to_flat())
        })
        .collect::<Result<_>>()?;
    let residuals: Vec<f64> = values.iter().map(|x| dist(x, &target)).collect();
    let ratios: Vec<f64> = residuals.iter().zip(t_grid).map(|(r, t)| r / t).collect();
    let above: Vec<usize> = (0..residuals.len()).filter(|&i| residuals[i] > DEFECT_FLOOR).collect();
    let ratio_growth = match (above.first(), above.last()) {
        (Some(&i), Some(&j)) if i != j => ratios[j] / ratios[i],
        _ => 1.0,
    };
    let slope = fit_slope(t_grid, &residuals, DEFECT_FLOOR);
    let order_ok = slope.map_or(above.len() < 3, |s| s >= MIN_ORDER);
    let bounded = ratio_growth <= BOUNDED_GROWTH;
    let sup_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(TransitionReport {
        probe: ProbeReport {
            t_grid: t_grid.to_vec(),
            residuals,
            fitted_slope: slope,
            extrapolated_value: extrapolate_tail(&values),
            predicted_value: target,
            pass: bounded && order_ok,
        },
        ratios,
        sup_ratio,
        ratio_growth,
        bounded,
    })
}

/// Taylor coordinates at `curve(0)` of a curve given by expressions in `t`,
/// in the auto H-chart; rejects curves not tangent to H.
pub fn curve_arrow(geom: &Geometry, curve: &[Expression]) -> Result<ParabolicArrow> {
    if curve.len() != geom.dim() {
        return Err(Error::DimensionMismatch("curve dimension".into()));
    }
    let m: Vec<f64> = curve.iter().map(|c| c.eval(&[0.0])).collect::<Result<_>>()?;
    let chart = geom.auto_chart(&m)?;
    let p = geom.p();
    let jet = curve_jet2(
        |t| {
            let x: Vec<Jet2> = curve
                .iter()
                .map(|c| c.eval(std::slice::from_ref(t)))
                .collect::<Result<_>>()?;
            Ok(chart.to_chart(&x))
        },
        0.0,
    )?;
    let leak = max_abs(&jet.first[p..]);
    if leak > crate::flows::GENERATOR_TOLERANCE {
        return Err(Error::NotTangentToH(leak));
    }
    Ok(ParabolicArrow::auto(
        m,
        GroupElement::new(
            jet.first[..p].to_vec(),
            jet.second[p..].iter().map(|s| 0.5 * s).collect(),
        ),
    ))
}

fn eval_curve(curve: &[Expression], t: f64) -> Result<Vec<f64>> {
    curve.iter().map(|c| c.eval(&[t])).collect()
}

/// Output of [`convergence_probe`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub handle: String,
    pub target: GroupElement,
    pub probe: ProbeReport,
}

/// Convergence of `psi^-1(a(t), b(t), t)` to `[a] [b]^-1` as `t -> 0`.
pub fn convergence_probe(
    handle: &ExpMapHandle,
    a: &[Expression],
    b: &[Expression],
    t_grid: &[f64],
) -> Result<ConvergenceReport> {
    let geom = handle.geometry();
    let arrow_a = curve_arrow(geom, a)?;
    let arrow_b = curve_arrow(geom, b)?;
    if !same_point(&arrow_a.base, &arrow_b.base) {
        return Err(Error::DimensionMismatch("curves must start at the same point".into()));
    }
    let bm = osculating_b(geom, &arrow_a.base)?;
    let target = gb_mul(&bm, &arrow_a.coords(), &gb_inv(&bm, &arrow_b.coords())?)?;
    let values: Vec<Vec<f64>> = t_grid
        .par_iter()
        .map(|&t| {
            let at = eval_curve(a, t)?;
            let bt = eval_curve(b, t)?;
            Ok(chart_psi_inverse(handle, &at, &bt, t)?.to_flat())
        })
        .collect::<Result<_>>()?;
    let predicted = target.to_flat();
    let residuals: Vec<f64> = values.iter().map(|x| dist(x, &predicted)).collect();
    let slope = fit_slope(t_grid, &residuals, DEFECT_FLOOR);
    let extrapolated = extrapolate_tail(&values);
    let above = residuals.iter().filter(|r| **r > DEFECT_FLOOR).count();
    let order_ok = slope.map_or(above < 3, |s| s >= MIN_ORDER);
    let pass = order_ok && dist(&extrapolated, &predicted) <= ORACLE_TOLERANCE;
    Ok(ConvergenceReport {
        handle: handle.label(),
        target,
        probe: ProbeReport {
            t_grid: t_grid.to_vec(),
            residuals,
            fitted_slope: slope,
            extrapolated_value: extrapolated,
            predicted_value: predicted,
            pass,
        },
    })
}

/// A parabolic flow through `m` whose flow line represents `arrow`:
/// `x' = sum h_i X_i + 2 s sum w_k X_{p+k}` with `w = n - b(h, h)/2`.
pub fn parabolic_flow(geom: &Geometry, arrow: &ParabolicArrow) -> Result<VectorField> {
    let b = osculating_b(geom, &arrow.base)?;
    let bhh = b.apply(&arrow.h, &arrow.h);
    let w: Vec<f64> = arrow.n.iter().zip(&bhh).map(|(n, c)| n - 0.5 * c).collect();
    VectorField::combination(geom, &arrow.h)?.with_normal_drift(geom, &w)
}

/// Flow realization of the convergence target: the measured arrow of
/// `Phi^a_t o Phi^{b^-1}_t` at `m` against `[a] [b]^-1`.
pub fn flow_cross_check(geom: &Geometry, a: &[Expression], b: &[Expression]) -> Result<ProbeReport> {
    let arrow_a = curve_arrow(geom, a)?;
    let arrow_b = curve_arrow(geom, b)?;
    let m = arrow_a.base.clone();
    let bm = osculating_b(geom, &m)?;
    let b_inv = ParabolicArrow::auto(m.clone(), gb_inv(&bm, &arrow_b.coords())?);
    let target = gb_mul(&bm, &arrow_a.coords(), &b_inv.coords())?;
    let flow = FlowMap::composition(vec![parabolic_flow(geom, &arrow_a)?, parabolic_flow(geom, &b_inv)?]);
    let meas = measure_flowline(geom, &flow, &m)?;
    let samples: Vec<Vec<f64>> = meas.quotients.iter().map(GroupElement::to_flat).collect();
    let predicted = target.to_flat();
    let residuals: Vec<f64> = samples.iter().map(|s| dist(s, &predicted)).collect();
    let extrapolated = extrapolate_tail(&samples);
    Ok(ProbeReport {
        fitted_slope: fit_slope(&meas.t_grid, &residuals, DEFECT_FLOOR),
        t_grid: meas.t_grid,
        residuals,
        pass: dist(&extrapolated, &predicted) <= ORACLE_TOLERANCE,
        extrapolated_value: extrapolated,
        predicted_value: predicted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expmaps::{exp_broken_shear, exp_folland_stein, exp_from_chart_family, exp_from_connection, ChartFamily, Connection};
    use crate::expr::parse_expr;
    use crate::flows::dyadic_grid;

    const HEIS: &str = include_str!("../../../geometries/heis3.geom");
    const POL: &str = include_str!("../../../geometries/heis3-polarized.geom");
    const TWIST: &str = include_str!("../../../geometries/contact-twist.geom");

    fn geom(text: &str) -> Geometry {
        Geometry::parse(text).unwrap()
    }

    fn curve(text: &[&str]) -> Vec<Expression> {
        text.iter().map(|c| parse_expr(c, &["t"]).unwrap()).collect()
    }

    fn e1() -> GroupElement {
        GroupElement::new(vec![1.0, 0.0], vec![0.0])
    }

    #[test]
    fn psi_examples() {
        let g = geom(HEIS);
        let fs = exp_folland_stein(&g);
        let o = vec![0.0; 3];
        match chart_psi(&fs, &o, &e1(), 0.5).unwrap() {
            GroupoidElement::Pair { a, b, t } => {
                assert!(dist(&a, &[0.5, 0.0, 0.0]) < 1e-14);
                assert_eq!(b, o);
                assert_eq!(t, 0.5);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            chart_psi(&fs, &o, &e1(), 0.0).unwrap(),
            GroupoidElement::Arrow {
                arrow: ParabolicArrow::auto(o.clone(), e1())
            }
        );
        let m = vec![0.1, 0.2, 0.3];
        assert_eq!(
            chart_psi(&fs, &m, &GroupElement::identity(2, 1), 0.3).unwrap(),
            GroupoidElement::unit(&m, 0.3)
        );
    }

    #[test]
    fn psi_inverse_examples() {
        let g = geom(HEIS);
        let fs = exp_folland_stein(&g);
        let o = [0.0; 3];
        let t = 0.125;
        let v = chart_psi_inverse(&fs, &[t, 0.0, 0.0], &o, t).unwrap();
        assert!(v.dist(&e1()) < 1e-9);
        let v = chart_psi_inverse(&fs, &[0.2, 0.1, 0.4], &[0.2, 0.1, 0.4], 0.3).unwrap();
        assert_eq!(v, GroupElement::identity(2, 1));

        let m = [0.2, -0.1, 0.3];
        let w = GroupElement::new(vec![0.4, -0.3], vec![0.6]);
        for t in [0.5, 0.1, 1.0 / 1024.0] {
            let GroupoidElement::Pair { a, .. } = chart_psi(&fs, &m, &w, t).unwrap() else {
                unreachable!()
            };
            assert!(chart_psi_inverse(&fs, &a, &m, t).unwrap().dist(&w) < 1e-9);
        }
        assert!(matches!(
            chart_psi_inverse(&fs, &[5.0, 0.0, 0.0], &o, 0.01),
            Err(Error::NewtonDivergence(_))
        ));
    }

    #[test]
    fn groupoid_laws() {
        let g = geom(HEIS);
        let (a, b, c) = (vec![0.0, 0.1, 0.2], vec![0.3, 0.0, 0.1], vec![1.0, 1.0, 1.0]);
        let ab = GroupoidElement::Pair { a: a.clone(), b: b.clone(), t: 0.5 };
        let bc = GroupoidElement::Pair { a: b.clone(), b: c.clone(), t: 0.5 };
        assert_eq!(
            ab.compose(&bc, &g).unwrap(),
            GroupoidElement::Pair { a: a.clone(), b: c.clone(), t: 0.5 }
        );
        assert!(matches!(bc.compose(&ab, &g), Err(Error::NotComposable(_))));
        let inv = ab.inverse(&g).unwrap();
        assert_eq!(ab.compose(&inv, &g).unwrap(), GroupoidElement::unit(&a, 0.5));

        let x = GroupoidElement::Arrow { arrow: ParabolicArrow::auto(vec![0.0; 3], e1()) };
        let y = GroupoidElement::Arrow {
            arrow: ParabolicArrow::auto(vec![0.0; 3], GroupElement::new(vec![0.0, 1.0], vec![0.0])),
        };
        let GroupoidElement::Arrow { arrow } = x.compose(&y, &g).unwrap() else { unreachable!() };
        assert_eq!(arrow.coords(), GroupElement::new(vec![1.0, 1.0], vec![-0.5]));
        assert!(matches!(x.compose(&ab, &g), Err(Error::NotComposable(_))));
    }

    #[test]
    fn transitions() {
        let g = geom(HEIS);
        let m = [0.0; 3];
        let v = GroupElement::new(vec![0.6, -0.4], vec![0.3]);
        let grid = dyadic_grid();
        let fs = exp_folland_stein(&g);
        let same = transition_probe(&fs, &fs, &m, &v, &grid).unwrap();
        assert!(max_abs(&same.probe.residuals) < 1e-9 && same.probe.pass);

        // on the Heisenberg group both maps are left translation
        let chart = exp_from_chart_family(&g, ChartFamily::auto(), &[m.to_vec()]).unwrap();
        let r = transition_probe(&fs, &chart, &m, &v, &grid).unwrap();
        assert!(max_abs(&r.probe.residuals) < 1e-9 && r.probe.pass);

        let tw = geom(TWIST);
        let p = [0.1, -0.2, 0.3];
        let fs_tw = exp_folland_stein(&tw);
        let chart_tw = exp_from_chart_family(&tw, ChartFamily::auto(), &[p.to_vec()]).unwrap();
        let r = transition_probe(&fs_tw, &chart_tw, &p, &v, &grid).unwrap();
        assert!(r.bounded && r.probe.pass, "{r:?}");
        assert!(r.probe.fitted_slope.unwrap() >= 0.9);

        let conn = exp_from_connection(&g, Connection::frame_parallel(&g), &[m.to_vec()]).unwrap();
        assert!(transition_probe(&fs, &conn, &m, &v, &grid).unwrap().probe.pass);

        let broken = exp_broken_shear(&g).unwrap();
        let r = transition_probe(&fs, &broken, &m, &e1(), &grid).unwrap();
        assert!(!r.bounded && r.ratio_growth >= 10.0, "{r:?}");
    }

    #[test]
    fn convergence_examples() {
        let p = geom(POL);
        let fs = exp_folland_stein(&p);
        let grid = dyadic_grid();
        let a = curve(&["t", "t", "t^2"]);
        let b = curve(&["t", "0", "0"]);
        let r = convergence_probe(&fs, &a, &b, &grid).unwrap();
        assert_eq!(r.target, GroupElement::new(vec![0.0, 1.0], vec![0.0]));
        assert!(r.probe.pass, "{r:?}");
        let d = convergence_probe(&fs, &a, &a, &grid).unwrap();
        assert_eq!(d.target, GroupElement::identity(2, 1));
        assert!(d.probe.pass);
        assert!(flow_cross_check(&p, &a, &b).unwrap().pass);

        let g = geom(HEIS);
        let fs = exp_folland_stein(&g);
        let x1 = curve(&["t", "0", "0"]);
        let x2 = curve(&["0", "t", "0"]);
        let r = convergence_probe(&fs, &x1, &x2, &grid).unwrap();
        assert_eq!(r.target, GroupElement::new(vec![1.0, -1.0], vec![0.5]));
        assert!(r.probe.pass, "{r:?}");
        assert!(flow_cross_check(&g, &x1, &x2).unwrap().pass);

        let vertical = curve(&["0", "0", "t"]);
        assert!(matches!(
            convergence_probe(&fs, &vertical, &x2, &grid),
            Err(Error::NotTangentToH(_))
        ));
    }
}
