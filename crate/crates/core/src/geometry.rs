//! H-charts, the osculating b-tensor and group at a point, Taylor-coordinate
//! changes and the parabolic pushforward.
//!
//! Every point `m` carries an auto-constructed H-chart: the affine map
//! `x -> F(m)^-1 (x - m)` where the columns of `F(m)` are the frame fields at
//! `m`. Its coordinate vectors at `m` are exactly the frame, so the first `p`
//! span `H_m` and the last `q` give the splitting used for normal components.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{parse_geometry, GeometrySpec};
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::jets::{curve_jet2, map_jet2, seed, Jet2, MapJet2, Scalar};
use crate::linalg::{mat_vec, max_abs, norm};
use crate::nilpotent::{
    dilate_unchecked, gb_bracket, gb_commutator, gb_exp, gb_inv, gb_log, gb_mul, AlgebraElement,
    BilinearMap, ClassHint, GroupElement,
};

/// Frames whose Gram matrix has a larger condition number are rejected.
pub const GRAM_CONDITION_LIMIT: f64 = 1e8;
/// Charts must map the base point to within this distance of the origin.
pub const CENTER_TOLERANCE: f64 = 1e-10;
/// Tolerance on normal components when checking that vectors lie in H.
pub const H_TOLERANCE: f64 = 1e-9;

/// A named map `R^n -> R^n` given by component expressions.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprMap {
    components: Vec<Expression>,
}

impl ExprMap {
    pub fn new(components: Vec<Expression>) -> Self {
        Self { components }
    }

    pub fn components(&self) -> &[Expression] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn eval<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>> {
        self.components.iter().map(|e| e.eval(x)).collect()
    }

    pub fn jet(&self, point: &[f64]) -> Result<MapJet2> {
        map_jet2(|x| self.eval(x), point)
    }
}

/// Identifies the H-chart in which Taylor coordinates are expressed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartId {
    /// The auto-constructed affine frame chart at the base point.
    Auto,
    Named(String),
}

/// A parabolic arrow: base point and Taylor coordinates `(h, n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParabolicArrow {
    pub base: Vec<f64>,
    pub h: Vec<f64>,
    pub n: Vec<f64>,
    pub chart: ChartId,
}

impl ParabolicArrow {
    pub fn auto(base: Vec<f64>, coords: GroupElement) -> Self {
        Self {
            base,
            h: coords.h,
            n: coords.n,
            chart: ChartId::Auto,
        }
    }

    pub fn coords(&self) -> GroupElement {
        GroupElement::new(self.h.clone(), self.n.clone())
    }
}

/// The affine H-chart `x -> F(m)^-1 (x - m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AutoChart {
    base: Vec<f64>,
    /// Row-major `F(m)`; column `i` is frame field `i` at `m`.
    frame: Vec<Vec<f64>>,
    inverse: Vec<Vec<f64>>,
    p: usize,
}

impl AutoChart {
    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Frame field `i` at the base point.
    pub fn field(&self, i: usize) -> Vec<f64> {
        self.frame.iter().map(|row| row[i]).collect()
    }

    pub fn frame_rows(&self) -> &[Vec<f64>] {
        &self.frame
    }

    /// Chart coordinates of an ambient point.
    pub fn to_chart<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let shifted: Vec<S> = x
            .iter()
            .zip(&self.base)
            .map(|(xi, mi)| xi.clone() - S::from_f64(*mi))
            .collect();
        mat_vec(&self.inverse, &shifted)
    }

    /// Ambient point with the given chart coordinates.
    pub fn from_chart<S: Scalar>(&self, y: &[S]) -> Vec<S> {
        mat_vec(&self.frame, y)
            .into_iter()
            .zip(&self.base)
            .map(|(v, mi)| v + S::from_f64(*mi))
            .collect()
    }

    /// Components of a tangent vector in the frame at the base point.
    pub fn vector_to_chart(&self, v: &[f64]) -> Vec<f64> {
        mat_vec(&self.inverse, v)
    }

    pub fn vector_from_chart(&self, v: &[f64]) -> Vec<f64> {
        mat_vec(&self.frame, v)
    }
}

/// A manifold chart `R^n` with a distribution given by a frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    spec: GeometrySpec,
}

impl Geometry {
    pub fn new(spec: GeometrySpec) -> Self {
        Self { spec }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(Self::new(parse_geometry(text)?))
    }

    pub fn spec(&self) -> &GeometrySpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn p(&self) -> usize {
        self.spec.h_dim
    }

    pub fn q(&self) -> usize {
        self.spec.q()
    }

    fn check_point(&self, x: usize) -> Result<()> {
        if x != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has {x} coordinates, geometry `{}` has dimension {}",
                self.name(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Frame fields at `x`: `out[i][k]` is component `k` of field `i`.
    pub fn frame_at<S: Scalar>(&self, x: &[S]) -> Result<Vec<Vec<S>>> {
        self.check_point(x.len())?;
        self.spec
            .frame
            .iter()
            .map(|(_, comps)| comps.iter().map(|e| e.eval(x)).collect())
            .collect()
    }

    /// Condition number of the frame's Gram matrix at `m`.
    pub fn gram_condition(&self, m: &[f64]) -> Result<f64> {
        let fields = self.frame_at(m)?;
        let n = self.dim();
        let f = DMatrix::from_fn(n, n, |k, i| fields[i][k]);
        let sv = f.svd(false, false).singular_values;
        let max = sv.max();
        let min = sv.min();
        Ok(if min == 0.0 {
            f64::INFINITY
        } else {
            (max / min).powi(2)
        })
    }

    /// The auto H-chart at `m`.
    pub fn auto_chart(&self, m: &[f64]) -> Result<AutoChart> {
        let cond = self.gram_condition(m)?;
        if !(cond <= GRAM_CONDITION_LIMIT) {
            return Err(Error::DegenerateFrame(cond));
        }
        let fields = self.frame_at(m)?;
        let n = self.dim();
        let f = DMatrix::from_fn(n, n, |k, i| fields[i][k]);
        let inv = f
            .clone()
            .try_inverse()
            .ok_or(Error::DegenerateFrame(f64::INFINITY))?;
        let rows = |mat: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..n).map(|r| (0..n).map(|c| mat[(r, c)]).collect()).collect()
        };
        Ok(AutoChart {
            base: m.to_vec(),
            frame: rows(&f),
            inverse: rows(&inv),
            p: self.p(),
        })
    }

    /// Normal part (frame components `p..n`) of a tangent vector at `m`,
    /// relative to its length.
    pub fn normal_residual(&self, m: &[f64], v: &[f64]) -> Result<f64> {
        let chart = self.auto_chart(m)?;
        let c = chart.vector_to_chart(v);
        let scale = norm(&c).max(f64::MIN_POSITIVE);
        Ok(max_abs(&c[self.p()..]) / scale)
    }

    pub fn chart_map(&self, name: &str) -> Result<ExprMap> {
        self.spec
            .chart(name)
            .map(|c| ExprMap::new(c.to_vec()))
            .ok_or_else(|| Error::UnknownName(name.into()))
    }

    pub fn map(&self, name: &str) -> Result<ExprMap> {
        self.spec
            .map(name)
            .map(|c| ExprMap::new(c.to_vec()))
            .ok_or_else(|| Error::UnknownName(name.into()))
    }
}

/// Result of [`validate_h_chart`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChartValidation {
    pub valid: bool,
    /// Largest relative normal component among the first `p` coordinate
    /// vectors at the point.
    pub residual: f64,
}

/// Checks that `chart` is centered at `m` and that its first `p` coordinate
/// vectors at `m` span `H_m`.
pub fn validate_h_chart(geom: &Geometry, chart: &ExprMap, m: &[f64]) -> Result<ChartValidation> {
    let jet = chart.jet(m)?;
    let offset = max_abs(&jet.value);
    if offset > CENTER_TOLERANCE {
        return Err(Error::NotCentered(offset));
    }
    let n = geom.dim();
    let d = DMatrix::from_fn(n, n, |r, c| jet.jacobian[r][c]);
    let dinv = d.try_inverse().ok_or(Error::NotHChartChange(f64::INFINITY))?;
    let mut residual: f64 = 0.0;
    for i in 0..geom.p() {
        let col: Vec<f64> = (0..n).map(|r| dinv[(r, i)]).collect();
        residual = residual.max(geom.normal_residual(m, &col)?);
    }
    Ok(ChartValidation {
        valid: residual <= H_TOLERANCE,
        residual,
    })
}

/// `b_{ij}^k`: normal component of `(nabla_{X_j} X_i)(m)` in the auto chart
/// at `m`.
pub fn osculating_b(geom: &Geometry, m: &[f64]) -> Result<BilinearMap> {
    let chart = geom.auto_chart(m)?;
    let (n, p, q) = (geom.dim(), geom.p(), geom.q());
    let fields: Vec<Vec<Jet2>> = geom.frame_at(&seed(m))?;
    let mut b = BilinearMap::zeros(p, q);
    for i in 0..p {
        for j in 0..p {
            let xj = chart.field(j);
            // directional derivative of X_i along X_j(m)
            let dir: Vec<f64> = (0..n)
                .map(|l| (0..n).map(|s| fields[i][l].d(s) * xj[s]).sum())
                .collect();
            let c = chart.vector_to_chart(&dir);
            for k in 0..q {
                b.set(k, i, j, c[p + k]);
            }
        }
    }
    Ok(b)
}

/// The osculating group at a point, presented in a particular H-chart.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OsculatingGroup {
    pub base: Vec<f64>,
    pub chart: ChartId,
    pub b: BilinearMap,
}

impl OsculatingGroup {
    pub fn p(&self) -> usize {
        self.b.p
    }

    pub fn q(&self) -> usize {
        self.b.q
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement::identity(self.b.p, self.b.q)
    }

    pub fn mul(&self, x: &GroupElement, y: &GroupElement) -> Result<GroupElement> {
        gb_mul(&self.b, x, y)
    }

    pub fn inv(&self, x: &GroupElement) -> Result<GroupElement> {
        gb_inv(&self.b, x)
    }

    pub fn commutator(&self, x: &GroupElement, y: &GroupElement) -> Result<GroupElement> {
        gb_commutator(&self.b, x, y)
    }

    pub fn exp(&self, x: &AlgebraElement) -> Result<GroupElement> {
        gb_exp(&self.b, x)
    }

    pub fn log(&self, g: &GroupElement) -> Result<AlgebraElement> {
        gb_log(&self.b, g)
    }

    pub fn bracket(&self, x: &AlgebraElement, y: &AlgebraElement) -> Result<AlgebraElement> {
        gb_bracket(&self.b, x, y)
    }

    pub fn skew_rank(&self) -> usize {
        self.b.skew_rank()
    }

    pub fn class_hint(&self) -> ClassHint {
        self.b.class_hint()
    }
}

pub fn osculating_group(geom: &Geometry, m: &[f64]) -> Result<OsculatingGroup> {
    Ok(OsculatingGroup {
        base: m.to_vec(),
        chart: ChartId::Auto,
        b: osculating_b(geom, m)?,
    })
}

/// Normal part of the osculating bracket `[(v, 0), (w, 0)]`, i.e.
/// `b(v, w) - b(w, v)`.
pub fn osculating_bracket(geom: &Geometry, m: &[f64], v: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let b = osculating_b(geom, m)?;
    if v.len() != b.p || w.len() != b.p {
        return Err(Error::DimensionMismatch("bracket arguments must lie in R^p".into()));
    }
    let q = b.q;
    let x = GroupElement::new(v.to_vec(), vec![0.0; q]);
    let y = GroupElement::new(w.to_vec(), vec![0.0; q]);
    Ok(gb_bracket(&b, &x, &y)?.n)
}

/// Change of Taylor coordinates induced by a change of H-charts `psi`
/// centered at the origin:
/// `h' = D psi(h)`, `n' = [D psi(n) + D^2 psi(h, h) / 2]^N`.
pub fn taylor_change(psi: &ExprMap, p: usize, arrow: &GroupElement) -> Result<GroupElement> {
    let n = psi.dim();
    if arrow.h.len() != p || arrow.h.len() + arrow.n.len() != n {
        return Err(Error::DimensionMismatch("arrow does not match chart dimension".into()));
    }
    let jet = psi.jet(&vec![0.0; n])?;
    let offset = max_abs(&jet.value);
    if offset > CENTER_TOLERANCE {
        return Err(Error::NotHChartChange(offset));
    }
    let mut leak: f64 = 0.0;
    for row in &jet.jacobian[p..] {
        leak = leak.max(max_abs(&row[..p]));
    }
    if leak > H_TOLERANCE {
        return Err(Error::NotHChartChange(leak));
    }
    let h_emb: Vec<f64> = arrow.h.iter().copied().chain(std::iter::repeat_n(0.0, n - p)).collect();
    let n_emb: Vec<f64> = std::iter::repeat_n(0.0, p).chain(arrow.n.iter().copied()).collect();
    let dh = jet.apply(&h_emb);
    let dn = jet.apply(&n_emb);
    let n_new = (p..n)
        .map(|k| dn[k] + 0.5 * jet.second(k, &h_emb, &h_emb))
        .collect();
    Ok(GroupElement::new(dh[..p].to_vec(), n_new))
}

/// Parabolic derivative of `phi: (src, H) -> (dst, H')` applied to an arrow
/// given in the auto chart of `src` at `arrow.base`; the result is in the auto
/// chart of `dst` at `phi(base)`.
pub fn parabolic_pushforward(
    src: &Geometry,
    dst: &Geometry,
    phi: &ExprMap,
    arrow: &ParabolicArrow,
) -> Result<ParabolicArrow> {
    if arrow.chart != ChartId::Auto {
        return Err(Error::DimensionMismatch(
            "pushforward expects arrows in the auto chart".into(),
        ));
    }
    let m = &arrow.base;
    let src_chart = src.auto_chart(m)?;
    let image: Vec<f64> = phi.eval(m)?;
    let dst_chart = dst.auto_chart(&image)?;
    let jet = phi.jet(m)?;
    let mut leak: f64 = 0.0;
    for i in 0..src.p() {
        let pushed = jet.apply(&src_chart.field(i));
        leak = leak.max(dst.normal_residual(&image, &pushed)?);
    }
    if leak > H_TOLERANCE {
        return Err(Error::NotHCompatible(leak));
    }
    let coords = arrow.coords();
    let c = curve_jet2(
        |t| {
            let tt = t.clone() * t.clone();
            let y: Vec<Jet2> = coords
                .h
                .iter()
                .map(|h| t.scale(*h))
                .chain(coords.n.iter().map(|n| tt.scale(*n)))
                .collect();
            let x = src_chart.from_chart(&y);
            let fx = phi.eval(&x)?;
            Ok(dst_chart.to_chart(&fx))
        },
        0.0,
    )?;
    let p = dst.p();
    Ok(ParabolicArrow {
        base: image,
        h: c.first[..p].to_vec(),
        n: c.second[p..].iter().map(|v| 0.5 * v).collect(),
        chart: ChartId::Auto,
    })
}

/// Dilation `delta_s` of an arrow's Taylor coordinates for any real `s`.
pub fn dilate_arrow(coords: &GroupElement, s: f64) -> GroupElement {
    dilate_unchecked(coords, s)
}

/// JSON description of the osculating group at a point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OsculatingReport {
    pub point: Vec<f64>,
    pub p: usize,
    pub q: usize,
    pub b: BilinearMap,
    pub skew_rank: usize,
    pub class_hint: ClassHint,
}

pub fn describe(geom: &Geometry, m: &[f64]) -> Result<OsculatingReport> {
    let g = osculating_group(geom, m)?;
    Ok(OsculatingReport {
        point: m.to_vec(),
        p: g.p(),
        q: g.q(),
        skew_rank: g.skew_rank(),
        class_hint: g.class_hint(),
        b: g.b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    const HEIS: &str = include_str!("../../../geometries/heis3.geom");
    const POL: &str = include_str!("../../../geometries/heis3-polarized.geom");
    const FOL: &str = include_str!("../../../geometries/foliation.geom");

    fn map(exprs: &[&str]) -> ExprMap {
        let vars = ["x", "y", "z"];
        ExprMap::new(exprs.iter().map(|e| parse_expr(e, &vars).unwrap()).collect())
    }

    #[test]
    fn heisenberg_b_tensor() {
        let g = Geometry::parse(HEIS).unwrap();
        let b = osculating_b(&g, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(b.get(0, 0, 1), -0.5);
        assert_eq!(b.get(0, 1, 0), 0.5);
        assert_eq!(b.get(0, 0, 0), 0.0);
        assert_eq!(b.get(0, 1, 1), 0.0);
    }

    #[test]
    fn polarized_and_foliation_b_tensors() {
        let g = Geometry::parse(POL).unwrap();
        let b = osculating_b(&g, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(b.coeffs, vec![vec![vec![0.0, 0.0], vec![1.0, 0.0]]]);

        let f = Geometry::parse(FOL).unwrap();
        for m in [[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]] {
            assert_eq!(osculating_b(&f, &m).unwrap(), BilinearMap::zeros(2, 1));
            assert_eq!(osculating_group(&f, &m).unwrap().class_hint(), ClassHint::Abelian);
        }
    }

    #[test]
    fn heisenberg_group_is_heisenberg_everywhere() {
        let g = Geometry::parse(HEIS).unwrap();
        for m in [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-0.7, 2.0, 5.0]] {
            let grp = osculating_group(&g, &m).unwrap();
            assert_eq!(grp.skew_rank(), 2);
            assert_eq!(grp.class_hint(), ClassHint::HeisenbergLike);
        }
    }

    #[test]
    fn h_chart_validation() {
        let g = Geometry::parse(HEIS).unwrap();
        let origin = [0.0, 0.0, 0.0];
        let id = map(&["x", "y", "z"]);
        assert!(validate_h_chart(&g, &id, &origin).unwrap().valid);

        let translate = map(&["x", "y - 1", "z"]);
        let v = validate_h_chart(&g, &translate, &[0.0, 1.0, 0.0]).unwrap();
        assert!(!v.valid);
        assert!(v.residual > 0.1);

        let shear = map(&["x", "y", "z + x^2"]);
        assert!(validate_h_chart(&g, &shear, &origin).unwrap().valid);

        assert!(matches!(
            validate_h_chart(&g, &id, &[0.0, 1.0, 0.0]),
            Err(Error::NotCentered(_))
        ));
    }

    #[test]
    fn degenerate_frame_is_rejected() {
        let text = HEIS.replace("X3 = (0, 0, 1)", "X3 = (x, 0, 0)");
        let g = Geometry::parse(&text).unwrap();
        assert!(matches!(
            osculating_b(&g, &[0.0, 0.0, 0.0]),
            Err(Error::DegenerateFrame(_))
        ));
    }

    #[test]
    fn brackets() {
        let g = Geometry::parse(HEIS).unwrap();
        let o = [0.0, 0.0, 0.0];
        assert_eq!(osculating_bracket(&g, &o, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), vec![-1.0]);
        assert_eq!(osculating_bracket(&g, &o, &[0.3, 0.4], &[0.3, 0.4]).unwrap(), vec![0.0]);
        let f = Geometry::parse(FOL).unwrap();
        assert_eq!(osculating_bracket(&f, &o, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn taylor_change_examples() {
        let shear = map(&["x", "y", "z + x^2"]);
        let a = GroupElement::new(vec![1.0, 0.0], vec![0.0]);
        // the curve (t, 0, 0) becomes (t, 0, t^2)
        assert_eq!(
            taylor_change(&shear, 2, &a).unwrap(),
            GroupElement::new(vec![1.0, 0.0], vec![1.0])
        );

        let linear = map(&["2*x + y", "x - y", "3*z"]);
        let a = GroupElement::new(vec![1.0, 2.0], vec![0.5]);
        assert_eq!(
            taylor_change(&linear, 2, &a).unwrap(),
            GroupElement::new(vec![4.0, -1.0], vec![1.5])
        );

        let id = map(&["x", "y", "z"]);
        assert_eq!(taylor_change(&id, 2, &a).unwrap(), a);

        let bad = map(&["x", "y", "z + x"]);
        assert!(matches!(
            taylor_change(&bad, 2, &a),
            Err(Error::NotHChartChange(_))
        ));
    }

    #[test]
    fn pushforward_examples() {
        let g = Geometry::parse(HEIS).unwrap();
        let o = vec![0.0, 0.0, 0.0];
        let arrow = ParabolicArrow::auto(o.clone(), GroupElement::new(vec![1.0, 0.0], vec![0.0]));
        let swap = g.map("swap").unwrap();
        let out = parabolic_pushforward(&g, &g, &swap, &arrow).unwrap();
        assert_eq!(out.h, vec![0.0, 1.0]);
        assert_eq!(out.n, vec![0.0]);

        let id = map(&["x", "y", "z"]);
        let a = ParabolicArrow::auto(vec![0.2, -0.1, 0.4], GroupElement::new(vec![0.3, 0.7], vec![-1.1]));
        let out = parabolic_pushforward(&g, &g, &id, &a).unwrap();
        assert!(out.coords().dist(&a.coords()) < 1e-14);

        // z -> z + x is not H-compatible at the origin
        let tilt = map(&["x", "y", "z + x"]);
        assert!(matches!(
            parabolic_pushforward(&g, &g, &tilt, &arrow),
            Err(Error::NotHCompatible(_))
        ));
    }

    #[test]
    fn pushforward_through_chart_change_matches_taylor_change() {
        let g = Geometry::parse(HEIS).unwrap();
        let sheared = Geometry::parse(include_str!("../../../geometries/heis3-sheared.geom")).unwrap();
        let shear = g.map("shear").unwrap();
        for (h, n) in [([1.0, 0.0], 0.0), ([0.4, -1.3], 0.25), ([-2.0, 0.5], 1.0)] {
            let coords = GroupElement::new(h.to_vec(), vec![n]);
            let arrow = ParabolicArrow::auto(vec![0.0; 3], coords.clone());
            let pushed = parabolic_pushforward(&g, &sheared, &shear, &arrow).unwrap();
            let changed = taylor_change(&shear, 2, &coords).unwrap();
            assert!(pushed.coords().dist(&changed) < 1e-14);
        }
    }
}
