//! Exponential maps `T_H M -> M` and a verifier for H-adaptedness.
//!
//! Arrows are passed in Taylor coordinates of the auto H-chart at the base
//! point, flattened as `(h, n)`. A handle is H-adapted when the curve
//! `t -> evaluate(m, delta_t v)` represents the arrow `v` again.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::ConnectionSpec;
use crate::error::{Error, Result};
use crate::expr::{parse_expr, Expr, Expression};
use crate::flows::{extrapolate_tail, fit_slope, measure_arrow, rk4, DEFAULT_STEPS};
use crate::geometry::{osculating_b, Geometry, H_TOLERANCE};
use crate::jets::{curve_jet2, seed, Jet2, Scalar};
use crate::linalg::{mat_vec, max_abs, norm, solve};
use crate::nilpotent::{BilinearMap, GroupElement};

/// Tolerance for the normal part of `nabla_Y X` when checking H-preservation.
pub const PRESERVATION_TOLERANCE: f64 = 1e-8;
/// Verified handles must reproduce arrows to within this defect.
pub const ADAPTED_TOLERANCE: f64 = 1e-6;
/// Handles accept arrows with `|(h, n)| <= DOMAIN_RADIUS`.
pub const DOMAIN_RADIUS: f64 = 1.0;

/// Name of the verifier's check in reports.
pub const ADAPTED_CHECK: &str = "h-adapted-defect";

/// An affine connection on the chart domain.
#[derive(Clone, Debug, PartialEq)]
pub enum Connection {
    Flat,
    /// The connection for which every frame field is parallel.
    FrameParallel {
        /// `frame_derivatives[a][k][i] = d_i X_a^k`.
        frame_derivatives: Vec<Vec<Vec<Expr>>>,
    },
    /// Christoffel symbols `christoffel[k][i][j] = Gamma^k_{ij}`.
    Table { christoffel: Vec<Vec<Vec<Expr>>> },
}

impl Connection {
    pub fn frame_parallel(geom: &Geometry) -> Self {
        let n = geom.dim();
        let frame_derivatives = geom
            .spec()
            .frame
            .iter()
            .map(|(_, comps)| {
                comps
                    .iter()
                    .map(|c| (0..n).map(|i| c.derivative(i).root().clone()).collect())
                    .collect()
            })
            .collect();
        Connection::FrameParallel { frame_derivatives }
    }

    /// `table[(k * n + i) * n + j] = Gamma^k_{ij}`.
    pub fn from_table(table: &[Expression], n: usize) -> Result<Self> {
        if table.len() != n * n * n {
            return Err(Error::DimensionMismatch(format!(
                "connection table has {} entries, expected {}",
                table.len(),
                n * n * n
            )));
        }
        let christoffel = (0..n)
            .map(|k| {
                (0..n)
                    .map(|i| (0..n).map(|j| table[(k * n + i) * n + j].root().clone()).collect())
                    .collect()
            })
            .collect();
        Ok(Connection::Table { christoffel })
    }

    /// The connection declared in a geometry file; flat when absent.
    pub fn from_geometry(geom: &Geometry) -> Result<Self> {
        match &geom.spec().connection {
            None | Some(ConnectionSpec::Flat) => Ok(Connection::Flat),
            Some(ConnectionSpec::FrameParallel) => Ok(Self::frame_parallel(geom)),
            Some(ConnectionSpec::Table(t)) => Self::from_table(t, geom.dim()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Connection::Flat => "flat",
            Connection::FrameParallel { .. } => "frame-parallel",
            Connection::Table { .. } => "table",
        }
    }

    /// `-Gamma(w, w)`: the geodesic acceleration at `x` with velocity `w`.
    pub fn acceleration<S: Scalar>(&self, geom: &Geometry, x: &[S], w: &[S]) -> Result<Vec<S>> {
        let n = x.len();
        match self {
            Connection::Flat => Ok(vec![S::from_f64(0.0); n]),
            Connection::FrameParallel { frame_derivatives } => {
                let fields = geom.frame_at(x)?;
                let rows: Vec<Vec<S>> = (0..n)
                    .map(|k| (0..n).map(|a| fields[a][k].clone()).collect())
                    .collect();
                let u = solve(&rows, w)?;
                let mut acc = vec![S::from_f64(0.0); n];
                for (a, da) in frame_derivatives.iter().enumerate() {
                    for (k, dak) in da.iter().enumerate() {
                        let mut dir = S::from_f64(0.0);
                        for (i, e) in dak.iter().enumerate() {
                            if !matches!(e, Expr::Num(z) if *z == 0.0) {
                                dir = dir + e.eval(x)? * w[i].clone();
                            }
                        }
                        acc[k] = acc[k].clone() + dir * u[a].clone();
                    }
                }
                Ok(acc)
            }
            Connection::Table { christoffel } => {
                let mut acc = Vec::with_capacity(n);
                for gk in christoffel {
                    let mut s = S::from_f64(0.0);
                    for (i, gki) in gk.iter().enumerate() {
                        for (j, g) in gki.iter().enumerate() {
                            s = s + g.eval(x)? * w[i].clone() * w[j].clone();
                        }
                    }
                    acc.push(-s);
                }
                Ok(acc)
            }
        }
    }

    /// `Gamma^k_{ij}(x)` as `[k][i][j]`.
    pub fn christoffel_at(&self, geom: &Geometry, x: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
        let n = x.len();
        match self {
            Connection::Flat => Ok(vec![vec![vec![0.0; n]; n]; n]),
            Connection::Table { christoffel } => christoffel
                .iter()
                .map(|gk| gk.iter().map(|gki| gki.iter().map(|g| g.eval(x)).collect()).collect())
                .collect(),
            Connection::FrameParallel { frame_derivatives } => {
                let fields = geom.frame_at(x)?;
                let rows: Vec<Vec<f64>> = (0..n).map(|k| (0..n).map(|a| fields[a][k]).collect()).collect();
                // columns of F^-1
                let inv_cols: Vec<Vec<f64>> = (0..n)
                    .map(|j| {
                        let mut e = vec![0.0; n];
                        e[j] = 1.0;
                        solve(&rows, &e)
                    })
                    .collect::<Result<_>>()?;
                let mut out = vec![vec![vec![0.0; n]; n]; n];
                for (a, da) in frame_derivatives.iter().enumerate() {
                    for k in 0..n {
                        for i in 0..n {
                            let d = da[k][i].eval(x)?;
                            if d == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                out[k][i][j] -= d * inv_cols[j][a];
                            }
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Result of [`connection_preserves_h`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PreservationReport {
    pub preserves: bool,
    pub worst_residual: f64,
    pub worst_point: Option<Vec<f64>>,
}

/// Checks that the normal part of `nabla_{e_j} X_a` vanishes for the first `p`
/// frame fields and all coordinate directions at every sample point.
pub fn connection_preserves_h(geom: &Geometry, conn: &Connection, points: &[Vec<f64>]) -> Result<PreservationReport> {
    let n = geom.dim();
    let p = geom.p();
    let mut worst = 0.0;
    let mut worst_point = None;
    for m in points {
        let gamma = conn.christoffel_at(geom, m)?;
        let chart = geom.auto_chart(m)?;
        let jets: Vec<Vec<Jet2>> = geom.frame_at(&seed(m))?;
        for field in jets.iter().take(p) {
            let xa: Vec<f64> = field.iter().map(Jet2::value).collect();
            for i in 0..n {
                let cov: Vec<f64> = (0..n)
                    .map(|k| field[k].d(i) + (0..n).map(|j| gamma[k][i][j] * xa[j]).sum::<f64>())
                    .collect();
                let r = max_abs(&chart.vector_to_chart(&cov)[p..]);
                if r > worst || worst_point.is_none() {
                    worst = f64::max(worst, r);
                    worst_point = Some(m.clone());
                }
            }
        }
    }
    Ok(PreservationReport {
        preserves: worst <= PRESERVATION_TOLERANCE,
        worst_residual: worst,
        worst_point,
    })
}

/// The linear part of an affine H-chart family `E_m(y) = m + L_m diag(A_H, A_N) y`.
#[derive(Clone, Debug, PartialEq)]
pub enum ChartBasis {
    /// `L_m = F(m)`, the frame matrix.
    Frame,
    /// `L_m = I`: plain translations.
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChartFamily {
    pub basis: ChartBasis,
    /// `p x p` block acting on `h` (row-major); identity when empty.
    pub a_h: Vec<Vec<f64>>,
    /// `q x q` block acting on `n`; identity when empty.
    pub a_n: Vec<Vec<f64>>,
}

impl ChartFamily {
    pub fn auto() -> Self {
        Self {
            basis: ChartBasis::Frame,
            a_h: Vec::new(),
            a_n: Vec::new(),
        }
    }

    pub fn translation() -> Self {
        Self {
            basis: ChartBasis::Identity,
            a_h: Vec::new(),
            a_n: Vec::new(),
        }
    }

    /// The matrix `L_m diag(A_H, A_N)` as rows.
    fn linear_part(&self, geom: &Geometry, m: &[f64]) -> Result<Vec<Vec<f64>>> {
        let (n, p) = (geom.dim(), geom.p());
        let block = |a: &Vec<Vec<f64>>, i: usize, j: usize| -> f64 {
            if a.is_empty() {
                f64::from(u8::from(i == j))
            } else {
                a[i][j]
            }
        };
        for (a, size) in [(&self.a_h, p), (&self.a_n, n - p)] {
            if !a.is_empty() && (a.len() != size || a.iter().any(|r| r.len() != size)) {
                return Err(Error::DimensionMismatch("chart family block size".into()));
            }
        }
        let mut diag = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                diag[i][j] = match (i < p, j < p) {
                    (true, true) => block(&self.a_h, i, j),
                    (false, false) => block(&self.a_n, i - p, j - p),
                    _ => 0.0,
                };
            }
        }
        let l: Vec<Vec<f64>> = match self.basis {
            ChartBasis::Identity => (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect(),
            ChartBasis::Frame => geom.auto_chart(m)?.frame_rows().to_vec(),
        };
        Ok((0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| l[i][k] * diag[k][j]).sum()).collect())
            .collect())
    }

    /// Largest relative normal component of the first `p` coordinate vectors
    /// of `E_m` at `m`.
    pub fn h_residual(&self, geom: &Geometry, m: &[f64]) -> Result<f64> {
        let lin = self.linear_part(geom, m)?;
        let mut worst: f64 = 0.0;
        for i in 0..geom.p() {
            let col: Vec<f64> = lin.iter().map(|row| row[i]).collect();
            worst = worst.max(geom.normal_residual(m, &col)?);
        }
        Ok(worst)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum HandleKind {
    /// Geodesics of an H-preserving connection; the normal splitting is
    /// spanned by the last `q` frame fields.
    Connection(Connection),
    ChartFamily(ChartFamily),
    /// Time-one flow of `sum_i v_i X_i` with `v = log(arrow)`.
    FollandStein,
    /// `m + F(m) g(h, n)` for an arbitrary map `g`; not adapted in general.
    Raw(Vec<Expr>),
}

/// An exponential map on a geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpMapHandle {
    geom: Geometry,
    kind: HandleKind,
    steps: usize,
}

/// Generic `log(h, n) = (h, n - b(h, h)/2)`.
fn log_scalar<S: Scalar>(b: &BilinearMap, v: &[S]) -> Vec<S> {
    let (p, q) = (b.p, b.q);
    let mut out = v.to_vec();
    for k in 0..q {
        let mut s = S::from_f64(0.0);
        for i in 0..p {
            for j in 0..p {
                let c = b.get(k, i, j);
                if c != 0.0 {
                    s = s + (v[i].clone() * v[j].clone()).scale(c);
                }
            }
        }
        out[p + k] = out[p + k].clone() - s.scale(0.5);
    }
    out
}

impl ExpMapHandle {
    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn kind(&self) -> &HandleKind {
        &self.kind
    }

    pub fn label(&self) -> String {
        match &self.kind {
            HandleKind::Connection(c) => format!("connection:{}", c.kind()),
            HandleKind::ChartFamily(f) => match f.basis {
                ChartBasis::Frame => "chart-family:frame".into(),
                ChartBasis::Identity => "chart-family:identity".into(),
            },
            HandleKind::FollandStein => "folland-stein".into(),
            HandleKind::Raw(_) => "raw".into(),
        }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    /// Point reached from `m` along the arrow with flat Taylor coordinates `v`.
    pub fn evaluate<S: Scalar>(&self, m: &[f64], v: &[S]) -> Result<Vec<S>> {
        let geom = &self.geom;
        let n = geom.dim();
        if v.len() != n || m.len() != n {
            return Err(Error::DimensionMismatch("arrow and point must match the geometry".into()));
        }
        let size = norm(&v.iter().map(Scalar::value).collect::<Vec<_>>());
        if size > DOMAIN_RADIUS * (1.0 + 1e-12) {
            return Err(Error::OutsideDomain(size));
        }
        let base: Vec<S> = m.iter().map(|x| S::from_f64(*x)).collect();
        match &self.kind {
            HandleKind::FollandStein => {
                let b = osculating_b(geom, m)?;
                let coeffs = log_scalar(&b, v);
                let field = |x: &[S], _: &S| -> Result<Vec<S>> {
                    let fields = geom.frame_at(x)?;
                    Ok((0..n)
                        .map(|k| {
                            fields
                                .iter()
                                .zip(&coeffs)
                                .fold(S::from_f64(0.0), |acc, (f, c)| acc + c.clone() * f[k].clone())
                        })
                        .collect())
                };
                rk4(field, &base, &S::from_f64(1.0), self.steps)
            }
            HandleKind::Connection(conn) => {
                let b = osculating_b(geom, m)?;
                let chart = geom.auto_chart(m)?;
                let w0 = mat_vec(chart.frame_rows(), &log_scalar(&b, v));
                let mut state = base;
                state.extend(w0);
                let rhs = |s: &[S], _: &S| -> Result<Vec<S>> {
                    let (x, w) = s.split_at(n);
                    let mut out = w.to_vec();
                    out.extend(conn.acceleration(geom, x, w)?);
                    Ok(out)
                };
                let end = rk4(rhs, &state, &S::from_f64(1.0), self.steps).map_err(|e| match e {
                    Error::NonFiniteState | Error::DegenerateFrame(_) => Error::GeodesicBlowup,
                    other => other,
                })?;
                Ok(end[..n].to_vec())
            }
            HandleKind::ChartFamily(family) => {
                // Taylor coordinates in E_m's chart, then E_m.
                let lin = family.linear_part(geom, m)?;
                let chart = geom.auto_chart(m)?;
                let frame = chart.frame_rows();
                let p = geom.p();
                // M = lin^-1 F, applied block-diagonally
                let cols: Vec<Vec<f64>> = (0..n)
                    .map(|j| {
                        let fj: Vec<f64> = frame.iter().map(|r| r[j]).collect();
                        solve(&lin, &fj)
                    })
                    .collect::<Result<_>>()?;
                let mut coords = vec![S::from_f64(0.0); n];
                for (j, col) in cols.iter().enumerate() {
                    for (i, c) in coords.iter_mut().enumerate() {
                        if (i < p) == (j < p) && col[i] != 0.0 {
                            *c = c.clone() + v[j].scale(col[i]);
                        }
                    }
                }
                Ok(mat_vec(&lin, &coords)
                    .into_iter()
                    .zip(m)
                    .map(|(d, mi)| d + S::from_f64(*mi))
                    .collect())
            }
            HandleKind::Raw(g) => {
                let chart = geom.auto_chart(m)?;
                let gv: Vec<S> = g.iter().map(|e| e.eval(v)).collect::<Result<_>>()?;
                Ok(chart.from_chart(&gv))
            }
        }
    }

    pub fn evaluate_arrow(&self, m: &[f64], v: &GroupElement) -> Result<Vec<f64>> {
        self.evaluate(m, &v.to_flat())
    }
}

/// Geodesic exponential map of an H-preserving connection, checked at the
/// sample points.
pub fn exp_from_connection(geom: &Geometry, conn: Connection, points: &[Vec<f64>]) -> Result<ExpMapHandle> {
    let report = connection_preserves_h(geom, &conn, points)?;
    if !report.preserves {
        return Err(Error::NotHPreserving(report.worst_residual));
    }
    Ok(ExpMapHandle {
        geom: geom.clone(),
        kind: HandleKind::Connection(conn),
        steps: DEFAULT_STEPS,
    })
}

/// Exponential map `E_m o F_m^-1` of an affine family of H-charts, checked at
/// the sample points.
pub fn exp_from_chart_family(geom: &Geometry, family: ChartFamily, points: &[Vec<f64>]) -> Result<ExpMapHandle> {
    for m in points {
        let r = family.h_residual(geom, m)?;
        if r > H_TOLERANCE {
            return Err(Error::InvalidHChartFamily(r));
        }
    }
    Ok(ExpMapHandle {
        geom: geom.clone(),
        kind: HandleKind::ChartFamily(family),
        steps: DEFAULT_STEPS,
    })
}

pub fn exp_folland_stein(geom: &Geometry) -> ExpMapHandle {
    ExpMapHandle {
        geom: geom.clone(),
        kind: HandleKind::FollandStein,
        steps: DEFAULT_STEPS,
    }
}

/// `m + F(m) g(h, n)` with `g` given by expressions in `h1.., n1..`.
pub fn exp_raw(geom: &Geometry, components: &[&str]) -> Result<ExpMapHandle> {
    let names: Vec<String> = (1..=geom.p())
        .map(|i| format!("h{i}"))
        .chain((1..=geom.q()).map(|k| format!("n{k}")))
        .collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    if components.len() != geom.dim() {
        return Err(Error::DimensionMismatch("raw map needs one component per coordinate".into()));
    }
    let g = components
        .iter()
        .map(|c| parse_expr(c, &refs).map(|e| e.root().clone()))
        .collect::<Result<_>>()?;
    Ok(ExpMapHandle {
        geom: geom.clone(),
        kind: HandleKind::Raw(g),
        steps: DEFAULT_STEPS,
    })
}

/// The deliberately broken map `(h, n) -> (h1, h2, n + h1^2)` in frame units.
pub fn exp_broken_shear(geom: &Geometry) -> Result<ExpMapHandle> {
    exp_raw(geom, &["h1", "h2", "n1 + h1^2"])
}

/// Per-sample outcome of [`verify_h_adapted`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleDefect {
    pub base: Vec<f64>,
    pub arrow: GroupElement,
    /// Taylor coordinates from exact jets of the evaluated curve.
    pub jet_arrow: GroupElement,
    /// `|c'(0)^H - h|` and `|c'(0)^N|` (the exponential-map condition).
    pub first_order_defect: f64,
    /// Defect of the jet-extracted Taylor coordinates.
    pub jet_defect: f64,
    /// Defect of the grid-extrapolated Taylor coordinates.
    pub extrapolated_defect: f64,
    pub residuals: Vec<f64>,
    pub fitted_slope: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub check: String,
    pub handle: String,
    pub t_grid: Vec<f64>,
    pub samples: Vec<SampleDefect>,
    /// Worst defect over arrows with `n = 0` (rays in H).
    pub ray_defect: f64,
    /// Worst defect over arrows with nonzero normal part.
    pub mixed_defect: f64,
    pub worst_defect: f64,
    pub pass: bool,
}

fn sample_defect(handle: &ExpMapHandle, m: &[f64], v: &GroupElement) -> Result<SampleDefect> {
    let geom = handle.geometry();
    let p = geom.p();
    let chart = geom.auto_chart(m)?;
    let jet = curve_jet2(
        |t| {
            let tt = t.clone() * t.clone();
            let dv: Vec<Jet2> = v
                .h
                .iter()
                .map(|h| t.scale(*h))
                .chain(v.n.iter().map(|n| tt.scale(*n)))
                .collect();
            Ok(chart.to_chart(&handle.evaluate(m, &dv)?))
        },
        0.0,
    )?;
    let jet_arrow = GroupElement::new(
        jet.first[..p].to_vec(),
        jet.second[p..].iter().map(|s| 0.5 * s).collect(),
    );
    let first_order_defect = max_abs(&jet.first[p..]).max(
        jet_arrow
            .h
            .iter()
            .zip(&v.h)
            .fold(0.0, |acc, (a, b)| f64::max(acc, (a - b).abs())),
    );
    let jet_defect = first_order_defect.max(jet_arrow.dist(v));

    let meas = measure_arrow(&chart, |t| {
        let scaled = crate::nilpotent::dilate_unchecked(v, t);
        handle.evaluate_arrow(m, &scaled)
    })?;
    let target = v.to_flat();
    let flat: Vec<Vec<f64>> = meas.quotients.iter().map(GroupElement::to_flat).collect();
    let residuals: Vec<f64> = flat
        .iter()
        .map(|q| q.iter().zip(&target).fold(0.0, |acc, (a, b)| f64::max(acc, (a - b).abs())))
        .collect();
    let extrap = extrapolate_tail(&flat);
    let extrapolated_defect = extrap
        .iter()
        .zip(&target)
        .fold(0.0, |acc, (a, b)| f64::max(acc, (a - b).abs()));
    Ok(SampleDefect {
        base: m.to_vec(),
        arrow: v.clone(),
        jet_arrow,
        first_order_defect,
        jet_defect,
        extrapolated_defect,
        fitted_slope: fit_slope(&meas.t_grid, &residuals, 1e-9),
        residuals,
    })
}

/// Checks that `t -> evaluate(m, delta_t v)` represents `v` for every sample.
/// Passes iff every jet and extrapolated defect is within
/// [`ADAPTED_TOLERANCE`].
pub fn verify_h_adapted(handle: &ExpMapHandle, samples: &[(Vec<f64>, GroupElement)]) -> Result<VerifyReport> {
    let results: Vec<SampleDefect> = samples
        .par_iter()
        .map(|(m, v)| sample_defect(handle, m, v))
        .collect::<Result<_>>()?;
    let defect = |s: &SampleDefect| s.jet_defect.max(s.extrapolated_defect);
    let is_ray = |s: &SampleDefect| s.arrow.n.iter().all(|x| *x == 0.0);
    let worst_of = |ray: bool| {
        results
            .iter()
            .filter(|s| is_ray(s) == ray)
            .map(defect)
            .fold(0.0, f64::max)
    };
    let ray_defect = worst_of(true);
    let mixed_defect = worst_of(false);
    let worst_defect = ray_defect.max(mixed_defect);
    Ok(VerifyReport {
        check: ADAPTED_CHECK.into(),
        handle: handle.label(),
        t_grid: crate::flows::dyadic_grid(),
        samples: results,
        ray_defect,
        mixed_defect,
        worst_defect,
        pass: worst_defect <= ADAPTED_TOLERANCE,
    })
}

/// Textual handle descriptor used by run files and bindings: `fs`, `conn`,
/// `chart`, `translation`, `broken`, or `raw(g1, ..., gn)` over `h1.. n1..`.
#[derive(Clone, Debug, PartialEq)]
pub enum HandleDescriptor {
    FollandStein,
    Connection,
    ChartFamily,
    Translation,
    BrokenShear,
    Raw(Vec<String>),
}

impl std::str::FromStr for HandleDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "fs" | "folland-stein" => HandleDescriptor::FollandStein,
            "conn" | "connection" => HandleDescriptor::Connection,
            "chart" | "chart-family" => HandleDescriptor::ChartFamily,
            "translation" => HandleDescriptor::Translation,
            "broken" | "broken-shear" => HandleDescriptor::BrokenShear,
            _ => {
                let inner = s
                    .strip_prefix("raw")
                    .map(str::trim_start)
                    .and_then(|r| r.strip_prefix('('))
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::UnknownName(s.to_string()))?;
                let mut parts = Vec::new();
                let (mut depth, mut start) = (0i32, 0);
                for (i, ch) in inner.char_indices() {
                    match ch {
                        '(' => depth += 1,
                        ')' => depth -= 1,
                        ',' if depth == 0 => {
                            parts.push(inner[start..i].trim().to_string());
                            start = i + 1;
                        }
                        _ => {}
                    }
                }
                parts.push(inner[start..].trim().to_string());
                HandleDescriptor::Raw(parts)
            }
        })
    }
}

impl std::fmt::Display for HandleDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HandleDescriptor::FollandStein => f.write_str("fs"),
            HandleDescriptor::Connection => f.write_str("conn"),
            HandleDescriptor::ChartFamily => f.write_str("chart"),
            HandleDescriptor::Translation => f.write_str("translation"),
            HandleDescriptor::BrokenShear => f.write_str("broken"),
            HandleDescriptor::Raw(c) => write!(f, "raw({})", c.join(", ")),
        }
    }
}

impl HandleDescriptor {
    /// Builds the handle; connection and chart-family handles are validated
    /// at `points`.
    pub fn build(&self, geom: &Geometry, points: &[Vec<f64>]) -> Result<ExpMapHandle> {
        match self {
            HandleDescriptor::FollandStein => Ok(exp_folland_stein(geom)),
            HandleDescriptor::Connection => exp_from_connection(geom, Connection::from_geometry(geom)?, points),
            HandleDescriptor::ChartFamily => exp_from_chart_family(geom, ChartFamily::auto(), points),
            HandleDescriptor::Translation => exp_from_chart_family(geom, ChartFamily::translation(), points),
            HandleDescriptor::BrokenShear => exp_broken_shear(geom),
            HandleDescriptor::Raw(c) => {
                let refs: Vec<&str> = c.iter().map(String::as_str).collect();
                exp_raw(geom, &refs)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{integrate_flow, VectorField};

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

    fn points() -> Vec<Vec<f64>> {
        vec![vec![0.0, 0.0, 0.0], vec![0.3, -0.4, 0.2], vec![-0.5, 0.1, 0.7]]
    }

    #[test]
    fn preservation() {
        let g = geom(HEIS);
        let r = connection_preserves_h(&g, &Connection::Flat, &points()).unwrap();
        assert!(!r.preserves);
        assert_eq!(r.worst_residual, 0.5);
        let fp = Connection::frame_parallel(&g);
        assert!(connection_preserves_h(&g, &fp, &points()).unwrap().preserves);
        let f = geom(FOL);
        assert!(connection_preserves_h(&f, &Connection::Flat, &points()).unwrap().preserves);
        assert!(matches!(
            exp_from_connection(&g, Connection::Flat, &points()),
            Err(Error::NotHPreserving(_))
        ));
    }

    #[test]
    fn frame_parallel_christoffel_matches_acceleration() {
        let g = geom(TWIST);
        let c = Connection::frame_parallel(&g);
        let x = [0.2, -0.1, 0.6];
        let w = [0.3, 0.5, -0.7];
        let gamma = c.christoffel_at(&g, &x).unwrap();
        let acc = c.acceleration(&g, &x, &w).unwrap();
        for k in 0..3 {
            let s: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| gamma[k][i][j] * w[i] * w[j]).sum();
            assert!((acc[k] + s).abs() < 1e-14);
        }
    }

    #[test]
    fn connection_handle_examples() {
        let f = geom(FOL);
        let h = exp_from_connection(&f, Connection::Flat, &points()).unwrap();
        let m = [1.0, 2.0, 3.0];
        let out = h.evaluate(&m, &[0.3, -0.2, 0.5]).unwrap();
        assert!(close(&out, &[1.3, 1.8, 3.5], 1e-13));

        let g = geom(HEIS);
        let h = exp_from_connection(&g, Connection::from_geometry(&g).unwrap(), &points()).unwrap();
        let out = h.evaluate(&[0.0; 3], &[1.0, 0.0, 0.0]).unwrap();
        assert!(close(&out, &[1.0, 0.0, 0.0], 1e-14));
        for kind in [h, exp_folland_stein(&g)] {
            assert_eq!(kind.evaluate(&[0.4, 0.1, -2.0], &[0.0; 3]).unwrap(), vec![0.4, 0.1, -2.0]);
        }
    }

    #[test]
    fn connection_and_folland_stein_agree_on_h() {
        let g = geom(TWIST);
        let conn = exp_from_connection(&g, Connection::frame_parallel(&g), &points()).unwrap();
        let fs = exp_folland_stein(&g);
        let m = [0.1, 0.2, -0.3];
        let b = osculating_b(&g, &m).unwrap();
        for h in [[0.6, 0.2], [-0.3, 0.7]] {
            // arrow exp(h, 0)
            let bh = b.apply(&h, &h);
            let v = [h[0], h[1], 0.5 * bh[0]];
            let a = conn.evaluate(&m, &v).unwrap();
            let c = fs.evaluate(&m, &v).unwrap();
            assert!(close(&a, &c, 1e-8));
        }
    }

    #[test]
    fn folland_stein_examples() {
        let g = geom(HEIS);
        let fs = exp_folland_stein(&g);
        let o = [0.0; 3];
        assert!(close(&fs.evaluate(&o, &[1.0, 0.0, 0.0]).unwrap(), &[1.0, 0.0, 0.0], 1e-14));
        assert!(close(&fs.evaluate(&o, &[0.0, 0.0, 1.0]).unwrap(), &[0.0, 0.0, 1.0], 1e-14));
        let p = geom(POL);
        let fs = exp_folland_stein(&p);
        // log ((1,1)|1/2) = ((1,1)|0); |v| > 1 so scale into the box
        let s = 0.5;
        let out = fs.evaluate(&o, &[s, s, 0.5 * s * s]).unwrap();
        assert!(close(&out, &[s, s, 0.5 * s * s], 1e-14));
        let y = VectorField::combination(&p, &[1.0, 1.0]).unwrap();
        let flow = integrate_flow(&y, &o, &s, 256).unwrap();
        assert!(close(&out, &flow, 1e-14));
        assert!(matches!(fs.evaluate(&o, &[1.0, 1.0, 0.5]), Err(Error::OutsideDomain(_))));
    }

    #[test]
    fn chart_family_examples() {
        let g = geom(HEIS);
        let origin = vec![vec![0.0; 3]];
        let id = exp_from_chart_family(&g, ChartFamily::translation(), &origin).unwrap();
        assert_eq!(id.evaluate(&[0.0; 3], &[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            exp_from_chart_family(&g, ChartFamily::translation(), &points()),
            Err(Error::InvalidHChartFamily(_))
        ));
        let auto = exp_from_chart_family(&g, ChartFamily::auto(), &points()).unwrap();
        let samples: Vec<(Vec<f64>, GroupElement)> = points()
            .into_iter()
            .map(|m| (m, GroupElement::new(vec![0.3, -0.5], vec![0.4])))
            .collect();
        assert!(verify_h_adapted(&auto, &samples).unwrap().pass);

        // a non-trivial block is undone by the Taylor-coordinate change
        let twisted = ChartFamily {
            basis: ChartBasis::Frame,
            a_h: vec![vec![2.0, 1.0], vec![0.0, 1.0]],
            a_n: vec![vec![3.0]],
        };
        let h = exp_from_chart_family(&g, twisted, &points()).unwrap();
        assert!(verify_h_adapted(&h, &samples).unwrap().pass);
    }

    #[test]
    fn verifier_on_bundled_handles() {
        let g = geom(HEIS);
        let samples: Vec<(Vec<f64>, GroupElement)> = vec![
            (vec![0.0; 3], GroupElement::new(vec![1.0, 0.0], vec![0.0])),
            (vec![0.2, 0.1, 0.0], GroupElement::new(vec![0.3, -0.6], vec![0.5])),
            (vec![0.0; 3], GroupElement::new(vec![0.0, 0.0], vec![0.0])),
        ];
        let fs = verify_h_adapted(&exp_folland_stein(&g), &samples).unwrap();
        assert!(fs.pass, "{:?}", fs.worst_defect);
        let conn = exp_from_connection(&g, Connection::frame_parallel(&g), &points()).unwrap();
        assert!(verify_h_adapted(&conn, &samples).unwrap().pass);

        let broken = verify_h_adapted(&exp_broken_shear(&g).unwrap(), &samples).unwrap();
        assert!(!broken.pass);
        assert_eq!(broken.check, "h-adapted-defect");
        assert!((broken.samples[0].jet_defect - 1.0).abs() < 1e-12);
        assert!((broken.samples[0].extrapolated_defect - 1.0).abs() < 1e-9);
        assert_eq!(broken.samples[2].jet_defect, 0.0);
    }

    #[test]
    fn handle_descriptors_round_trip() {
        for text in ["fs", "conn", "chart", "translation", "broken", "raw(h1, h2, n1 + h1^2)"] {
            let d: HandleDescriptor = text.parse().unwrap();
            assert_eq!(d.to_string(), text);
        }
        assert_eq!("folland-stein".parse::<HandleDescriptor>().unwrap(), HandleDescriptor::FollandStein);
        assert!(matches!("nope".parse::<HandleDescriptor>(), Err(Error::UnknownName(_))));
        let g = geom(HEIS);
        let h = "raw(h1, h2, n1)".parse::<HandleDescriptor>().unwrap().build(&g, &[]).unwrap();
        assert_eq!(h.label(), "raw");
    }
}
