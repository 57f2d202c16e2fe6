use std::path::Path;

use osculate::config::{parse_tuple, Entry};
use osculate::expmaps::{verify_h_adapted, ExpMapHandle, HandleDescriptor, ADAPTED_CHECK, ADAPTED_TOLERANCE};
use osculate::expr::Expression;
use osculate::flows::{
    flow_commutator_probe, oracle_equivalence, oracle_second_order, FlowMap, VectorField,
    ORACLE_TOLERANCE,
};
use osculate::geometry::{describe, osculating_group, Geometry};
use osculate::groupoid::{
    chart_psi, chart_psi_inverse, convergence_probe, curve_arrow, flow_cross_check,
    transition_probe, GroupoidElement,
};
use osculate::nilpotent::GroupElement;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{config, CliError, CliResult};
use crate::report::{Check, Report, Series};
use crate::run::{Command, ProbeKind, RunConfig, Suite};

/// Tolerance of exact algebraic identities on sampled elements of size O(1).
pub const ALGEBRA_TOLERANCE: f64 = 1e-12;
/// `psi^-1(psi(v, t))` round trips through a Newton solve.
pub const ROUND_TRIP_TOLERANCE: f64 = 1e-8;
/// Euclidean radius of sampled arrows; inside the exponential-map domain.
const ARROW_RADIUS: f64 = 0.6;
/// Sampled base points are drawn from `[-r, r]^dim`.
const POINT_RADIUS: f64 = 0.5;

pub struct Outcome {
    pub report: Report,
    pub series: Vec<Series>,
}

pub fn load_geometry(path: &Path) -> CliResult<Geometry> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    Geometry::parse(&text).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub fn execute(run: &RunConfig) -> CliResult<Outcome> {
    let geom = load_geometry(&run.geometry)?;
    for m in &run.points {
        if m.len() != geom.dim() {
            return Err(config(format!(
                "point {m:?} has {} coordinates, geometry `{}` has dimension {}",
                m.len(),
                geom.name(),
                geom.dim()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let command = run.command.ok_or_else(|| config("no command given"))?;
    let (pass, result, series) = match command {
        Command::Describe => cmd_describe(run, &geom, &mut rng)?,
        Command::Verify => cmd_verify(run, &geom, &mut rng)?,
        Command::Probe => cmd_probe(run, &geom)?,
    };
    let report = Report::new(&run.command_name(), geom.name(), run.seed, pass, result);
    Ok(Outcome { report, series })
}

fn uniform(rng: &mut ChaCha8Rng, len: usize, r: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-r..r)).collect()
}

fn element(rng: &mut ChaCha8Rng, p: usize, q: usize) -> GroupElement {
    GroupElement::new(uniform(rng, p, 1.0), uniform(rng, q, 1.0))
}

/// An arrow of Euclidean norm at most [`ARROW_RADIUS`]; `ray` arrows have
/// `n = 0`.
fn arrow(rng: &mut ChaCha8Rng, p: usize, q: usize, ray: bool) -> GroupElement {
    let mut h = uniform(rng, p, 1.0);
    let mut n = if ray { vec![0.0; q] } else { uniform(rng, q, 1.0) };
    let norm = h.iter().chain(&n).map(|x| x * x).sum::<f64>().sqrt().max(1e-3);
    let s = ARROW_RADIUS * rng.random_range(0.2..1.0) / norm;
    h.iter_mut().chain(n.iter_mut()).for_each(|x| *x *= s);
    GroupElement::new(h, n)
}

fn fmt_point(m: &[f64]) -> String {
    let parts: Vec<String> = m.iter().map(|x| format!("{x}")).collect();
    format!("({})", parts.join(","))
}

fn max_dist(pairs: impl IntoIterator<Item = (GroupElement, GroupElement)>) -> f64 {
    pairs.into_iter().map(|(a, b)| a.dist(&b)).fold(0.0, f64::max)
}

fn origin(geom: &Geometry) -> Vec<f64> {
    vec![0.0; geom.dim()]
}

/// The configured points, or the origin alone.
fn single_points(run: &RunConfig, geom: &Geometry) -> Vec<Vec<f64>> {
    if run.points.is_empty() {
        vec![origin(geom)]
    } else {
        run.points.clone()
    }
}

/// The configured points, or the origin plus two seeded random points.
fn sweep_points(run: &RunConfig, geom: &Geometry, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    if run.points.is_empty() {
        let mut pts = vec![origin(geom)];
        pts.extend((0..2).map(|_| uniform(rng, geom.dim(), POINT_RADIUS)));
        pts
    } else {
        run.points.clone()
    }
}

fn default_handles(geom: &Geometry) -> Vec<(String, HandleDescriptor)> {
    let mut out = vec![("fs".to_string(), HandleDescriptor::FollandStein)];
    if geom.spec().connection.is_some() {
        out.push(("conn".to_string(), HandleDescriptor::Connection));
    }
    out.push(("chart".to_string(), HandleDescriptor::ChartFamily));
    out
}

fn configured_handles(run: &RunConfig, geom: &Geometry) -> Vec<(String, HandleDescriptor)> {
    if run.handles.is_empty() {
        default_handles(geom)
    } else {
        run.handles.clone()
    }
}

fn parse_inline_tuple(flag: &str, text: &str, vars: &[String]) -> CliResult<Vec<Expression>> {
    let entry = Entry {
        key: flag.to_string(),
        value: text.trim().to_string(),
        line: 1,
        value_column: 1,
    };
    parse_tuple(&entry, vars).map_err(|e| config(format!("{flag} `{text}`: {e}")))
}

/// A frame field name or a component tuple over the chart variables and `t`.
fn parse_field(flag: &str, text: &str, geom: &Geometry) -> CliResult<VectorField> {
    let text = text.trim();
    if geom.spec().frame_field(text).is_some() {
        return Ok(VectorField::named(geom, text)?);
    }
    if !text.starts_with('(') {
        return Err(config(format!("{flag}: `{text}` is neither a frame field nor a tuple")));
    }
    let mut vars = geom.spec().vars.clone();
    vars.push("t".into());
    let comps = parse_inline_tuple(flag, text, &vars)?;
    VectorField::new(comps, geom.dim()).map_err(|e| config(format!("{flag}: {e}")))
}

/// A curve name from the geometry file or a tuple over `t`.
fn parse_curve(flag: &str, text: &str, geom: &Geometry) -> CliResult<Vec<Expression>> {
    let comps = match geom.spec().curve(text.trim()) {
        Some(c) => c.to_vec(),
        None => parse_inline_tuple(flag, text, &["t".to_string()])?,
    };
    if comps.len() != geom.dim() {
        return Err(config(format!(
            "{flag}: curve has {} components, geometry has dimension {}",
            comps.len(),
            geom.dim()
        )));
    }
    // the convergence definition needs curves tangent to H at t = 0
    curve_arrow(geom, &comps).map_err(|e| config(format!("{flag} `{text}`: {e}")))?;
    Ok(comps)
}

// ---------------------------------------------------------------- describe

#[derive(Serialize)]
struct GroupLawSample {
    x: GroupElement,
    y: GroupElement,
    product: GroupElement,
    inverse_x: GroupElement,
    commutator: GroupElement,
}

fn bracket_table(geom: &Geometry, m: &[f64]) -> osculate::Result<Vec<Vec<Vec<f64>>>> {
    let g = osculating_group(geom, m)?;
    let (p, q) = (g.p(), g.q());
    let basis = |i: usize| {
        let mut h = vec![0.0; p];
        h[i] = 1.0;
        GroupElement::new(h, vec![0.0; q])
    };
    (0..p)
        .map(|i| (0..p).map(|j| Ok(g.bracket(&basis(i), &basis(j))?.n)).collect())
        .collect()
}

fn cmd_describe(run: &RunConfig, geom: &Geometry, rng: &mut ChaCha8Rng) -> CliResult<(bool, Value, Vec<Series>)> {
    let mut out = Vec::new();
    for m in single_points(run, geom) {
        let report = describe(geom, &m)?;
        let g = osculating_group(geom, &m)?;
        let samples: Vec<GroupLawSample> = (0..run.samples.min(4))
            .map(|_| {
                let x = element(rng, g.p(), g.q());
                let y = element(rng, g.p(), g.q());
                Ok(GroupLawSample {
                    product: g.mul(&x, &y)?,
                    inverse_x: g.inv(&x)?,
                    commutator: g.commutator(&x, &y)?,
                    x,
                    y,
                })
            })
            .collect::<osculate::Result<_>>()?;
        let mut v = serde_json::to_value(&report).expect("report serializes");
        v["bracket_table"] = json!(bracket_table(geom, &m)?);
        v["group_law_samples"] = json!(samples);
        out.push(v);
    }
    Ok((true, json!({ "points": out }), Vec::new()))
}

// ------------------------------------------------------------------ verify

fn group_checks(geom: &Geometry, m: &[f64], samples: usize, rng: &mut ChaCha8Rng) -> Vec<Check> {
    let subject = fmt_point(m);
    let g = match osculating_group(geom, m) {
        Ok(g) => g,
        Err(e) => return vec![Check::failed("osculating-group", subject, &e)],
    };
    let (p, q) = (g.p(), g.q());
    let triples: Vec<[GroupElement; 3]> = (0..samples)
        .map(|_| [element(rng, p, q), element(rng, p, q), element(rng, p, q)])
        .collect();
    let axioms = (|| -> osculate::Result<f64> {
        let e = g.identity();
        let mut worst: f64 = 0.0;
        for [x, y, z] in &triples {
            let assoc = (g.mul(&g.mul(x, y)?, z)?, g.mul(x, &g.mul(y, z)?)?);
            let unit = (g.mul(&e, x)?, x.clone());
            let unit_r = (g.mul(x, &e)?, x.clone());
            let inv = (g.mul(x, &g.inv(x)?)?, e.clone());
            worst = worst.max(max_dist([assoc, unit, unit_r, inv]));
        }
        Ok(worst)
    })();
    let exp_log = (|| -> osculate::Result<f64> {
        let mut worst: f64 = 0.0;
        for [x, y, _] in &triples {
            worst = worst.max(g.log(&g.exp(x)?)?.dist(x));
            // two-step: exp(X) exp(Y) = exp(X + Y + [X, Y]/2)
            let bch = x.add(y).add(&g.bracket(x, y)?.scale(0.5));
            worst = worst.max(g.mul(&g.exp(x)?, &g.exp(y)?)?.dist(&g.exp(&bch)?));
        }
        Ok(worst)
    })();
    let brackets = (|| -> osculate::Result<(f64, Vec<Vec<Vec<f64>>>)> {
        let table = bracket_table(geom, m)?;
        let mut worst: f64 = 0.0;
        for (i, row) in table.iter().enumerate() {
            for (j, entry) in row.iter().enumerate() {
                for (k, v) in entry.iter().enumerate() {
                    worst = worst.max((v + table[j][i][k]).abs());
                }
            }
        }
        // group commutator of exponentials is the exponential of the bracket
        for [x, y, _] in &triples {
            let c = g.commutator(&g.exp(x)?, &g.exp(y)?)?;
            worst = worst.max(c.dist(&g.exp(&g.bracket(x, y)?)?));
        }
        Ok((worst, table))
    })();
    let mut out = Vec::new();
    for (name, r) in [("group-axioms", axioms), ("exp-log", exp_log)] {
        out.push(match r {
            Ok(w) => Check::new(name, subject.clone(), w <= ALGEBRA_TOLERANCE).residual(w, ALGEBRA_TOLERANCE),
            Err(e) => Check::failed(name, subject.clone(), &e),
        });
    }
    out.push(match brackets {
        Ok((w, table)) => {
            let max_bracket = table.iter().flatten().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
            Check::new("bracket-table", subject, w <= ALGEBRA_TOLERANCE)
                .residual(w, ALGEBRA_TOLERANCE)
                .detail(json!({
                    "table": table,
                    "max_bracket": max_bracket,
                    "skew_rank": g.skew_rank(),
                    "class_hint": g.class_hint(),
                }))
        }
        Err(e) => Check::failed("bracket-table", subject, &e),
    });
    out
}

fn field_pairs(geom: &Geometry, samples: usize, rng: &mut ChaCha8Rng) -> osculate::Result<Vec<(String, VectorField, VectorField)>> {
    let p = geom.p();
    let names: Vec<String> = geom.spec().frame.iter().map(|(n, _)| n.clone()).collect();
    let mut out = Vec::new();
    for i in 0..p {
        for j in i + 1..p {
            out.push((
                format!("{},{}", names[i], names[j]),
                VectorField::frame_field(geom, i)?,
                VectorField::frame_field(geom, j)?,
            ));
        }
    }
    for s in 0..samples {
        let a = uniform(rng, p, 1.0);
        let b = uniform(rng, p, 1.0);
        out.push((
            format!("random-{s}"),
            VectorField::combination(geom, &a)?,
            VectorField::combination(geom, &b)?,
        ));
    }
    Ok(out)
}

#[derive(Serialize)]
struct PairResult {
    pair: String,
    pass: bool,
    residual: f64,
    fitted_slope: Option<f64>,
}

fn aggregate(name: &str, subject: String, results: Vec<PairResult>, tolerance: f64) -> Check {
    let worst = results.iter().map(|r| r.residual).fold(0.0, f64::max);
    let pass = results.iter().all(|r| r.pass);
    Check::new(name, subject, pass).residual(worst, tolerance).detail(results)
}

fn oracle_checks(geom: &Geometry, m: &[f64], samples: usize, rng: &mut ChaCha8Rng) -> Vec<Check> {
    let subject = fmt_point(m);
    let pairs = match field_pairs(geom, samples, rng) {
        Ok(p) => p,
        Err(e) => return vec![Check::failed("oracle", subject, &e)],
    };
    let run = |f: &dyn Fn(&VectorField, &VectorField) -> osculate::Result<PairResult>| -> osculate::Result<Vec<PairResult>> {
        pairs
            .iter()
            .map(|(label, x, y)| {
                let mut r = f(x, y)?;
                r.pair = label.clone();
                Ok(r)
            })
            .collect()
    };
    let second = run(&|x, y| {
        let r = oracle_second_order(x, y, m)?;
        Ok(PairResult {
            pair: String::new(),
            pass: r.probe.pass,
            residual: r.cross_term_error,
            fitted_slope: r.probe.fitted_slope,
        })
    });
    let equiv = run(&|x, y| {
        let r = oracle_equivalence(geom, &FlowMap::new(x.clone()), &FlowMap::new(y.clone()), m)?;
        let err = r
            .extrapolated_value
            .iter()
            .zip(&r.predicted_value)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Ok(PairResult {
            pair: String::new(),
            pass: r.pass,
            residual: err,
            fitted_slope: r.fitted_slope,
        })
    });
    let sign = run(&|x, y| {
        let r = flow_commutator_probe(geom, x, y, m)?;
        let err = r
            .extrapolated_value
            .iter()
            .zip(&r.predicted_value)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Ok(PairResult {
            pair: String::new(),
            pass: r.pass,
            residual: err,
            fitted_slope: r.fitted_slope,
        })
    });
    [("second-order", second), ("oracle-equivalence", equiv), ("bracket-sign", sign)]
        .into_iter()
        .map(|(name, r)| match r {
            Ok(results) => aggregate(name, subject.clone(), results, ORACLE_TOLERANCE),
            Err(e) => Check::failed(name, subject.clone(), &e),
        })
        .collect()
}

type BuiltHandles = Vec<(String, ExpMapHandle)>;

/// Builds the handles, reporting construction failures as checks.
fn build_handles(run: &RunConfig, geom: &Geometry, points: &[Vec<f64>], checks: &mut Vec<Check>) -> BuiltHandles {
    let mut out = Vec::new();
    for (name, spec) in configured_handles(run, geom) {
        match spec.build(geom, points) {
            Ok(h) => out.push((name, h)),
            Err(e) => checks.push(Check::failed("handle", format!("{name} = {spec}"), &e)),
        }
    }
    out
}

fn expmap_checks(handles: &BuiltHandles, points: &[Vec<f64>], samples: usize, rng: &mut ChaCha8Rng) -> Vec<Check> {
    let Some((_, first)) = handles.first() else {
        return Vec::new();
    };
    let geom = first.geometry();
    let (p, q) = (geom.p(), geom.q());
    // unit rays at the first point, then seeded arrows cycling over the points
    let mut arrows: Vec<(Vec<f64>, GroupElement)> = (0..p)
        .map(|i| {
            let mut h = vec![0.0; p];
            h[i] = 1.0;
            (points[0].clone(), GroupElement::new(h, vec![0.0; q]))
        })
        .collect();
    for s in 0..samples * points.len() {
        arrows.push((points[s % points.len()].clone(), arrow(rng, p, q, s % 2 == 0)));
    }
    handles
        .iter()
        .map(|(name, h)| {
            let subject = format!("{name} ({})", h.label());
            match verify_h_adapted(h, &arrows) {
                Ok(r) => Check::new(ADAPTED_CHECK, subject, r.pass)
                    .residual(r.worst_defect, ADAPTED_TOLERANCE)
                    .detail(json!({
                        "samples": r.samples.len(),
                        "ray_defect": r.ray_defect,
                        "mixed_defect": r.mixed_defect,
                    })),
                Err(e) => Check::failed(ADAPTED_CHECK, subject, &e),
            }
        })
        .collect()
}

fn groupoid_law_check(geom: &Geometry, points: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Check {
    let subject = "pairs and arrows".to_string();
    let r = (|| -> osculate::Result<f64> {
        let t = 0.25;
        let a = &points[0];
        let b = points.get(1).unwrap_or(a);
        let c = points.last().unwrap_or(a);
        let ab = GroupoidElement::Pair { a: a.clone(), b: b.clone(), t };
        let bc = GroupoidElement::Pair { a: b.clone(), b: c.clone(), t };
        let ac = GroupoidElement::Pair { a: a.clone(), b: c.clone(), t };
        let mut worst: f64 = 0.0;
        let mismatch = |x: &GroupoidElement, y: &GroupoidElement| if x == y { 0.0 } else { 1.0 };
        worst = worst.max(mismatch(&ab.compose(&bc, geom)?, &ac));
        worst = worst.max(mismatch(&ab.compose(&ab.inverse(geom)?, geom)?, &GroupoidElement::unit(a, t)));
        // arrows at a common base compose in the osculating group
        let (p, q) = (geom.p(), geom.q());
        for m in points {
            let mk = |g: GroupElement| GroupoidElement::Arrow {
                arrow: osculate::geometry::ParabolicArrow::auto(m.clone(), g),
            };
            let x = mk(element(rng, p, q));
            let y = mk(element(rng, p, q));
            let z = mk(element(rng, p, q));
            let lhs = x.compose(&y, geom)?.compose(&z, geom)?;
            let rhs = x.compose(&y.compose(&z, geom)?, geom)?;
            let unit = x.compose(&x.inverse(geom)?, geom)?;
            let coords = |e: &GroupoidElement| match e {
                GroupoidElement::Arrow { arrow } => arrow.coords(),
                GroupoidElement::Pair { .. } => unreachable!("arrow composition stays at t = 0"),
            };
            worst = worst.max(coords(&lhs).dist(&coords(&rhs)));
            worst = worst.max(coords(&unit).norm());
        }
        Ok(worst)
    })();
    match r {
        Ok(w) => Check::new("groupoid-laws", subject, w <= ALGEBRA_TOLERANCE).residual(w, ALGEBRA_TOLERANCE),
        Err(e) => Check::failed("groupoid-laws", subject, &e),
    }
}

fn round_trip_checks(handles: &BuiltHandles, points: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<Check> {
    let mut out = Vec::new();
    for (name, h) in handles {
        let geom = h.geometry();
        let cases: Vec<(Vec<f64>, GroupElement, f64)> = points
            .iter()
            .flat_map(|m| [0.5, 0.125].map(|t| (m.clone(), arrow(rng, geom.p(), geom.q(), false), t)))
            .collect();
        let r = (|| -> osculate::Result<f64> {
            let mut worst: f64 = 0.0;
            for (m, v, t) in &cases {
                let GroupoidElement::Pair { a, b, .. } = chart_psi(h, m, v, *t)? else {
                    unreachable!("t > 0 gives a pair");
                };
                worst = worst.max(chart_psi_inverse(h, &a, &b, *t)?.dist(v));
            }
            Ok(worst)
        })();
        let subject = format!("{name} ({})", h.label());
        out.push(match r {
            Ok(w) => Check::new("chart-round-trip", subject, w <= ROUND_TRIP_TOLERANCE).residual(w, ROUND_TRIP_TOLERANCE),
            Err(e) => Check::failed("chart-round-trip", subject, &e),
        });
    }
    out
}

fn transition_check(name: &str, h1: &ExpMapHandle, h2: &ExpMapHandle, m: &[f64], v: &GroupElement, grid: &[f64]) -> (Check, Option<Series>) {
    let subject = format!("{name} @ {}", fmt_point(m));
    match transition_probe(h1, h2, m, v, grid) {
        Ok(r) => {
            let worst = r.probe.residuals.iter().copied().fold(0.0, f64::max);
            let series = Series {
                label: format!("transition {subject}"),
                t_grid: r.probe.t_grid.clone(),
                residuals: r.probe.residuals.clone(),
                ratios: Some(r.ratios.clone()),
            };
            let check = Check::new("transition", subject, r.probe.pass).value(worst).detail(json!({
                "arrow": v,
                "fitted_slope": r.probe.fitted_slope,
                "sup_ratio": r.sup_ratio,
                "ratio_growth": r.ratio_growth,
                "bounded": r.bounded,
            }));
            (check, Some(series))
        }
        Err(e) => (Check::failed("transition", subject, &e), None),
    }
}

fn convergence_checks(handles: &BuiltHandles, a: &[Expression], b: &[Expression], label: &str, grid: &[f64]) -> (Vec<Check>, Vec<Series>) {
    let mut checks = Vec::new();
    let mut series = Vec::new();
    for (name, h) in handles {
        let subject = format!("{label} via {name} ({})", h.label());
        match convergence_probe(h, a, b, grid) {
            Ok(r) => {
                let err = r
                    .probe
                    .extrapolated_value
                    .iter()
                    .zip(&r.probe.predicted_value)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                series.push(Series {
                    label: format!("convergence {subject}"),
                    t_grid: r.probe.t_grid.clone(),
                    residuals: r.probe.residuals.clone(),
                    ratios: None,
                });
                checks.push(
                    Check::new("convergence", subject, r.probe.pass)
                        .residual(err, ORACLE_TOLERANCE)
                        .detail(json!({
                            "target": r.target,
                            "extrapolated": r.probe.extrapolated_value,
                            "fitted_slope": r.probe.fitted_slope,
                        })),
                );
            }
            Err(e) => checks.push(Check::failed("convergence", subject, &e)),
        }
    }
    if let Some((_, h)) = handles.first() {
        let subject = format!("{label} flow realization");
        checks.push(match flow_cross_check(h.geometry(), a, b) {
            Ok(r) => {
                let err = r
                    .extrapolated_value
                    .iter()
                    .zip(&r.predicted_value)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                Check::new("flow-cross-check", subject, r.pass)
                    .residual(err, ORACLE_TOLERANCE)
                    .detail(json!({ "target": r.predicted_value, "extrapolated": r.extrapolated_value }))
            }
            Err(e) => Check::failed("flow-cross-check", subject, &e),
        });
    }
    (checks, series)
}

/// Curve pairs for the convergence checks: the first two declared curves (if
/// they share a start point) and the diagonal pair of the first.
fn curve_pairs(geom: &Geometry) -> Vec<(String, Vec<Expression>, Vec<Expression>)> {
    let curves = &geom.spec().curves;
    let mut out = Vec::new();
    if let Some((n0, c0)) = curves.first() {
        out.push((format!("({n0},{n0})"), c0.clone(), c0.clone()));
        if let Some((n1, c1)) = curves.get(1) {
            let start = |c: &[Expression]| curve_arrow(geom, c).map(|a| a.base).ok();
            if start(c0).is_some() && start(c0) == start(c1) {
                out.push((format!("({n0},{n1})"), c0.clone(), c1.clone()));
            }
        }
    }
    out
}

fn cmd_verify(run: &RunConfig, geom: &Geometry, rng: &mut ChaCha8Rng) -> CliResult<(bool, Value, Vec<Series>)> {
    let points = sweep_points(run, geom, rng);
    let grid = run.grid.grid();
    let mut checks = Vec::new();
    let mut series = Vec::new();
    if run.suite.includes(Suite::Group) {
        for m in &points {
            checks.extend(group_checks(geom, m, run.samples, rng));
        }
    }
    if run.suite.includes(Suite::Oracle) {
        for m in &points {
            checks.extend(oracle_checks(geom, m, run.samples, rng));
        }
    }
    let needs_handles = run.suite.includes(Suite::Expmap) || run.suite.includes(Suite::Groupoid);
    let pairs = curve_pairs(geom);
    let mut handle_points = points.clone();
    for (_, a, _) in &pairs {
        if let Ok(arrow) = curve_arrow(geom, a) {
            handle_points.push(arrow.base);
        }
    }
    let handles = if needs_handles {
        build_handles(run, geom, &handle_points, &mut checks)
    } else {
        Vec::new()
    };
    if run.suite.includes(Suite::Expmap) {
        checks.extend(expmap_checks(&handles, &points, run.samples, rng));
    }
    if run.suite.includes(Suite::Groupoid) {
        checks.push(groupoid_law_check(geom, &points, rng));
        checks.extend(round_trip_checks(&handles, &points, rng));
        if let Some((n1, h1)) = handles.first() {
            for (n2, h2) in &handles[1..] {
                for m in &points {
                    let v = match &run.arrow {
                        Some(a) => GroupElement::from_flat(a, geom.p()),
                        None => arrow(rng, geom.p(), geom.q(), false),
                    };
                    let (c, s) = transition_check(&format!("{n1} vs {n2}"), h1, h2, m, &v, &grid);
                    checks.push(c);
                    series.extend(s);
                }
            }
        }
        for (label, a, b) in &pairs {
            let (c, s) = convergence_checks(&handles, a, b, label, &grid);
            checks.extend(c);
            series.extend(s);
        }
    }
    let pass = checks.iter().all(|c| c.pass);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let result = json!({
        "suite": run.suite_name(),
        "points": points,
        "handles": handles.iter().map(|(n, h)| json!({ "name": n, "label": h.label() })).collect::<Vec<_>>(),
        "checks": checks,
        "failed": failed,
    });
    Ok((pass, result, series))
}

// ------------------------------------------------------------------- probe

fn require<'a>(value: &'a Option<String>, flag: &str, kind: &str) -> CliResult<&'a str> {
    value
        .as_deref()
        .ok_or_else(|| config(format!("probe {kind} needs {flag}")))
}

fn default_arrow(p: usize, q: usize) -> GroupElement {
    let pattern = [0.5, -0.3, 0.4, -0.2];
    let h: Vec<f64> = (0..p).map(|i| pattern[i % pattern.len()]).collect();
    let n: Vec<f64> = (0..q).map(|k| 0.2 * if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let norm = h.iter().chain(&n).map(|x| x * x).sum::<f64>().sqrt();
    GroupElement::new(h, n).scale(ARROW_RADIUS / norm)
}

fn probe_series(label: &str, t_grid: &[f64], residuals: &[f64], ratios: Option<&[f64]>) -> Series {
    Series {
        label: label.to_string(),
        t_grid: t_grid.to_vec(),
        residuals: residuals.to_vec(),
        ratios: ratios.map(<[f64]>::to_vec),
    }
}

fn cmd_probe(run: &RunConfig, geom: &Geometry) -> CliResult<(bool, Value, Vec<Series>)> {
    let kind = run.probe.ok_or_else(|| config("no probe kind given"))?;
    let kind_name = run.probe_name().unwrap_or_default();
    let m = single_points(run, geom).remove(0);
    let grid = run.grid.grid();
    let (pass, body, series) = match kind {
        ProbeKind::SecondOrder | ProbeKind::Commutator => {
            let xs = require(&run.x, "--X", &kind_name)?;
            let ys = require(&run.y, "--Y", &kind_name)?;
            let x = parse_field("--X", xs, geom)?;
            let y = parse_field("--Y", ys, geom)?;
            if kind == ProbeKind::SecondOrder {
                let r = oracle_second_order(&x, &y, &m)?;
                let s = probe_series("second-order", &r.probe.t_grid, &r.probe.residuals, None);
                (r.probe.pass, json!(r), vec![s])
            } else {
                let r = flow_commutator_probe(geom, &x, &y, &m)?;
                let s = probe_series("commutator", &r.t_grid, &r.residuals, None);
                (r.pass, json!(r), vec![s])
            }
        }
        ProbeKind::Transition => {
            let s1 = run.h1.clone().unwrap_or(HandleDescriptor::FollandStein);
            let s2 = run.h2.clone().unwrap_or(HandleDescriptor::Connection);
            let h1 = s1.build(geom, std::slice::from_ref(&m))?;
            let h2 = s2.build(geom, std::slice::from_ref(&m))?;
            let v = match &run.arrow {
                Some(a) if a.len() == geom.dim() => GroupElement::from_flat(a, geom.p()),
                Some(a) => return Err(config(format!("--arrow has {} entries, expected {}", a.len(), geom.dim()))),
                None => default_arrow(geom.p(), geom.q()),
            };
            let r = transition_probe(&h1, &h2, &m, &v, &grid)?;
            let s = probe_series("transition", &r.probe.t_grid, &r.probe.residuals, Some(&r.ratios));
            let body = json!({ "h1": h1.label(), "h2": h2.label(), "point": m, "arrow": v, "report": r });
            (r.probe.pass, body, vec![s])
        }
        ProbeKind::Convergence => {
            let a = parse_curve("--a", require(&run.a, "--a", &kind_name)?, geom)?;
            let b = parse_curve("--b", require(&run.b, "--b", &kind_name)?, geom)?;
            let start = curve_arrow(geom, &a)?.base;
            let mut specs = match &run.h1 {
                Some(s) => vec![(s.to_string(), s.clone())],
                None => configured_handles(run, geom),
            };
            if let Some(s) = &run.h2 {
                specs.push((s.to_string(), s.clone()));
            }
            let handles: BuiltHandles = specs
                .into_iter()
                .map(|(n, s)| Ok((n, s.build(geom, std::slice::from_ref(&start))?)))
                .collect::<osculate::Result<_>>()?;
            let (checks, series) = convergence_checks(&handles, &a, &b, "(a,b)", &grid);
            let pass = checks.iter().all(|c| c.pass);
            let target = checks.first().map(|c| c.detail["target"].clone()).unwrap_or(Value::Null);
            (pass, json!({ "target": target, "checks": checks }), series)
        }
    };
    let result = json!({ "probe": kind_name, "point": m, "t_grid": grid, "result": body });
    Ok((pass, result, series))
}
