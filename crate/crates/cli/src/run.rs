//! Run configurations: the parsed form of command-line flags or a `.run` file.
//!
//! A `.run` file uses the geometry file syntax (`key = value`, `#` comments)
//! with header keys
//! `command`, `geometry`, `points`, `suite`, `probe`, `seed`, `samples`,
//! `t_grid`, `output`, `csv`, `X`, `Y`, `a`, `b`, `h1`, `h2`, `arrow`, and an
//! optional `[handles]` section of `label = descriptor` entries. Relative
//! paths resolve against the directory of the `.run` file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;
use osculate::config::Document;
use osculate::expmaps::HandleDescriptor;

use crate::error::{config, CliError, CliResult};

pub const DEFAULT_SAMPLES: usize = 8;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Describe,
    Verify,
    Probe,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Group,
    Oracle,
    Expmap,
    Groupoid,
    #[default]
    All,
}

impl Suite {
    pub fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProbeKind {
    SecondOrder,
    Commutator,
    Transition,
    Convergence,
}

fn value_name<T: ValueEnum>(v: &T) -> String {
    v.to_possible_value().map(|p| p.get_name().to_string()).unwrap_or_default()
}

fn parse_enum<T: ValueEnum>(key: &str, s: &str) -> CliResult<T> {
    T::from_str(s, true).map_err(|_| config(format!("`{key}`: unrecognized value `{s}`")))
}

/// Dyadic grid `2^-coarse, ..., 2^-fine`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub coarse: u32,
    pub fine: u32,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { coarse: 3, fine: 10 }
    }
}

impl FromStr for GridSpec {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let bad = || config(format!("t-grid `{s}`: expected `coarse..fine` exponents, e.g. `3..10`"));
        let (a, b) = s.split_once("..").ok_or_else(bad)?;
        let coarse: u32 = a.trim().parse().map_err(|_| bad())?;
        let fine: u32 = b.trim().parse().map_err(|_| bad())?;
        // fit_slope needs three points; 2^-40 is far below any useful step
        if fine < coarse + 2 || fine > 40 {
            return Err(bad());
        }
        Ok(Self { coarse, fine })
    }
}

impl GridSpec {
    pub fn grid(&self) -> Vec<f64> {
        (self.coarse..=self.fine).map(|k| 0.5f64.powi(k as i32)).collect()
    }
}

pub fn parse_handle(s: &str) -> CliResult<HandleDescriptor> {
    s.parse()
        .map_err(|_| config(format!("unknown exponential map `{}`", s.trim())))
}

/// Parses `1,2,3` or `(1, 2, 3)`.
pub fn parse_vector(s: &str) -> CliResult<Vec<f64>> {
    let t = s.trim();
    let t = t.strip_prefix('(').and_then(|r| r.strip_suffix(')')).unwrap_or(t);
    t.split(',')
        .map(|c| {
            let c = c.trim();
            c.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| config(format!("`{s}`: `{c}` is not a finite number")))
        })
        .collect()
}

/// Parses `;`-separated vectors.
pub fn parse_points(s: &str) -> CliResult<Vec<Vec<f64>>> {
    s.split(';').filter(|p| !p.trim().is_empty()).map(parse_vector).collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub geometry: PathBuf,
    pub command: Option<Command>,
    /// Empty means the command's default points.
    pub points: Vec<Vec<f64>>,
    /// Empty means the default handles for the geometry.
    pub handles: Vec<(String, HandleDescriptor)>,
    pub grid: GridSpec,
    pub samples: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub suite: Suite,
    pub probe: Option<ProbeKind>,
    pub x: Option<String>,
    pub y: Option<String>,
    pub a: Option<String>,
    pub b: Option<String>,
    pub h1: Option<HandleDescriptor>,
    pub h2: Option<HandleDescriptor>,
    pub arrow: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn new(geometry: PathBuf) -> Self {
        Self {
            geometry,
            samples: DEFAULT_SAMPLES,
            seed: DEFAULT_SEED,
            ..Self::default()
        }
    }

    pub fn is_run_file(path: &Path) -> bool {
        path.extension().is_some_and(|e| e == "run")
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, dir).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses `.run` text; relative paths resolve against `dir`.
    pub fn parse(text: &str, dir: &Path) -> CliResult<Self> {
        let doc = Document::parse(text).map_err(|source| CliError::Parse {
            path: PathBuf::from("<run>"),
            source,
        })?;
        let geometry = doc
            .header_value("geometry")
            .ok_or_else(|| config("missing `geometry`"))?;
        let mut run = Self::new(dir.join(&geometry.value));
        for e in &doc.header {
            let v = e.value.as_str();
            let at = |msg: String| config(format!("line {}: {msg}", e.line));
            match e.key.as_str() {
                "geometry" => {}
                "command" => run.command = Some(parse_enum("command", v)?),
                "suite" => run.suite = parse_enum("suite", v)?,
                "probe" => run.probe = Some(parse_enum("probe", v)?),
                "points" | "point" => run.points = parse_points(v)?,
                "seed" => run.seed = v.parse().map_err(|_| at(format!("seed `{v}` is not an integer")))?,
                "samples" => {
                    run.samples = v
                        .parse()
                        .ok()
                        .filter(|n| *n > 0)
                        .ok_or_else(|| at(format!("samples `{v}` is not a positive integer")))?
                }
                "t_grid" => run.grid = v.parse()?,
                "output" => run.output = Some(dir.join(v)),
                "csv" => run.csv = Some(dir.join(v)),
                "X" => run.x = Some(v.to_string()),
                "Y" => run.y = Some(v.to_string()),
                "a" => run.a = Some(v.to_string()),
                "b" => run.b = Some(v.to_string()),
                "h1" => run.h1 = Some(parse_handle(v)?),
                "h2" => run.h2 = Some(parse_handle(v)?),
                "arrow" => run.arrow = Some(parse_vector(v)?),
                other => return Err(at(format!("unknown key `{other}`"))),
            }
        }
        for (name, line, entries) in &doc.sections {
            if name != "handles" {
                return Err(config(format!("line {line}: unknown section [{name}]")));
            }
            for e in entries {
                let spec = parse_handle(&e.value).map_err(|err| config(format!("line {}: {err}", e.line)))?;
                run.handles.push((e.key.clone(), spec));
            }
        }
        Ok(run)
    }

    pub fn command_name(&self) -> String {
        self.command.as_ref().map(value_name).unwrap_or_default()
    }

    pub fn suite_name(&self) -> String {
        value_name(&self.suite)
    }

    pub fn probe_name(&self) -> Option<String> {
        self.probe.as_ref().map(value_name)
    }
}
