//! `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::engine::{InnerSolver, XUpdateRule};
use crate::exec::Execution;
use crate::topology::TopologyKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid value for `{field}`: {msg}")]
    Validation { field: String, msg: String },
}

fn validation(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        field: field.to_string(),
        msg: msg.into(),
    }
}

const KEYS: &[&str] = &[
    "agents",
    "topology",
    "dataset",
    "data_csv",
    "data_schema",
    "missing_marker",
    "partition_seed",
    "blobs_n",
    "blobs_dim",
    "blobs_separation",
    "blobs_seed",
    "targets",
    "lambda",
    "grad_bound",
    "eta",
    "K",
    "init",
    "inner_tolerance",
    "inner_max_iters",
    "update_rule",
    "mode",
    "epsilon",
    "sigma2",
    "delta",
    "R",
    "trials",
    "seed",
    "reuse_seed",
    "output",
    "execution",
    "kappa2",
    "kappa4",
    "b",
    "theta",
];

#[derive(Debug, Clone, PartialEq)]
pub enum TopologySpec {
    Generated(TopologyKind),
    EdgeFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Csv {
        csv: PathBuf,
        schema: PathBuf,
        missing_marker: String,
        partition_seed: u64,
    },
    Blobs {
        n: usize,
        dim: usize,
        separation: f64,
        seed: u64,
        partition_seed: u64,
    },
    /// One target vector per agent; `f_i(x) = 0.5 ||x - c_i||^2`.
    Quadratic { targets: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitSpec {
    Zeros,
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PrivacySpec {
    NonPrivate,
    /// Calibrate every agent to the same total epsilon.
    Epsilon(f64),
    /// Explicit initial variance, one value for all agents or one per agent.
    Sigma2(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsOverrides {
    pub kappa2: Option<f64>,
    pub kappa4: f64,
    pub b: Option<f64>,
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub agents: usize,
    pub topology: TopologySpec,
    pub dataset: DatasetSpec,
    pub lambda: f64,
    pub grad_bound: f64,
    pub eta: f64,
    pub horizon: usize,
    pub init: InitSpec,
    pub inner: InnerSolver,
    pub rule: XUpdateRule,
    pub privacy: PrivacySpec,
    pub delta: f64,
    pub decay: f64,
    pub trials: usize,
    pub seed: u64,
    /// Every trial uses `seed` itself instead of `seed + trial`.
    pub reuse_seed: bool,
    pub output: Option<PathBuf>,
    pub execution: Execution,
    pub bounds: BoundsOverrides,
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(_, v)| v.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| validation(key, format!("{v:?}: {e}"))))
            .transpose()
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.parse(key)?.ok_or_else(|| validation(key, "required key is missing"))
    }
}

fn tokenize(text: &str) -> Result<Entries, ConfigError> {
    let mut map = BTreeMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
            line: line_no,
            msg: format!("expected key=value, found {line:?}"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if !KEYS.contains(&key) {
            return Err(ConfigError::Parse {
                line: line_no,
                msg: format!("unknown key {key:?}"),
            });
        }
        if value.is_empty() {
            return Err(ConfigError::Parse {
                line: line_no,
                msg: format!("empty value for {key:?}"),
            });
        }
        if let Some((first, _)) = map.insert(key.to_string(), (line_no, value.to_string())) {
            return Err(ConfigError::Parse {
                line: line_no,
                msg: format!("duplicate key {key:?} (first set on line {first})"),
            });
        }
    }
    Ok(Entries { map })
}

fn parse_list(field: &str, text: &str) -> Result<Vec<f64>, ConfigError> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| validation(field, format!("{t:?}: {e}")))
        })
        .collect()
}

fn resolve(base_dir: &Path, field: &str, value: &str) -> Result<PathBuf, ConfigError> {
    let p = Path::new(value);
    let full = if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
    if !full.exists() {
        return Err(validation(field, format!("file {} does not exist", full.display())));
    }
    Ok(full)
}

fn positive(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(validation(field, format!("must be positive, got {v}")))
    }
}

/// Parse and validate a configuration. Relative paths resolve against
/// `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<RunConfig, ConfigError> {
    let e = tokenize(text)?;

    let topology = match e.raw("topology") {
        None => TopologySpec::Generated(TopologyKind::Complete),
        Some(v) => match v.strip_prefix("edges:") {
            Some(path) => TopologySpec::EdgeFile(resolve(base_dir, "topology", path.trim())?),
            None => TopologySpec::Generated(v.parse().map_err(|err| validation("topology", format!("{err}")))?),
        },
    };
    let agents = match (&topology, e.parse::<usize>("agents")?) {
        (TopologySpec::Generated(_), None) => return Err(validation("agents", "required key is missing")),
        (TopologySpec::EdgeFile(_), None) => 0,
        (_, Some(n)) if n < 2 => return Err(validation("agents", format!("need at least 2 agents, got {n}"))),
        (_, Some(n)) => n,
    };

    let partition_seed = e.parse_or("partition_seed", 0u64)?;
    let dataset = match e.raw("dataset") {
        None => return Err(validation("dataset", "required key is missing")),
        Some("csv") => DatasetSpec::Csv {
            csv: resolve(base_dir, "data_csv", e.raw("data_csv").ok_or_else(|| validation("data_csv", "required for dataset=csv"))?)?,
            schema: resolve(
                base_dir,
                "data_schema",
                e.raw("data_schema").ok_or_else(|| validation("data_schema", "required for dataset=csv"))?,
            )?,
            missing_marker: e.raw("missing_marker").unwrap_or(crate::dataset::DEFAULT_MISSING_MARKER).to_string(),
            partition_seed,
        },
        Some("blobs") => {
            let n: usize = e.required("blobs_n")?;
            let dim: usize = e.required("blobs_dim")?;
            if n == 0 || dim == 0 {
                return Err(validation(if n == 0 { "blobs_n" } else { "blobs_dim" }, "must be positive"));
            }
            DatasetSpec::Blobs {
                n,
                dim,
                separation: e.parse_or("blobs_separation", 1.0)?,
                seed: e.parse_or("blobs_seed", 0u64)?,
                partition_seed,
            }
        }
        Some("quadratic") => {
            let raw = e.raw("targets").ok_or_else(|| validation("targets", "required for dataset=quadratic"))?;
            let targets: Vec<Vec<f64>> = raw
                .split(';')
                .map(|t| parse_list("targets", t))
                .collect::<Result<_, _>>()?;
            let dim = targets[0].len();
            if targets.iter().any(|t| t.len() != dim) {
                return Err(validation("targets", "all target vectors must have the same length"));
            }
            if agents != 0 && targets.len() != agents {
                return Err(validation("targets", format!("{} targets for {agents} agents", targets.len())));
            }
            DatasetSpec::Quadratic { targets }
        }
        Some(other) => return Err(validation("dataset", format!("unknown dataset {other:?} (csv, blobs, quadratic)"))),
    };

    let lambda: f64 = e.parse_or("lambda", 1e-3)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(validation("lambda", format!("must be nonnegative, got {lambda}")));
    }
    let grad_bound = positive("grad_bound", e.parse_or("grad_bound", 1.0)?)?;
    let eta = positive("eta", e.required("eta")?)?;
    let horizon: usize = e.parse_or("K", 100)?;

    let init = match e.raw("init") {
        None => InitSpec::Uniform { lo: -0.1, hi: 0.1 },
        Some("zeros") => InitSpec::Zeros,
        Some(v) => {
            let range = v
                .strip_prefix("uniform:")
                .ok_or_else(|| validation("init", format!("expected zeros or uniform:LO,HI, got {v:?}")))?;
            let bounds = parse_list("init", range)?;
            match bounds[..] {
                [lo, hi] if lo <= hi => InitSpec::Uniform { lo, hi },
                _ => return Err(validation("init", format!("expected uniform:LO,HI with LO <= HI, got {v:?}"))),
            }
        }
    };
    let inner = InnerSolver {
        tolerance: positive("inner_tolerance", e.parse_or("inner_tolerance", 1e-10)?)?,
        max_iters: match e.parse_or("inner_max_iters", 500usize)? {
            0 => return Err(validation("inner_max_iters", "must be positive")),
            n => n,
        },
    };
    let rule = match e.raw("update_rule") {
        None | Some("perturbed") => XUpdateRule::Perturbed,
        Some("literal") => XUpdateRule::Literal,
        Some(v) => return Err(validation("update_rule", format!("expected perturbed or literal, got {v:?}"))),
    };

    let epsilon: Option<f64> = e.parse("epsilon")?;
    let sigma2 = e.raw("sigma2").map(|v| parse_list("sigma2", v)).transpose()?;
    let privacy = match e.raw("mode").unwrap_or("private") {
        "nonprivate" => PrivacySpec::NonPrivate,
        "private" => match (epsilon, sigma2) {
            (Some(_), Some(_)) => return Err(validation("sigma2", "give either epsilon or sigma2, not both")),
            (Some(eps), None) => PrivacySpec::Epsilon(positive("epsilon", eps)?),
            (None, Some(s)) => {
                if let Some(bad) = s.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                    return Err(validation("sigma2", format!("variances must be nonnegative, got {bad}")));
                }
                PrivacySpec::Sigma2(s)
            }
            (None, None) => return Err(validation("epsilon", "private mode needs epsilon or sigma2")),
        },
        other => return Err(validation("mode", format!("expected private or nonprivate, got {other:?}"))),
    };
    let delta: f64 = e.parse_or("delta", 1e-4)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(validation("delta", format!("must lie in (0, 1), got {delta}")));
    }
    let decay: f64 = e.parse_or("R", 0.995)?;
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(validation("R", format!("decay must be in (0, 1], got {decay}")));
    }
    let trials: usize = e.parse_or("trials", 1)?;
    if trials == 0 {
        return Err(validation("trials", "must be at least 1"));
    }
    let bounds = BoundsOverrides {
        kappa2: e.parse("kappa2")?,
        kappa4: e.parse_or("kappa4", 2.0)?,
        b: e.parse("b")?,
        theta: e.parse("theta")?,
    };
    if !(bounds.kappa4 > 1.0) {
        return Err(validation("kappa4", format!("must exceed 1, got {}", bounds.kappa4)));
    }

    Ok(RunConfig {
        agents,
        topology,
        dataset,
        lambda,
        grad_bound,
        eta,
        horizon,
        init,
        inner,
        rule,
        privacy,
        delta,
        decay,
        trials,
        seed: e.parse_or("seed", 0u64)?,
        reuse_seed: e.parse_or("reuse_seed", false)?,
        output: e.raw("output").map(|p| base_dir.join(p)),
        execution: e
            .raw("execution")
            .map(|v| v.parse::<Execution>().map_err(|err| validation("execution", err)))
            .transpose()?
            .unwrap_or_default(),
        bounds,
    })
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Seed of trial `t`.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        if self.reuse_seed {
            self.seed
        } else {
            self.seed.wrapping_add(trial as u64)
        }
    }

    /// Every resolved setting, defaults included, as `(key, value)` pairs.
    /// Execution mode is left out since it does not affect results.
    pub fn resolved(&self) -> Vec<(String, String)> {
        let mut out: Vec<(&str, String)> = vec![("agents", self.agents.to_string())];
        out.push((
            "topology",
            match &self.topology {
                TopologySpec::Generated(k) => k.to_string(),
                TopologySpec::EdgeFile(p) => format!("edges:{}", file_name(p)),
            },
        ));
        match &self.dataset {
            DatasetSpec::Csv {
                csv,
                schema,
                missing_marker,
                partition_seed,
            } => {
                out.push(("dataset", "csv".into()));
                out.push(("data_csv", file_name(csv)));
                out.push(("data_schema", file_name(schema)));
                out.push(("missing_marker", missing_marker.clone()));
                out.push(("partition_seed", partition_seed.to_string()));
            }
            DatasetSpec::Blobs {
                n,
                dim,
                separation,
                seed,
                partition_seed,
            } => {
                out.push(("dataset", "blobs".into()));
                out.push(("blobs_n", n.to_string()));
                out.push(("blobs_dim", dim.to_string()));
                out.push(("blobs_separation", separation.to_string()));
                out.push(("blobs_seed", seed.to_string()));
                out.push(("partition_seed", partition_seed.to_string()));
            }
            DatasetSpec::Quadratic { targets } => {
                out.push(("dataset", "quadratic".into()));
                out.push(("targets", targets.iter().map(|t| join(t)).collect::<Vec<_>>().join(";")));
            }
        }
        out.push(("lambda", self.lambda.to_string()));
        out.push(("grad_bound", self.grad_bound.to_string()));
        out.push(("eta", self.eta.to_string()));
        out.push(("K", self.horizon.to_string()));
        out.push((
            "init",
            match self.init {
                InitSpec::Zeros => "zeros".into(),
                InitSpec::Uniform { lo, hi } => format!("uniform:{lo},{hi}"),
            },
        ));
        out.push(("inner_tolerance", self.inner.tolerance.to_string()));
        out.push(("inner_max_iters", self.inner.max_iters.to_string()));
        out.push((
            "update_rule",
            match self.rule {
                XUpdateRule::Perturbed => "perturbed",
                XUpdateRule::Literal => "literal",
            }
            .into(),
        ));
        match &self.privacy {
            PrivacySpec::NonPrivate => out.push(("mode", "nonprivate".into())),
            PrivacySpec::Epsilon(eps) => {
                out.push(("mode", "private".into()));
                out.push(("epsilon", eps.to_string()));
            }
            PrivacySpec::Sigma2(s) => {
                out.push(("mode", "private".into()));
                out.push(("sigma2", join(s)));
            }
        }
        out.push(("delta", self.delta.to_string()));
        out.push(("R", self.decay.to_string()));
        out.push(("trials", self.trials.to_string()));
        out.push(("seed", self.seed.to_string()));
        out.push(("reuse_seed", self.reuse_seed.to_string()));
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |f| f.to_string_lossy().into_owned())
}
