//! Flat `key = value` experiment configuration.
//!
//! Blank lines and text after `#` are ignored. Every key is optional and
//! falls back to the default listed below; unknown or repeated keys are
//! errors.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `n_coarse` | 10 | coarse cells per direction |
//! | `fine_per_coarse` | 10 | fine cells per coarse cell and direction |
//! | `t_end` | 1.6 | final time |
//! | `n_slabs` | 2 | coarse time intervals |
//! | `steps_per_slab` | 8 | fine steps per coarse interval |
//! | `field` | `inclusions` | `inclusions`, `channels`, `rotating_channels` or `file` |
//! | `field_file` | | CSV field for `field = file` |
//! | `contrast` | 1e6 | inclusion value over the unit background |
//! | `motion_dx`, `motion_dy` | 1, 0 | translation in fine cells per update |
//! | `motion_period` | 2 | fine steps between updates |
//! | `rotation_deg` | 2.0 | degrees per fine step for `rotating_channels` |
//! | `source` | 1.0 | constant right-hand side |
//! | `L` | 4 | offline functions per neighborhood |
//! | `p_bf` | 8 | buffer number |
//! | `space_layers` | `fine_per_coarse` | oversampling layers in fine cells |
//! | `time_extension` | 2 | oversampling fine steps before each slab |
//! | `sweep` | `L` | swept parameter of `table-offline`: `L` or `p_bf` |
//! | `sweep_values` | 2,6,10,20,30,40,50 | values of the swept parameter |
//! | `L_list` | 1,2,3,4,5 | offline counts of `table-online` and `corr-study` |
//! | `sweeps` | 3 | online enrichment sweeps |
//! | `theta` | `none` | adaptive fraction in (0, 1], or `none` |
//! | `seed` | 1 | snapshot seed |
//! | `threads` | 0 | worker threads, 0 = all cores |
//! | `out` | `out` | output directory |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::coefficient::Motion;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Inclusions,
    Channels,
    RotatingChannels,
    File,
}

impl FieldKind {
    fn name(self) -> &'static str {
        match self {
            FieldKind::Inclusions => "inclusions",
            FieldKind::Channels => "channels",
            FieldKind::RotatingChannels => "rotating_channels",
            FieldKind::File => "file",
        }
    }
}

impl FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [FieldKind::Inclusions, FieldKind::Channels, FieldKind::RotatingChannels, FieldKind::File]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown field `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    L,
    PBf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_coarse: usize,
    pub fine_per_coarse: usize,
    pub t_end: f64,
    pub n_slabs: usize,
    pub steps_per_slab: usize,
    pub field: FieldKind,
    pub field_file: Option<PathBuf>,
    pub contrast: f64,
    pub motion: Motion,
    pub rotation_deg: f64,
    pub source: f64,
    pub l: usize,
    pub p_bf: usize,
    pub space_layers: Option<usize>,
    pub time_extension: usize,
    pub sweep: SweepKind,
    pub sweep_values: Vec<usize>,
    pub l_list: Vec<usize>,
    pub sweeps: usize,
    pub theta: Option<f64>,
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_coarse: 10,
            fine_per_coarse: 10,
            t_end: 1.6,
            n_slabs: 2,
            steps_per_slab: 8,
            field: FieldKind::Inclusions,
            field_file: None,
            contrast: 1e6,
            motion: Motion::DEFAULT,
            rotation_deg: 2.0,
            source: 1.0,
            l: 4,
            p_bf: 8,
            space_layers: None,
            time_extension: 2,
            sweep: SweepKind::L,
            sweep_values: vec![2, 6, 10, 20, 30, 40, 50],
            l_list: vec![1, 2, 3, 4, 5],
            sweeps: 3,
            theta: None,
            seed: 1,
            threads: 0,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::Config(format!("`{key}`: cannot parse {value:?}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        text.parse()
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_coarse" => self.n_coarse = parse(key, value)?,
            "fine_per_coarse" => self.fine_per_coarse = parse(key, value)?,
            "t_end" => self.t_end = parse(key, value)?,
            "n_slabs" => self.n_slabs = parse(key, value)?,
            "steps_per_slab" => self.steps_per_slab = parse(key, value)?,
            "field" => self.field = value.parse()?,
            "field_file" => self.field_file = Some(PathBuf::from(value)),
            "contrast" => self.contrast = parse(key, value)?,
            "motion_dx" => self.motion.dx = parse(key, value)?,
            "motion_dy" => self.motion.dy = parse(key, value)?,
            "motion_period" => self.motion.update_period = parse(key, value)?,
            "rotation_deg" => self.rotation_deg = parse(key, value)?,
            "source" => self.source = parse(key, value)?,
            "L" => self.l = parse(key, value)?,
            "p_bf" => self.p_bf = parse(key, value)?,
            "space_layers" => self.space_layers = Some(parse(key, value)?),
            "time_extension" => self.time_extension = parse(key, value)?,
            "sweep" => {
                self.sweep = match value {
                    "L" => SweepKind::L,
                    "p_bf" => SweepKind::PBf,
                    _ => return Err(Error::Config(format!("`sweep` must be `L` or `p_bf`, got {value:?}"))),
                }
            }
            "sweep_values" => self.sweep_values = parse_list(key, value)?,
            "L_list" => self.l_list = parse_list(key, value)?,
            "sweeps" => self.sweeps = parse(key, value)?,
            "theta" => self.theta = if value == "none" { None } else { Some(parse(key, value)?) },
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.n_coarse < 2 || self.fine_per_coarse == 0 {
            return bad("need n_coarse ≥ 2 and fine_per_coarse ≥ 1");
        }
        if self.n_slabs == 0 || self.steps_per_slab == 0 || !(self.t_end > 0.0) {
            return bad("need n_slabs ≥ 1, steps_per_slab ≥ 1 and t_end > 0");
        }
        if !(self.contrast > 0.0) || !self.contrast.is_finite() {
            return bad("contrast must be positive and finite");
        }
        if self.motion.update_period == 0 {
            return bad("motion_period must be positive");
        }
        if self.field == FieldKind::File && self.field_file.is_none() {
            return bad("field = file needs field_file");
        }
        if self.l == 0 {
            return bad("L must be positive");
        }
        if self.l_list.contains(&0) || (self.sweep == SweepKind::L && self.sweep_values.contains(&0)) {
            return bad("L values must be positive");
        }
        if let Some(t) = self.theta {
            if !(t > 0.0 && t <= 1.0) {
                return bad("theta must lie in (0, 1]");
            }
        }
        Ok(())
    }

    /// Canonical `key=value` lines of every setting that affects results
    /// (`threads` and `out` are left out).
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        line("n_coarse", self.n_coarse.to_string());
        line("fine_per_coarse", self.fine_per_coarse.to_string());
        line("t_end", format!("{:?}", self.t_end));
        line("n_slabs", self.n_slabs.to_string());
        line("steps_per_slab", self.steps_per_slab.to_string());
        line("field", self.field.name().to_string());
        if let Some(p) = &self.field_file {
            line("field_file", p.display().to_string());
        }
        line("contrast", format!("{:?}", self.contrast));
        line("motion_dx", self.motion.dx.to_string());
        line("motion_dy", self.motion.dy.to_string());
        line("motion_period", self.motion.update_period.to_string());
        line("rotation_deg", format!("{:?}", self.rotation_deg));
        line("source", format!("{:?}", self.source));
        line("L", self.l.to_string());
        line("p_bf", self.p_bf.to_string());
        line("space_layers", self.space_layers.unwrap_or(self.fine_per_coarse).to_string());
        line("time_extension", self.time_extension.to_string());
        line("sweep", if self.sweep == SweepKind::L { "L" } else { "p_bf" }.to_string());
        line("sweep_values", join(&self.sweep_values));
        line("L_list", join(&self.l_list));
        line("sweeps", self.sweeps.to_string());
        line("theta", self.theta.map_or("none".to_string(), |t| format!("{t:?}")));
        line("seed", self.seed.to_string());
        s
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            if seen.insert(key.to_string(), n + 1).is_some() {
                return Err(Error::Config(format!("line {}: `{key}` set twice", n + 1)));
            }
            cfg.set(key, value.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }
}
