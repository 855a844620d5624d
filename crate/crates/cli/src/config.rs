//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected so typos do not silently fall back to defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use wavebound_core::oracle::LinearPredictor;
use wavebound_core::{Error, OracleInstance, SplitSpec, TrainConfig};

pub type Pairs = BTreeMap<String, String>;

pub fn parse_pairs(text: &str, origin: &str) -> Result<Pairs, Error> {
    let mut out = Pairs::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{origin}:{}: expected key = value, got {line:?}", i + 1)))?;
        let key = k.trim().to_string();
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("{origin}:{}: duplicate key {key:?}", i + 1)));
        }
    }
    Ok(out)
}

pub fn read_pairs(path: &Path) -> Result<Pairs, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_pairs(&text, &path.display().to_string())
}

/// Parses `key=value` flag overrides.
pub fn parse_overrides(items: &[String]) -> Result<Pairs, Error> {
    parse_pairs(&items.join("\n"), "--set")
}

fn field<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, Error>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value for {key}: {value:?} ({e})")))
}

fn list(key: &str, value: &str) -> Result<Vec<f64>, Error> {
    value.split(',').map(|v| field(key, v.trim())).collect()
}

/// Everything `train`, `sweep` and `eval` need, in one flat record.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    /// `None` keeps every column.
    pub feature: Option<String>,
    pub split: SplitSpec,
    /// z-score with train-segment statistics.
    pub standardize: bool,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    pub grid: Option<String>,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            feature: None,
            split: SplitSpec::standard(),
            standardize: true,
            train: TrainConfig::default(),
            out_dir: PathBuf::from("runs/default"),
            grid: None,
            workers: 1,
        }
    }
}

pub const RUN_KEYS: &[&str] = &[
    "data",
    "feature",
    "split",
    "standardize",
    "input_len",
    "output_len",
    "hidden",
    "objective",
    "batch_size",
    "learning_rate",
    "decay",
    "max_epochs",
    "patience",
    "seed",
    "eval_network",
    "out_dir",
    "grid",
    "workers",
];

impl RunConfig {
    pub fn apply(&mut self, pairs: &Pairs) -> Result<(), Error> {
        for (k, v) in pairs {
            let t = &mut self.train;
            match k.as_str() {
                "data" => self.data = Some(PathBuf::from(v)),
                "feature" => self.feature = (v != "all").then(|| v.clone()),
                "split" => self.split = SplitSpec::parse(v)?,
                "standardize" => self.standardize = field(k, v)?,
                "input_len" => t.input_len = field(k, v)?,
                "output_len" => t.output_len = field(k, v)?,
                "hidden" => t.hidden = field(k, v)?,
                "objective" => t.objective = v.parse()?,
                "batch_size" => t.batch_size = field(k, v)?,
                "learning_rate" => t.learning_rate = field(k, v)?,
                "decay" => t.decay = field(k, v)?,
                "max_epochs" => t.max_epochs = field(k, v)?,
                "patience" => t.patience = field(k, v)?,
                "seed" => t.seed = field(k, v)?,
                "eval_network" => t.eval_network = v.parse()?,
                "out_dir" => self.out_dir = PathBuf::from(v),
                "grid" => self.grid = Some(v.clone()),
                "workers" => self.workers = field(k, v)?,
                other => {
                    return Err(Error::Config(format!(
                        "unknown key {other:?} (known: {})",
                        RUN_KEYS.join(", ")
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.data.is_none() {
            return Err(Error::Config("no dataset given (key `data` or --data)".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be ≥ 1".into()));
        }
        self.train.validate()
    }

    /// The resolved configuration in the same format it is read from.
    pub fn render(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        if let Some(d) = &self.data {
            put("data", d.display().to_string());
        }
        put("feature", self.feature.clone().unwrap_or_else(|| "all".into()));
        put("split", self.split.to_string());
        put("standardize", self.standardize.to_string());
        put("input_len", t.input_len.to_string());
        put("output_len", t.output_len.to_string());
        put("hidden", t.hidden.to_string());
        put("objective", t.objective.to_string());
        put("batch_size", t.batch_size.to_string());
        put("learning_rate", format!("{:?}", t.learning_rate));
        put("decay", format!("{:?}", t.decay));
        put("max_epochs", t.max_epochs.to_string());
        put("patience", t.patience.to_string());
        put("seed", t.seed.to_string());
        put("eval_network", t.eval_network.to_string());
        put("out_dir", self.out_dir.display().to_string());
        if let Some(g) = &self.grid {
            put("grid", g.clone());
        }
        put("workers", self.workers.to_string());
        s
    }
}

pub const ORACLE_KEYS: &[&str] = &[
    "rows",
    "cols",
    "slopes",
    "perturbation",
    "input_std",
    "noise_std",
    "eps",
    "n",
    "trials",
    "margin_alpha",
    "audit_batch_size",
    "audit_flood_level",
    "seed",
];

/// Builds a theorem instance; missing keys fall back to the acceptance
/// instance.
pub fn oracle_instance(pairs: &Pairs) -> Result<OracleInstance, Error> {
    let base = OracleInstance::acceptance();
    let get = |k: &str| pairs.get(k).map(String::as_str);
    for k in pairs.keys() {
        if !ORACLE_KEYS.contains(&k.as_str()) {
            return Err(Error::Config(format!(
                "unknown key {k:?} (known: {})",
                ORACLE_KEYS.join(", ")
            )));
        }
    }

    let mut inst = if ["rows", "cols", "slopes", "perturbation", "input_std", "noise_std"]
        .iter()
        .any(|k| pairs.contains_key(*k))
    {
        let (r0, c0) = base.population.output_shape;
        let rows = get("rows").map(|v| field("rows", v)).transpose()?.unwrap_or(r0);
        let cols = get("cols").map(|v| field("cols", v)).transpose()?.unwrap_or(c0);
        let slopes = match get("slopes") {
            Some(v) => list("slopes", v)?,
            None => diag(&base.g_star),
        };
        let perturbation = match get("perturbation") {
            Some(v) => list("perturbation", v)?,
            None => diag(&base.g)
                .iter()
                .zip(diag(&base.g_star))
                .map(|(a, b)| a - b)
                .collect(),
        };
        let input_std = get("input_std")
            .map(|v| field("input_std", v))
            .transpose()?
            .unwrap_or(1.0);
        let noise_std = get("noise_std")
            .map(|v| field("noise_std", v))
            .transpose()?
            .unwrap_or(1.0);
        OracleInstance::independent_channels((rows, cols), &slopes, &perturbation, input_std, noise_std)?
    } else {
        base
    };

    if let Some(v) = get("eps") {
        inst.eps = field("eps", v)?;
    }
    if let Some(v) = get("n") {
        inst.n = field("n", v)?;
    }
    if let Some(v) = get("trials") {
        inst.trials = field("trials", v)?;
    }
    if let Some(v) = get("margin_alpha") {
        inst.margin_alpha = field("margin_alpha", v)?;
    }
    if let Some(v) = get("audit_batch_size") {
        inst.audit_batch_size = field("audit_batch_size", v)?;
    }
    if let Some(v) = get("audit_flood_level") {
        inst.audit_flood_level = field("audit_flood_level", v)?;
    }
    if let Some(v) = get("seed") {
        inst.seed = field("seed", v)?;
    }
    inst.validate()?;
    Ok(inst)
}

fn diag(p: &LinearPredictor) -> Vec<f64> {
    (0..p.weights.rows()).map(|i| p.weights[(i, i)]).collect()
}
