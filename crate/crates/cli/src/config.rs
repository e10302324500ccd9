//! Flat `key = value` run configuration with `#` comments.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mdmixer::baselines::{BaselineConfig, BaselineKind};
use mdmixer::model::{ModelConfig, PosEncoding};
use mdmixer::training::{AdamWConfig, TrainHyper};
use mdmixer::Error;

/// Which network a run trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    MdMixer,
    Baseline(BaselineKind),
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "mdmixer" => Ok(Self::MdMixer),
            other => other.parse().map(Self::Baseline).map_err(|_| {
                Error::config(
                    "model",
                    format!("unknown model '{other}' (expected mdmixer, linear_direct, decomp_linear or dual_branch)"),
                )
            }),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::MdMixer => f.write_str("mdmixer"),
            Self::Baseline(k) => k.fmt(f),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub dataset_name: String,
    pub out_dir: PathBuf,
    pub split: [f64; 3],
    pub model_kind: ModelKind,
    /// `None` means "take it from the dataset".
    pub channels: Option<usize>,
    pub model: ModelConfig,
    pub hyper: TrainHyper,
    pub seeds: Vec<u64>,
    pub parallel_seeds: bool,
    pub eval_batch_size: usize,
    pub gradcheck_step: f64,
    pub gradcheck_tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            dataset_name: "dataset".into(),
            out_dir: PathBuf::from("runs"),
            split: [0.7, 0.1, 0.2],
            model_kind: ModelKind::MdMixer,
            channels: None,
            model: ModelConfig::default(),
            hyper: TrainHyper::default(),
            seeds: vec![1, 2, 3],
            parallel_seeds: false,
            eval_batch_size: 256,
            gradcheck_step: 1e-5,
            gradcheck_tol: 1e-4,
        }
    }
}

/// Every recognised key, in echo order.
pub const KEYS: &[&str] = &[
    "dataset",
    "dataset_name",
    "out_dir",
    "split",
    "model",
    "lookback",
    "horizon",
    "channels",
    "patch_len",
    "stride",
    "embed_dim",
    "heads",
    "hidden",
    "kernel",
    "align_weight",
    "use_mpp",
    "use_mim",
    "use_amwg",
    "use_align_loss",
    "pos_encoding",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "batch_size",
    "max_epochs",
    "patience",
    "seeds",
    "parallel_seeds",
    "eval_batch_size",
    "gradcheck_step",
    "gradcheck_tol",
];

fn num<T: FromStr>(field: &'static str, v: &str) -> Result<T, Error> {
    v.parse().map_err(|_| Error::config(field, format!("cannot parse '{v}'")))
}

fn flag(field: &'static str, v: &str) -> Result<bool, Error> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(field, format!("expected true or false, got '{v}'"))),
    }
}

fn list<T: FromStr>(field: &'static str, v: &str) -> Result<Vec<T>, Error> {
    v.split(',').map(|p| num(field, p.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Reads `path`; relative paths inside are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(d) = &cfg.dataset {
            if d.is_relative() {
                cfg.dataset = Some(base.join(d));
            }
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut cfg = Self::default();
        let mut seen: Vec<&'static str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config("config", format!("line {}: expected 'key = value'", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let key = *KEYS
                .iter()
                .find(|&&known| known == k)
                .ok_or_else(|| Error::config("config", format!("line {}: unknown key '{k}'", i + 1)))?;
            if seen.contains(&key) {
                return Err(Error::config(key, format!("line {}: duplicate key", i + 1)));
            }
            seen.push(key);
            cfg.set(key, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &'static str, v: &str) -> Result<(), Error> {
        let m = &mut self.model;
        let a = &mut self.hyper.adamw;
        match key {
            "dataset" => self.dataset = (!v.is_empty()).then(|| PathBuf::from(v)),
            "dataset_name" => self.dataset_name = v.to_string(),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "split" => {
                let r: Vec<f64> = list(key, v)?;
                self.split = r
                    .try_into()
                    .map_err(|_| Error::config(key, "expected three ratios, e.g. 0.7,0.1,0.2"))?;
            }
            "model" => self.model_kind = v.parse()?,
            "lookback" => m.lookback = num(key, v)?,
            "horizon" => m.horizon = num(key, v)?,
            "channels" => self.channels = if v == "auto" { None } else { Some(num(key, v)?) },
            "patch_len" => m.patch_len = num(key, v)?,
            "stride" => m.stride = num(key, v)?,
            "embed_dim" => m.embed_dim = num(key, v)?,
            "heads" => m.heads = num(key, v)?,
            "hidden" => m.hidden = num(key, v)?,
            "kernel" => m.kernel = num(key, v)?,
            "align_weight" => m.align_weight = num(key, v)?,
            "use_mpp" => m.use_mpp = flag(key, v)?,
            "use_mim" => m.use_mim = flag(key, v)?,
            "use_amwg" => m.use_amwg = flag(key, v)?,
            "use_align_loss" => m.use_align_loss = flag(key, v)?,
            "pos_encoding" => m.pos_encoding = v.parse::<PosEncoding>().map_err(|_| {
                Error::config(key, format!("expected shared or per_channel, got '{v}'"))
            })?,
            "lr" => a.lr = num(key, v)?,
            "beta1" => a.beta1 = num(key, v)?,
            "beta2" => a.beta2 = num(key, v)?,
            "eps" => a.eps = num(key, v)?,
            "weight_decay" => a.weight_decay = num(key, v)?,
            "batch_size" => self.hyper.batch_size = num(key, v)?,
            "max_epochs" => self.hyper.max_epochs = num(key, v)?,
            "patience" => self.hyper.patience = num(key, v)?,
            "seeds" => self.seeds = list(key, v)?,
            "parallel_seeds" => self.parallel_seeds = flag(key, v)?,
            "eval_batch_size" => self.eval_batch_size = num(key, v)?,
            "gradcheck_step" => self.gradcheck_step = num(key, v)?,
            "gradcheck_tol" => self.gradcheck_tol = num(key, v)?,
            _ => unreachable!("key list and setter agree"),
        }
        Ok(())
    }

    /// Checks every component invariant that does not depend on the data.
    pub fn validate(&self) -> Result<(), Error> {
        mdmixer::data::SplitSpec::new(self.split, self.model.lookback, self.model.horizon)?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::config("eval_batch_size", "must be positive"));
        }
        let positive = |v: f64| v > 0.0;
        if !positive(self.gradcheck_step) || !positive(self.gradcheck_tol) {
            return Err(Error::config("gradcheck_step", "step and tolerance must be positive"));
        }
        if self.channels == Some(0) {
            return Err(Error::config("channels", "must be at least 1"));
        }
        self.hyper.validate()?;
        match self.model_kind {
            ModelKind::MdMixer => self.model_config(self.channels.unwrap_or(1)).validate(),
            ModelKind::Baseline(_) => self.baseline_config(self.channels.unwrap_or(1)).validate(),
        }
    }

    pub fn model_config(&self, channels: usize) -> ModelConfig {
        ModelConfig { channels, ..self.model.clone() }
    }

    pub fn baseline_config(&self, channels: usize) -> BaselineConfig {
        BaselineConfig {
            kind: match self.model_kind {
                ModelKind::Baseline(k) => k,
                ModelKind::MdMixer => BaselineKind::LinearDirect,
            },
            lookback: self.model.lookback,
            horizon: self.model.horizon,
            channels,
            hidden: self.model.hidden,
            kernel: self.model.kernel,
        }
    }

    /// Fully materialised config; parses back to an equal value.
    pub fn render(&self) -> String {
        let m = &self.model;
        let a: &AdamWConfig = &self.hyper.adamw;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("dataset", self.dataset.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        put("dataset_name", self.dataset_name.clone());
        put("out_dir", self.out_dir.display().to_string());
        put("split", join(&self.split));
        put("model", self.model_kind.to_string());
        put("lookback", m.lookback.to_string());
        put("horizon", m.horizon.to_string());
        put("channels", self.channels.map_or("auto".into(), |c| c.to_string()));
        put("patch_len", m.patch_len.to_string());
        put("stride", m.stride.to_string());
        put("embed_dim", m.embed_dim.to_string());
        put("heads", m.heads.to_string());
        put("hidden", m.hidden.to_string());
        put("kernel", m.kernel.to_string());
        put("align_weight", m.align_weight.to_string());
        put("use_mpp", m.use_mpp.to_string());
        put("use_mim", m.use_mim.to_string());
        put("use_amwg", m.use_amwg.to_string());
        put("use_align_loss", m.use_align_loss.to_string());
        put("pos_encoding", m.pos_encoding.to_string());
        put("lr", a.lr.to_string());
        put("beta1", a.beta1.to_string());
        put("beta2", a.beta2.to_string());
        put("eps", a.eps.to_string());
        put("weight_decay", a.weight_decay.to_string());
        put("batch_size", self.hyper.batch_size.to_string());
        put("max_epochs", self.hyper.max_epochs.to_string());
        put("patience", self.hyper.patience.to_string());
        put("seeds", join(&self.seeds));
        put("parallel_seeds", self.parallel_seeds.to_string());
        put("eval_batch_size", self.eval_batch_size.to_string());
        put("gradcheck_step", self.gradcheck_step.to_string());
        put("gradcheck_tol", self.gradcheck_tol.to_string());
        s
    }
}
