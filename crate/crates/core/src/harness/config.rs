//! Experiment configuration and its flat `key = value` text form.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bayes::{MapOptions, MonteCarloParams};
use crate::geometry::{NoiseModel, Priors};
use crate::observers::FixedPointCodec;
use crate::{Error, Result};

/// The observers a run can enable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObserverKind {
    #[serde(rename = "3d")]
    ThreeD,
    #[serde(rename = "strongly_2d")]
    StronglyTwoD,
    #[serde(rename = "nn")]
    NearestNeighbor,
    #[serde(rename = "kernel")]
    Kernel,
    #[serde(rename = "map")]
    MapModel,
    #[serde(rename = "interleave")]
    Interleave,
}

impl ObserverKind {
    pub const ALL: [ObserverKind; 6] = [
        ObserverKind::ThreeD,
        ObserverKind::StronglyTwoD,
        ObserverKind::NearestNeighbor,
        ObserverKind::Kernel,
        ObserverKind::MapModel,
        ObserverKind::Interleave,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObserverKind::ThreeD => "3d",
            ObserverKind::StronglyTwoD => "strongly_2d",
            ObserverKind::NearestNeighbor => "nn",
            ObserverKind::Kernel => "kernel",
            ObserverKind::MapModel => "map",
            ObserverKind::Interleave => "interleave",
        }
    }
}

impl fmt::Display for ObserverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObserverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::Config(format!("unknown observer {s:?}")))
    }
}

/// Everything that defines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Feature points per object.
    pub k: usize,
    pub n_objects: usize,
    /// Training views per object.
    pub views_per_object: usize,
    pub sigma: f64,
    pub tau: f64,
    pub trials: usize,
    pub mc: MonteCarloParams,
    pub master_seed: u64,
    pub observers: Vec<ObserverKind>,
    pub output_path: PathBuf,
    /// Class prior; uniform when absent.
    pub class_prior: Option<Vec<f64>>,
    pub map_iters: usize,
    pub map_restarts: usize,
    /// Kernel bandwidth; the median training distance when absent.
    pub kernel_bandwidth: Option<f64>,
    pub kernel_ridge: f64,
    pub codec_int_digits: u32,
    pub codec_frac_digits: u32,
    pub codec_offset: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            k: 4,
            n_objects: 3,
            views_per_object: 8,
            sigma: 0.05,
            tau: 1.0,
            trials: 500,
            mc: MonteCarloParams::default(),
            master_seed: 1,
            observers: vec![ObserverKind::ThreeD, ObserverKind::StronglyTwoD, ObserverKind::NearestNeighbor],
            output_path: PathBuf::from("out"),
            class_prior: None,
            map_iters: 50,
            map_restarts: 8,
            kernel_bandwidth: None,
            kernel_ridge: 1e-6,
            codec_int_digits: 2,
            codec_frac_digits: 8,
            codec_offset: 50.0,
        }
    }
}

const KEYS: [&str; 20] = [
    "k",
    "n_objects",
    "views_per_object",
    "sigma",
    "tau",
    "trials",
    "rotation_samples",
    "model_samples",
    "stream_label",
    "master_seed",
    "observers",
    "output_path",
    "class_prior",
    "map_iters",
    "map_restarts",
    "kernel_bandwidth",
    "kernel_ridge",
    "codec_int_digits",
    "codec_frac_digits",
    "codec_offset",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

impl ExperimentConfig {
    /// Parse `key = value` lines over the defaults. Blank lines and `#`
    /// comments are ignored; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key {key:?}", n + 1)));
            }
            if seen.contains(&key) {
                return Err(Error::Config(format!("line {}: repeated key {key:?}", n + 1)));
            }
            seen.push(key);
            c.set(key, value)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "k" => self.k = parse_num(key, value)?,
            "n_objects" => self.n_objects = parse_num(key, value)?,
            "views_per_object" => self.views_per_object = parse_num(key, value)?,
            "sigma" => self.sigma = parse_num(key, value)?,
            "tau" => self.tau = parse_num(key, value)?,
            "trials" => self.trials = parse_num(key, value)?,
            "rotation_samples" => self.mc.rotation_samples = parse_num(key, value)?,
            "model_samples" => self.mc.model_samples = parse_num(key, value)?,
            "stream_label" => self.mc.stream_label = value.to_string(),
            "master_seed" => self.master_seed = parse_num(key, value)?,
            "observers" => {
                self.observers = value.split(',').map(|v| v.trim().parse()).collect::<Result<_>>()?;
            }
            "output_path" => self.output_path = PathBuf::from(value),
            "class_prior" => self.class_prior = Some(parse_list(key, value)?),
            "map_iters" => self.map_iters = parse_num(key, value)?,
            "map_restarts" => self.map_restarts = parse_num(key, value)?,
            "kernel_bandwidth" => {
                self.kernel_bandwidth = if value == "median" { None } else { Some(parse_num(key, value)?) };
            }
            "kernel_ridge" => self.kernel_ridge = parse_num(key, value)?,
            "codec_int_digits" => self.codec_int_digits = parse_num(key, value)?,
            "codec_frac_digits" => self.codec_frac_digits = parse_num(key, value)?,
            "codec_offset" => self.codec_offset = parse_num(key, value)?,
            _ => unreachable!("keys are checked before dispatch"),
        }
        Ok(())
    }

    /// Render as parseable text.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let observers: Vec<&str> = self.observers.iter().map(|o| o.name()).collect();
        let mut out = format!(
            "k = {}\nn_objects = {}\nviews_per_object = {}\nsigma = {}\ntau = {}\ntrials = {}\n\
             rotation_samples = {}\nmodel_samples = {}\nstream_label = {}\nmaster_seed = {}\n\
             observers = {}\noutput_path = {}\nmap_iters = {}\nmap_restarts = {}\n\
             kernel_ridge = {}\ncodec_int_digits = {}\ncodec_frac_digits = {}\ncodec_offset = {}\n",
            self.k,
            self.n_objects,
            self.views_per_object,
            self.sigma,
            self.tau,
            self.trials,
            self.mc.rotation_samples,
            self.mc.model_samples,
            self.mc.stream_label,
            self.master_seed,
            observers.join(","),
            self.output_path.display(),
            self.map_iters,
            self.map_restarts,
            self.kernel_ridge,
            self.codec_int_digits,
            self.codec_frac_digits,
            self.codec_offset,
        );
        if let Some(p) = &self.class_prior {
            out.push_str(&format!("class_prior = {}\n", join(p)));
        }
        if let Some(h) = self.kernel_bandwidth {
            out.push_str(&format!("kernel_bandwidth = {h}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if self.n_objects == 0 || self.views_per_object == 0 || self.trials == 0 {
            return bad("n_objects, views_per_object and trials must be >= 1".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) || !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad("sigma and tau must be finite and >= 0".into());
        }
        self.mc.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.observers.is_empty() {
            return bad("at least one observer must be enabled".into());
        }
        let mut uniq = self.observers.clone();
        uniq.sort();
        uniq.dedup();
        if uniq.len() != self.observers.len() {
            return bad("observers are listed more than once".into());
        }
        if self.observers.contains(&ObserverKind::StronglyTwoD)
            && self.n_objects * self.views_per_object < 2 * self.k + 1
        {
            return bad(format!("strongly_2d needs n_objects * views_per_object >= 2k+1 = {}", 2 * self.k + 1));
        }
        if self.map_iters == 0 || self.map_restarts == 0 {
            return bad("map_iters and map_restarts must be >= 1".into());
        }
        if self.kernel_bandwidth.is_some_and(|h| !(h > 0.0 && h.is_finite())) {
            return bad("kernel_bandwidth must be positive".into());
        }
        if !(self.kernel_ridge >= 0.0 && self.kernel_ridge.is_finite()) {
            return bad("kernel_ridge must be finite and >= 0".into());
        }
        self.codec().map_err(|e| Error::Config(e.to_string()))?;
        self.priors().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn noise(&self) -> NoiseModel {
        if self.sigma == 0.0 {
            NoiseModel::deterministic()
        } else {
            NoiseModel::new(self.sigma).expect("sigma validated")
        }
    }

    pub fn priors(&self) -> Result<Priors> {
        match &self.class_prior {
            Some(p) => {
                if p.len() != self.n_objects {
                    return Err(Error::LengthMismatch { expected: self.n_objects, found: p.len() });
                }
                Priors::new(p.clone(), self.tau, self.noise())
            }
            None => Priors::uniform(self.n_objects, self.tau, self.noise()),
        }
    }

    pub fn codec(&self) -> Result<FixedPointCodec> {
        FixedPointCodec::new(self.codec_int_digits, self.codec_frac_digits, self.codec_offset)
    }

    pub fn map_options(&self) -> MapOptions {
        MapOptions { iters: self.map_iters, restarts: self.map_restarts, ..Default::default() }
    }

    pub fn enables(&self, kind: ObserverKind) -> bool {
        self.observers.contains(&kind)
    }
}
