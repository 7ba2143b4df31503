//! Flat `key = value` run configuration.
//!
//! Sources, lowest priority first: built-in defaults, the `MAO_SEED`
//! environment variable (seed only), the config file, command-line
//! overrides. Unknown keys and unparsable values are rejected with the key
//! and line number; line 0 denotes a command-line override.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::backbone::{BackboneConfig, Variant};
use crate::dataset::DatasetSpec;
use crate::error::{Error, Result};
use crate::pseudo::LabelerMode;
use crate::trainer::{Mode, TuneConfig};

/// Every accepted key with a one-line description, in snapshot order.
pub const KEYS: &[(&str, &str)] = &[
    ("dataset", "dataset file written by `gen` and read by the other subcommands"),
    ("out_dir", "parent directory for run directories"),
    ("n_super", "number of superclasses"),
    ("classes_per_super", "classes per superclass"),
    ("d_img", "image feature width (shared by dataset and backbone)"),
    ("d_s", "sampler embedding width"),
    ("sigma_img", "per-image feature noise"),
    ("sigma_sem", "sampler embedding noise"),
    ("n_train", "training images per class"),
    ("n_test", "test images per class"),
    ("data_seed", "dataset generation seed"),
    ("token_offset", "first class id of the generated dataset"),
    ("variant", "backbone variant: text_prompt | joint_prompt"),
    ("prompt_len", "learnable context length L"),
    ("d_token", "token embedding width"),
    ("d", "joint embedding width"),
    ("tau", "softmax temperature"),
    ("vocab_size", "token table rows"),
    ("backbone_seed", "seed of the frozen backbone weights"),
    ("token_scale", "norm scale of pretrained class tokens"),
    ("domain_shift", "shared offset between pretrained concepts and downstream images"),
    ("super_shift", "per-superclass offset between concepts and images"),
    ("concept_noise", "per-class concept perturbation"),
    ("epochs", "total tuning epochs (split evenly in mao_full)"),
    ("lr", "SGD learning rate"),
    ("b", "anchors per hard-negative batch"),
    ("topk", "neighbours per anchor"),
    ("shots", "few-shot images per class"),
    ("seed", "tuning seed (few-shot draw, shuffles, prompt noise streams)"),
    ("mode", "backbone | backbone_2x | mao_base_only | mao_new_only | mao_full"),
    ("new_ar", "restrict new-phase candidates to new classes: on | off"),
    ("labeler", "pseudo-labeler: foundation | tuned"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DatasetSpec,
    pub backbone: BackboneConfig,
    pub tune: TuneConfig,
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DatasetSpec::default(),
            backbone: BackboneConfig::default(),
            tune: TuneConfig::default(),
            dataset: PathBuf::from("data/default.dataset"),
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("cannot parse `{v}`: {e}"))
}

fn positive(v: &str) -> std::result::Result<usize, String> {
    let n: usize = num(v)?;
    if n == 0 {
        return Err("must be >= 1".into());
    }
    Ok(n)
}

fn non_negative(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = num(v)?;
    if !(x >= 0.0) || !x.is_finite() {
        return Err(format!("must be a finite value >= 0, got `{v}`"));
    }
    Ok(x)
}

fn strictly_positive(v: &str) -> std::result::Result<f64, String> {
    let x = non_negative(v)?;
    if x == 0.0 {
        return Err("must be > 0".into());
    }
    Ok(x)
}

fn on_off(v: &str) -> std::result::Result<bool, String> {
    match v {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(format!("expected on | off, got `{v}`")),
    }
}

impl RunConfig {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let (d, bb, t) = (&mut self.data, &mut self.backbone, &mut self.tune);
        match key {
            "dataset" => self.dataset = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "n_super" => d.n_super = positive(v)?,
            "classes_per_super" => d.classes_per_super = positive(v)?,
            "d_img" => {
                d.d_img = positive(v)?;
                bb.d_img = d.d_img;
            }
            "d_s" => d.d_s = positive(v)?,
            "sigma_img" => d.sigma_img = non_negative(v)?,
            "sigma_sem" => d.sigma_sem = non_negative(v)?,
            "n_train" => d.n_train_per_class = positive(v)?,
            "n_test" => d.n_test_per_class = positive(v)?,
            "data_seed" => d.seed = num(v)?,
            "token_offset" => d.token_offset = num(v)?,
            "variant" => {
                bb.variant = Variant::parse(v).ok_or_else(|| format!("unknown variant `{v}`"))?
            }
            "prompt_len" => bb.prompt_len = positive(v)?,
            "d_token" => bb.d_token = positive(v)?,
            "d" => bb.d = positive(v)?,
            "tau" => bb.tau = strictly_positive(v)?,
            "vocab_size" => bb.vocab_size = positive(v)?,
            "backbone_seed" => bb.seed = num(v)?,
            "token_scale" => bb.token_scale = strictly_positive(v)?,
            "domain_shift" => bb.domain_shift = non_negative(v)?,
            "super_shift" => bb.super_shift = non_negative(v)?,
            "concept_noise" => bb.concept_noise = non_negative(v)?,
            "epochs" => t.epochs_total = positive(v)?,
            "lr" => t.lr = strictly_positive(v)?,
            "b" => t.b = positive(v)?,
            "topk" => t.k = positive(v)?,
            "shots" => t.shots = positive(v)?,
            "seed" => t.seed = num(v)?,
            "mode" => t.mode = Mode::parse(v).ok_or_else(|| format!("unknown mode `{v}`"))?,
            "new_ar" => t.new_ar = on_off(v)?,
            "labeler" => {
                t.labeler = LabelerMode::parse(v).ok_or_else(|| format!("unknown labeler `{v}`"))?
            }
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Text value of one key, in a form [`RunConfig::set`] reads back exactly.
    pub fn get(&self, key: &str) -> Option<String> {
        let (d, bb, t) = (&self.data, &self.backbone, &self.tune);
        Some(match key {
            "dataset" => self.dataset.display().to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "n_super" => d.n_super.to_string(),
            "classes_per_super" => d.classes_per_super.to_string(),
            "d_img" => d.d_img.to_string(),
            "d_s" => d.d_s.to_string(),
            "sigma_img" => format!("{:?}", d.sigma_img),
            "sigma_sem" => format!("{:?}", d.sigma_sem),
            "n_train" => d.n_train_per_class.to_string(),
            "n_test" => d.n_test_per_class.to_string(),
            "data_seed" => d.seed.to_string(),
            "token_offset" => d.token_offset.to_string(),
            "variant" => bb.variant.as_str().into(),
            "prompt_len" => bb.prompt_len.to_string(),
            "d_token" => bb.d_token.to_string(),
            "d" => bb.d.to_string(),
            "tau" => format!("{:?}", bb.tau),
            "vocab_size" => bb.vocab_size.to_string(),
            "backbone_seed" => bb.seed.to_string(),
            "token_scale" => format!("{:?}", bb.token_scale),
            "domain_shift" => format!("{:?}", bb.domain_shift),
            "super_shift" => format!("{:?}", bb.super_shift),
            "concept_noise" => format!("{:?}", bb.concept_noise),
            "epochs" => t.epochs_total.to_string(),
            "lr" => format!("{:?}", t.lr),
            "b" => t.b.to_string(),
            "topk" => t.k.to_string(),
            "shots" => t.shots.to_string(),
            "seed" => t.seed.to_string(),
            "mode" => t.mode.as_str().into(),
            "new_ar" => if t.new_ar { "on" } else { "off" }.into(),
            "labeler" => t.labeler.as_str().into(),
            _ => return None,
        })
    }

    /// Every key with its current value, one `key = value` line each.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        for (key, _) in KEYS {
            s.push_str(&format!("{key} = {}\n", self.get(key).expect("listed key")));
        }
        s
    }

    /// Parses config text over the defaults (and `env_seed`, if given), then
    /// applies `overrides`.
    pub fn parse(text: &str, overrides: &[(String, String)], env_seed: Option<&str>) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut origin: BTreeMap<&str, usize> = BTreeMap::new();
        if let Some(seed) = env_seed {
            cfg.set("seed", seed.trim()).map_err(|msg| Error::ConfigKey {
                key: "seed".into(),
                line: 0,
                msg: format!("MAO_SEED: {msg}"),
            })?;
        }
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::ConfigKey {
                    key: line.into(),
                    line: i + 1,
                    msg: "expected `key = value`".into(),
                });
            };
            let key = key.trim();
            cfg.set(key, value.trim()).map_err(|msg| Error::ConfigKey {
                key: key.into(),
                line: i + 1,
                msg,
            })?;
            if let Some((k, _)) = KEYS.iter().find(|(k, _)| *k == key) {
                origin.insert(k, i + 1);
            }
        }
        for (key, value) in overrides {
            cfg.set(key, value).map_err(|msg| Error::ConfigKey {
                key: key.clone(),
                line: 0,
                msg,
            })?;
            if let Some((k, _)) = KEYS.iter().find(|(k, _)| k == key) {
                origin.insert(k, 0);
            }
        }
        cfg.check_cross_key(&origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)], env_seed: Option<&str>) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text, overrides, env_seed)
    }

    fn check_cross_key(&self, origin: &BTreeMap<&str, usize>) -> Result<()> {
        let at = |key: &str, msg: String| Error::ConfigKey {
            key: key.into(),
            line: origin.get(key).copied().unwrap_or(0),
            msg,
        };
        if self.tune.mode == Mode::MaoFull && !self.tune.epochs_total.is_multiple_of(2) {
            return Err(at(
                "epochs",
                format!("mao_full splits epochs evenly; {} is odd", self.tune.epochs_total),
            ));
        }
        let max_id = self.data.token_offset + self.data.n_classes();
        if max_id > self.backbone.vocab_size {
            return Err(at(
                "vocab_size",
                format!("class ids reach {max_id} but vocab_size is {}", self.backbone.vocab_size),
            ));
        }
        self.data.validate()?;
        self.backbone.validate()?;
        self.tune.validate()
    }
}
