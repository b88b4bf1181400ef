//! Flat `key = value` experiment configuration.
//!
//! One document drives every stage of an experiment: pretraining, the three
//! distillation modes, and the evaluations. Lines are `key = value`, `#`
//! starts a comment, order does not matter, unknown keys are errors. The
//! canonical serialization is a parse fixed point, and its SHA-256 is the
//! run fingerprint stored next to each run's outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use retro_core::data::AugConfig;
use retro_core::eval::ProbeConfig;
use retro_core::nn::EncoderConfig;
use retro_core::train::{ArchConfig, FreezeSchedule, Mode, TrainConfig};
use sha2::{Digest, Sha256};

use crate::error::{format_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Synthetic,
    Cifar10,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Synthetic => "synthetic",
            DatasetKind::Cifar10 => "cifar10",
        }
    }
}

/// How the student's adapter width is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapterChoice {
    /// Match the teacher's representation width (the head-reuse requirement).
    Auto,
    /// No adapter; the head reads the encoder representation directly.
    Off,
    Width(usize),
}

/// One encoder + head silhouette as it appears in the config file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetShape {
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
    pub head_hidden: usize,
    pub embed_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub mode: Mode,

    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub data_seed: u64,
    pub classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub image_size: usize,

    pub teacher_epochs: usize,
    pub teacher_ckpt: Option<PathBuf>,
    pub teacher: NetShape,
    pub student: NetShape,
    pub adapter: AdapterChoice,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub tau: f32,
    pub gamma: f32,
    pub dis_weight: f32,
    pub ema_momentum: f64,
    pub bank_size: usize,
    pub frozen_epochs: usize,
    pub unfrozen_epochs: usize,
    pub aug: AugConfig,

    pub probe_epochs: usize,
    pub probe_lr: f32,
    pub probe_milestones: Vec<f32>,
    pub probe_drop_factor: f32,
    pub probe_batch_size: usize,
    pub probe_momentum: f32,
    pub probe_weight_decay: f32,
    pub knn_k: usize,
    pub finetune_fraction: f64,
    pub finetune_epochs: usize,
    pub finetune_lr: f32,
}

fn parse_num<T: core::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| format_err(format!("config key `{key}`: cannot parse `{v}`")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|p| parse_num(key, p.trim())).collect()
}

fn parse_f32_list(key: &str, v: &str) -> Result<Vec<f32>> {
    v.split(',').map(|p| parse_num(key, p.trim())).collect()
}

fn join<T: core::fmt::Debug>(xs: &[T]) -> String {
    let mut s = String::new();
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{x:?}");
    }
    s
}

fn join_usize(xs: &[usize]) -> String {
    let mut s = String::new();
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{x}");
    }
    s
}

impl ExperimentConfig {
    /// Parses a config document. `run_id`, `seed`, and `mode` are required;
    /// every other key has a default. Unknown keys are rejected by name.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(at) => &raw[..at],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                format_err(format!("config line {}: expected `key = value`, got `{raw}`", lineno + 1))
            })?;
            let k = k.trim().to_string();
            if map.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(format_err(format!("config key `{k}` appears twice")));
            }
        }
        Self::from_map(map)
    }

    fn from_map(mut map: BTreeMap<String, String>) -> Result<Self> {
        let mut take = |k: &str| map.remove(k);
        let required = |k: &str, v: Option<String>| {
            v.ok_or_else(|| format_err(format!("config is missing required key `{k}`")))
        };

        let run_id = required("run_id", take("run_id"))?;
        if run_id.is_empty()
            || !run_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(format_err(format!(
                "run_id must be non-empty [A-Za-z0-9_-], got `{run_id}`"
            )));
        }
        let seed: u64 = parse_num("seed", &required("seed", take("seed"))?)?;
        let mode: Mode = required("mode", take("mode"))?
            .parse()
            .map_err(Error::Core)?;

        let out_dir = PathBuf::from(take("out_dir").unwrap_or_else(|| "out".into()));
        let dataset = match take("dataset").as_deref().unwrap_or("synthetic") {
            "synthetic" => DatasetKind::Synthetic,
            "cifar10" => DatasetKind::Cifar10,
            other => {
                return Err(format_err(format!(
                    "dataset must be `synthetic` or `cifar10`, got `{other}`"
                )))
            }
        };
        let data_dir = take("data_dir").map(PathBuf::from);
        let data_seed = parse_num("data_seed", &take("data_seed").unwrap_or_else(|| "7777".into()))?;
        let classes = parse_num("classes", &take("classes").unwrap_or_else(|| "10".into()))?;
        let per_class = parse_num("per_class", &take("per_class").unwrap_or_else(|| "500".into()))?;
        let test_per_class =
            parse_num("test_per_class", &take("test_per_class").unwrap_or_else(|| "100".into()))?;
        let image_size =
            parse_num("image_size", &take("image_size").unwrap_or_else(|| "32".into()))?;

        let teacher_epochs =
            parse_num("teacher_epochs", &take("teacher_epochs").unwrap_or_else(|| "20".into()))?;
        let teacher_ckpt = take("teacher_ckpt").map(PathBuf::from);
        let teacher = NetShape {
            widths: parse_list(
                "teacher.widths",
                &take("teacher.widths").unwrap_or_else(|| "16,32,64".into()),
            )?,
            strides: parse_list(
                "teacher.strides",
                &take("teacher.strides").unwrap_or_else(|| "2,2,2".into()),
            )?,
            head_hidden: parse_num(
                "teacher.head_hidden",
                &take("teacher.head_hidden").unwrap_or_else(|| "64".into()),
            )?,
            embed_dim: parse_num(
                "teacher.embed_dim",
                &take("teacher.embed_dim").unwrap_or_else(|| "32".into()),
            )?,
        };
        let student = NetShape {
            widths: parse_list(
                "student.widths",
                &take("student.widths").unwrap_or_else(|| "8,16,32".into()),
            )?,
            strides: parse_list(
                "student.strides",
                &take("student.strides").unwrap_or_else(|| "2,2,2".into()),
            )?,
            head_hidden: parse_num(
                "student.head_hidden",
                &take("student.head_hidden").unwrap_or_else(|| "64".into()),
            )?,
            embed_dim: parse_num(
                "student.embed_dim",
                &take("student.embed_dim").unwrap_or_else(|| "32".into()),
            )?,
        };
        let adapter = match take("student.adapter").as_deref().unwrap_or("auto") {
            "auto" => AdapterChoice::Auto,
            "none" => AdapterChoice::Off,
            n => AdapterChoice::Width(parse_num("student.adapter", n)?),
        };

        let epochs = parse_num("epochs", &take("epochs").unwrap_or_else(|| "10".into()))?;
        let batch_size =
            parse_num("batch_size", &take("batch_size").unwrap_or_else(|| "64".into()))?;
        let lr = parse_num("lr", &take("lr").unwrap_or_else(|| "0.06".into()))?;
        let momentum = parse_num("momentum", &take("momentum").unwrap_or_else(|| "0.9".into()))?;
        let weight_decay =
            parse_num("weight_decay", &take("weight_decay").unwrap_or_else(|| "0.0001".into()))?;
        let tau = parse_num("tau", &take("tau").unwrap_or_else(|| "0.2".into()))?;
        let gamma = parse_num("gamma", &take("gamma").unwrap_or_else(|| "1.0".into()))?;
        let dis_weight =
            parse_num("dis_weight", &take("dis_weight").unwrap_or_else(|| "1.0".into()))?;
        let ema_momentum =
            parse_num("ema_momentum", &take("ema_momentum").unwrap_or_else(|| "0.999".into()))?;
        let bank_size = parse_num("bank_size", &take("bank_size").unwrap_or_else(|| "256".into()))?;
        // head-reuse trains with the transplanted head frozen by default;
        // the other modes never freeze
        let default_frozen = match mode {
            Mode::Retro => epochs,
            _ => 0,
        };
        let frozen_epochs = match take("frozen_epochs") {
            Some(v) => parse_num("frozen_epochs", &v)?,
            None => default_frozen,
        };
        let unfrozen_epochs = match take("unfrozen_epochs") {
            Some(v) => parse_num("unfrozen_epochs", &v)?,
            None => epochs - frozen_epochs.min(epochs),
        };
        let aug = AugConfig {
            crop_padding: parse_num(
                "aug.crop_padding",
                &take("aug.crop_padding").unwrap_or_else(|| "4".into()),
            )?,
            flip_prob: parse_num(
                "aug.flip_prob",
                &take("aug.flip_prob").unwrap_or_else(|| "0.5".into()),
            )?,
            brightness_jitter: parse_num(
                "aug.brightness_jitter",
                &take("aug.brightness_jitter").unwrap_or_else(|| "0.4".into()),
            )?,
            noise_std: parse_num(
                "aug.noise_std",
                &take("aug.noise_std").unwrap_or_else(|| "0.05".into()),
            )?,
        };

        let probe_epochs =
            parse_num("probe.epochs", &take("probe.epochs").unwrap_or_else(|| "30".into()))?;
        let probe_lr = parse_num("probe.lr", &take("probe.lr").unwrap_or_else(|| "3.0".into()))?;
        let probe_milestones = parse_f32_list(
            "probe.milestones",
            &take("probe.milestones").unwrap_or_else(|| "0.6,0.8".into()),
        )?;
        let probe_drop_factor = parse_num(
            "probe.drop_factor",
            &take("probe.drop_factor").unwrap_or_else(|| "10.0".into()),
        )?;
        let probe_batch_size = parse_num(
            "probe.batch_size",
            &take("probe.batch_size").unwrap_or_else(|| "64".into()),
        )?;
        let probe_momentum =
            parse_num("probe.momentum", &take("probe.momentum").unwrap_or_else(|| "0.9".into()))?;
        let probe_weight_decay = parse_num(
            "probe.weight_decay",
            &take("probe.weight_decay").unwrap_or_else(|| "0.0".into()),
        )?;
        let knn_k = parse_num("knn_k", &take("knn_k").unwrap_or_else(|| "20".into()))?;
        let finetune_fraction = parse_num(
            "finetune.fraction",
            &take("finetune.fraction").unwrap_or_else(|| "0.1".into()),
        )?;
        let finetune_epochs = parse_num(
            "finetune.epochs",
            &take("finetune.epochs").unwrap_or_else(|| "20".into()),
        )?;
        let finetune_lr =
            parse_num("finetune.lr", &take("finetune.lr").unwrap_or_else(|| "0.1".into()))?;

        if !map.is_empty() {
            let unknown: Vec<&str> = map.keys().map(|s| s.as_str()).collect();
            return Err(format_err(format!("unknown config keys: {unknown:?}")));
        }

        let cfg = ExperimentConfig {
            run_id,
            out_dir,
            seed,
            mode,
            dataset,
            data_dir,
            data_seed,
            classes,
            per_class,
            test_per_class,
            image_size,
            teacher_epochs,
            teacher_ckpt,
            teacher,
            student,
            adapter,
            epochs,
            batch_size,
            lr,
            momentum,
            weight_decay,
            tau,
            gamma,
            dis_weight,
            ema_momentum,
            bank_size,
            frozen_epochs,
            unfrozen_epochs,
            aug,
            probe_epochs,
            probe_lr,
            probe_milestones,
            probe_drop_factor,
            probe_batch_size,
            probe_momentum,
            probe_weight_decay,
            knn_k,
            finetune_fraction,
            finetune_epochs,
            finetune_lr,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.dataset == DatasetKind::Cifar10 && self.data_dir.is_none() {
            return Err(format_err("dataset = cifar10 requires data_dir"));
        }
        if self.knn_k == 0 {
            return Err(format_err("knn_k must be at least 1"));
        }
        if !(self.finetune_fraction > 0.0 && self.finetune_fraction <= 1.0) {
            return Err(format_err(format!(
                "finetune.fraction must be in (0,1], got {}",
                self.finetune_fraction
            )));
        }
        self.train_config().validate().map_err(Error::Core)?;
        self.probe_config().validate().map_err(Error::Core)?;
        Ok(())
    }

    /// Canonical serialization: every key once, fixed order, round-trip
    /// float formatting. `parse(to_text(c)) == c` for any valid `c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("run_id", self.run_id.clone());
        kv("out_dir", self.out_dir.display().to_string());
        kv("seed", self.seed.to_string());
        kv("mode", self.mode.to_string());
        kv("dataset", self.dataset.as_str().to_string());
        if let Some(d) = &self.data_dir {
            kv("data_dir", d.display().to_string());
        }
        kv("data_seed", self.data_seed.to_string());
        kv("classes", self.classes.to_string());
        kv("per_class", self.per_class.to_string());
        kv("test_per_class", self.test_per_class.to_string());
        kv("image_size", self.image_size.to_string());
        kv("teacher_epochs", self.teacher_epochs.to_string());
        if let Some(p) = &self.teacher_ckpt {
            kv("teacher_ckpt", p.display().to_string());
        }
        kv("teacher.widths", join_usize(&self.teacher.widths));
        kv("teacher.strides", join_usize(&self.teacher.strides));
        kv("teacher.head_hidden", self.teacher.head_hidden.to_string());
        kv("teacher.embed_dim", self.teacher.embed_dim.to_string());
        kv("student.widths", join_usize(&self.student.widths));
        kv("student.strides", join_usize(&self.student.strides));
        kv(
            "student.adapter",
            match self.adapter {
                AdapterChoice::Auto => "auto".to_string(),
                AdapterChoice::Off => "none".to_string(),
                AdapterChoice::Width(n) => n.to_string(),
            },
        );
        kv("student.head_hidden", self.student.head_hidden.to_string());
        kv("student.embed_dim", self.student.embed_dim.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", format!("{:?}", self.lr));
        kv("momentum", format!("{:?}", self.momentum));
        kv("weight_decay", format!("{:?}", self.weight_decay));
        kv("tau", format!("{:?}", self.tau));
        kv("gamma", format!("{:?}", self.gamma));
        kv("dis_weight", format!("{:?}", self.dis_weight));
        kv("ema_momentum", format!("{:?}", self.ema_momentum));
        kv("bank_size", self.bank_size.to_string());
        kv("frozen_epochs", self.frozen_epochs.to_string());
        kv("unfrozen_epochs", self.unfrozen_epochs.to_string());
        kv("aug.crop_padding", self.aug.crop_padding.to_string());
        kv("aug.flip_prob", format!("{:?}", self.aug.flip_prob));
        kv("aug.brightness_jitter", format!("{:?}", self.aug.brightness_jitter));
        kv("aug.noise_std", format!("{:?}", self.aug.noise_std));
        kv("probe.epochs", self.probe_epochs.to_string());
        kv("probe.lr", format!("{:?}", self.probe_lr));
        kv("probe.milestones", join(&self.probe_milestones));
        kv("probe.drop_factor", format!("{:?}", self.probe_drop_factor));
        kv("probe.batch_size", self.probe_batch_size.to_string());
        kv("probe.momentum", format!("{:?}", self.probe_momentum));
        kv("probe.weight_decay", format!("{:?}", self.probe_weight_decay));
        kv("knn_k", self.knn_k.to_string());
        kv("finetune.fraction", format!("{:?}", self.finetune_fraction));
        kv("finetune.epochs", self.finetune_epochs.to_string());
        kv("finetune.lr", format!("{:?}", self.finetune_lr));
        s
    }

    /// SHA-256 of the canonical serialization, hex-encoded. Written next to
    /// every run's outputs so a result can be traced to its exact inputs.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        let mut hex = String::with_capacity(64);
        for b in digest {
            let _ = write!(hex, "{b:02x}");
        }
        hex
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.mode,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            tau: self.tau,
            gamma: self.gamma,
            dis_weight: self.dis_weight,
            ema_momentum: self.ema_momentum,
            bank_size: self.bank_size,
            freeze: FreezeSchedule {
                frozen_epochs: self.frozen_epochs,
                unfrozen_epochs: self.unfrozen_epochs,
            },
            aug: self.aug.clone(),
            seed: self.seed,
        }
    }

    /// Teacher pretraining is plain contrastive learning; it shares the
    /// optimizer and augmentation knobs but runs its own epoch budget.
    pub fn teacher_train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: Mode::BaselineMoco,
            epochs: self.teacher_epochs,
            freeze: FreezeSchedule::never_frozen(self.teacher_epochs),
            ..self.train_config()
        }
    }

    pub fn teacher_arch(&self) -> ArchConfig {
        ArchConfig {
            encoder: EncoderConfig {
                in_channels: 3,
                widths: self.teacher.widths.clone(),
                strides: self.teacher.strides.clone(),
            },
            adapter_to: None,
            head_hidden: self.teacher.head_hidden,
            embed_dim: self.teacher.embed_dim,
        }
    }

    pub fn student_arch(&self) -> ArchConfig {
        let teacher_rep = *self.teacher.widths.last().unwrap_or(&0);
        ArchConfig {
            encoder: EncoderConfig {
                in_channels: 3,
                widths: self.student.widths.clone(),
                strides: self.student.strides.clone(),
            },
            adapter_to: match self.adapter {
                AdapterChoice::Auto => Some(teacher_rep),
                AdapterChoice::Off => None,
                AdapterChoice::Width(n) => Some(n),
            },
            head_hidden: self.student.head_hidden,
            embed_dim: self.student.embed_dim,
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            epochs: self.probe_epochs,
            lr: self.probe_lr,
            milestones: self.probe_milestones.clone(),
            drop_factor: self.probe_drop_factor,
            batch_size: self.probe_batch_size,
            momentum: self.probe_momentum,
            weight_decay: self.probe_weight_decay,
            seed: self.seed,
        }
    }

    pub fn finetune_config(&self) -> ProbeConfig {
        ProbeConfig {
            epochs: self.finetune_epochs,
            lr: self.finetune_lr,
            ..self.probe_config()
        }
    }

    /// Default teacher checkpoint location under the experiment directory.
    pub fn teacher_ckpt_path(&self) -> PathBuf {
        self.teacher_ckpt
            .clone()
            .unwrap_or_else(|| self.out_dir.join("teacher").join("teacher.rtro"))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.run_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        "run_id = exp1\nseed = 3\nmode = retro\n"
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::parse(minimal()).unwrap();
        assert_eq!(cfg.run_id, "exp1");
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.mode, Mode::Retro);
        assert_eq!(cfg.classes, 10);
        assert_eq!(cfg.epochs, 10);
        assert_eq!(cfg.frozen_epochs, 10, "head reuse defaults to fully frozen");
        assert_eq!(cfg.unfrozen_epochs, 0);
        assert_eq!(cfg.teacher.widths, vec![16, 32, 64]);
        assert_eq!(cfg.student_arch().adapter_to, Some(64));
    }

    #[test]
    fn missing_required_keys_are_named() {
        let err = ExperimentConfig::parse("run_id = a\nseed = 1\n").unwrap_err();
        assert!(err.to_string().contains("mode"), "{err}");
        let err = ExperimentConfig::parse("run_id = a\nmode = disco\n").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let err =
            ExperimentConfig::parse("run_id = a\nseed = 1\nmode = disco\nbogus_key = 5\n")
                .unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
        let err = ExperimentConfig::parse("run_id = a\nseed = 1\nseed = 2\nmode = disco\n")
            .unwrap_err();
        assert!(err.to_string().contains("twice"), "{err}");
    }

    #[test]
    fn comments_and_order_do_not_matter() {
        let a = ExperimentConfig::parse("# experiment\nmode = disco # trailing\nseed = 1\nrun_id = r\n")
            .unwrap();
        let b = ExperimentConfig::parse("run_id = r\nseed = 1\nmode = disco\n").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn serialization_is_a_parse_fixed_point() {
        let text = "run_id = fp\nseed = 11\nmode = disco\nlr = 0.125\naug.noise_std = 0.07\n\
                    probe.milestones = 0.5,0.75\nteacher_ckpt = some/teacher.rtro\n\
                    student.adapter = none\nfrozen_epochs = 2\nunfrozen_epochs = 8\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let round = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(cfg, round);
        assert_eq!(cfg.to_text(), round.to_text());
        assert_eq!(cfg.fingerprint(), round.fingerprint());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = ExperimentConfig::parse(minimal()).unwrap();
        let mut b = a.clone();
        b.seed = 4;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn semantic_validation_runs_at_parse_time() {
        let err = ExperimentConfig::parse("run_id = a\nseed = 1\nmode = disco\ntau = 0.0\n")
            .unwrap_err();
        assert!(err.to_string().contains("tau"), "{err}");
        let err = ExperimentConfig::parse(
            "run_id = a\nseed = 1\nmode = disco\nfrozen_epochs = 3\nunfrozen_epochs = 3\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("freeze"), "{err}");
    }

    #[test]
    fn derived_training_configs_are_consistent() {
        let cfg = ExperimentConfig::parse(minimal()).unwrap();
        let t = cfg.teacher_train_config();
        assert_eq!(t.epochs, 20);
        assert_eq!(t.mode, Mode::BaselineMoco);
        t.validate().unwrap();
        let s = cfg.train_config();
        assert_eq!(s.epochs, 10);
        s.validate().unwrap();
        assert_eq!(cfg.teacher_arch().adapter_to, None);
    }
}
