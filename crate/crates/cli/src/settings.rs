//! Layered run settings: command defaults, then a `key = value` file,
//! then flags. The merged document is echoed to `run.cfg`.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use fusionnet::config::KvDoc;
use fusionnet::data::{DataSource, DataSpec, Preprocess};
use fusionnet::distill::{DistillConfig, DISTILL_KEYS};
use fusionnet::model::{FusionNetConfig, Preset, CONFIG_KEYS};
use fusionnet::optim::{TrainConfig, TRAIN_KEYS};
use fusionnet::{Error, Result};

const RUN_KEYS: &[&str] =
    &["command", "preset", "data", "out", "ckpt", "teacher_a", "teacher_b", "train_teachers", "perplexity", "iters"];

pub struct Settings {
    pub doc: KvDoc,
    file: KvDoc,
    preset_flag: bool,
}

impl Settings {
    /// Reads the optional config file and rejects keys no command knows.
    pub fn new(command: &str, config: Option<&Path>) -> Result<Self> {
        let file = match config {
            Some(p) => {
                if !p.is_file() {
                    return Err(Error::config("config", format!("{} does not exist", p.display())));
                }
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io { path: p.to_path_buf(), source: e })?;
                let doc = KvDoc::parse(&text)?;
                let known: Vec<&str> =
                    RUN_KEYS.iter().chain(CONFIG_KEYS).chain(TRAIN_KEYS).chain(DISTILL_KEYS).copied().collect();
                doc.reject_unknown(&known)?;
                doc
            }
            None => KvDoc::new(),
        };
        let mut doc = KvDoc::new();
        doc.set("command", command);
        Ok(Self { doc, file, preset_flag: false })
    }

    /// Sets `key` from the flag, else the file, else `default`.
    pub fn layer<V: Display>(&mut self, key: &str, flag: Option<V>, default: Option<&str>) {
        if let Some(v) = flag {
            self.doc.set(key, v);
        } else if let Some(v) = self.file.get(key) {
            self.doc.set(key, v.to_string());
        } else if let Some(d) = default {
            self.doc.set(key, d);
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.doc.get(key)
    }

    pub fn preset(&mut self, flag: Option<Preset>, default: Preset) -> Result<Preset> {
        self.preset_flag = flag.is_some();
        self.layer("preset", flag, Some(&default.to_string()));
        self.doc.parse_req("preset")
    }

    /// Preset dimensions, overlaid with model keys from the file unless the
    /// preset was chosen on the command line.
    pub fn model(&mut self, preset: Preset, flag_overrides: &[(&str, Option<String>)]) -> Result<FusionNetConfig> {
        let mut m = KvDoc::new();
        FusionNetConfig::preset(preset).to_kv(&mut m);
        for &key in CONFIG_KEYS {
            let from_file = if self.preset_flag { None } else { self.file.get(key) };
            let flag = flag_overrides.iter().find(|(k, _)| *k == key).and_then(|(_, v)| v.clone());
            if let Some(v) = flag.as_deref().or(from_file) {
                m.set(key, v);
            }
        }
        let cfg = FusionNetConfig::from_kv(&m)?;
        cfg.to_kv(&mut self.doc);
        Ok(cfg)
    }

    pub fn set_classes(&mut self, cfg: &mut FusionNetConfig, classes: usize) -> Result<()> {
        cfg.num_classes = classes;
        cfg.validate()?;
        self.doc.set("num_classes", classes);
        Ok(())
    }

    pub fn train(&mut self, defaults: TrainConfig, flags: &[(&str, Option<String>)]) -> Result<TrainConfig> {
        let mut d = KvDoc::new();
        defaults.to_kv(&mut d);
        for &key in TRAIN_KEYS {
            let flag = flags.iter().find(|(k, _)| *k == key).and_then(|(_, v)| v.clone());
            self.layer(key, flag, d.get(key));
        }
        TrainConfig::from_kv(&self.doc)
    }

    pub fn distill(&mut self, flags: &[(&str, Option<String>)]) -> Result<DistillConfig> {
        let mut d = KvDoc::new();
        DistillConfig::default().to_kv(&mut d);
        for &key in DISTILL_KEYS {
            let flag = flags.iter().find(|(k, _)| *k == key).and_then(|(_, v)| v.clone());
            self.layer(key, flag, d.get(key));
        }
        DistillConfig::from_kv(&self.doc)
    }

    /// Parses `data` and checks that referenced paths exist.
    pub fn data(&mut self, flag: Option<String>) -> Result<DataSpec> {
        self.layer("data", flag, None);
        let text = self.doc.require("data")?;
        let spec: DataSpec = text.parse().map_err(|e: String| Error::config("data", e))?;
        if let DataSource::Cifar10(p) | DataSource::Folder(p) = &spec.source {
            if !p.exists() {
                return Err(Error::config("data", format!("{} does not exist", p.display())));
            }
        }
        Ok(spec)
    }

    /// An existing file named by `key`.
    pub fn existing_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        self.layer(key, flag.map(|p| p.display().to_string()), None);
        match self.doc.get(key) {
            None => Ok(None),
            Some(p) => {
                let p = PathBuf::from(p);
                if !p.is_file() {
                    return Err(Error::config(key, format!("{} does not exist", p.display())));
                }
                Ok(Some(p))
            }
        }
    }

    pub fn out_dir(&mut self, flag: Option<PathBuf>, command: &str) -> Result<PathBuf> {
        let default = format!("runs/{command}");
        self.layer("out", flag.map(|p| p.display().to_string()), Some(&default));
        let dir = PathBuf::from(self.doc.require("out")?);
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        Ok(dir)
    }

    pub fn write_run_cfg(&self, dir: &Path) -> Result<()> {
        let text = format!("# fusionnet run configuration; replay with --config\n{}", self.doc.render());
        write(&dir.join("run.cfg"), &text)
    }
}

/// CIFAR normalization with resizing to the model input.
pub fn preprocess(cfg: &FusionNetConfig) -> Preprocess {
    Preprocess { resize: Some((cfg.input_hw, cfg.input_hw)), ..Preprocess::default() }
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}
