//! Textual dataset descriptors:
//!
//! ```text
//! cifar10:<dir> | folder:<dir> | synth:<classes>x<per-class>x<hw>
//!   [@frac=<f>] [@split=<f>] [@classes=<i,j,…>]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{
    load_cifar10_binary, load_folder_dataset, stratified_split, subsample_indices, synth_dataset, LabeledDataset,
    Preprocess, Split, SYNTH_NOISE,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// A directory holding `data_batch_*.bin` and optionally
    /// `test_batch.bin`, or a single batch file.
    Cifar10(PathBuf),
    Folder(PathBuf),
    Synth {
        classes: usize,
        per_class: usize,
        hw: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSpec {
    pub source: DataSource,
    pub frac: Option<f64>,
    pub split: Option<f64>,
    pub classes: Option<Vec<usize>>,
}

impl FromStr for DataSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut parts = s.split('@');
        let head = parts.next().unwrap_or_default();
        let (kind, arg) = head.split_once(':').ok_or_else(|| format!("`{head}` lacks a `<kind>:` prefix"))?;
        let source = match kind {
            "cifar10" => DataSource::Cifar10(PathBuf::from(arg)),
            "folder" => DataSource::Folder(PathBuf::from(arg)),
            "synth" => {
                let nums: Vec<usize> = arg
                    .split('x')
                    .map(|p| p.parse::<usize>().map_err(|_| format!("synth size `{arg}` is not CxNxHW")))
                    .collect::<Result<_, _>>()?;
                match nums[..] {
                    [classes, per_class, hw] if classes >= 2 && per_class >= 1 && hw >= 1 => {
                        DataSource::Synth { classes, per_class, hw }
                    }
                    _ => return Err(format!("synth size `{arg}` is not CxNxHW with C ≥ 2")),
                }
            }
            _ => return Err(format!("unknown data kind `{kind}` (expected cifar10|folder|synth)")),
        };
        if matches!(&source, DataSource::Cifar10(p) | DataSource::Folder(p) if p.as_os_str().is_empty()) {
            return Err(format!("`{kind}:` needs a path"));
        }
        let mut spec = DataSpec { source, frac: None, split: None, classes: None };
        for opt in parts {
            let (k, v) = opt.split_once('=').ok_or_else(|| format!("option `@{opt}` lacks `=`"))?;
            let frac = || v.parse::<f64>().map_err(|_| format!("`@{k}` value `{v}` is not a number"));
            match k {
                "frac" => {
                    let f = frac()?;
                    if !(f > 0.0 && f <= 1.0) {
                        return Err(format!("@frac={v} outside (0, 1]"));
                    }
                    spec.frac = Some(f);
                }
                "split" => {
                    let f = frac()?;
                    if !(f > 0.0 && f < 1.0) {
                        return Err(format!("@split={v} outside (0, 1)"));
                    }
                    spec.split = Some(f);
                }
                "classes" => {
                    let list = v
                        .split(',')
                        .map(|c| c.trim().parse::<usize>().map_err(|_| format!("@classes entry `{c}` is not an index")))
                        .collect::<Result<Vec<_>, _>>()?;
                    spec.classes = Some(list);
                }
                _ => return Err(format!("unknown data option `@{k}`")),
            }
        }
        Ok(spec)
    }
}

impl fmt::Display for DataSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            DataSource::Cifar10(p) => write!(f, "cifar10:{}", p.display())?,
            DataSource::Folder(p) => write!(f, "folder:{}", p.display())?,
            DataSource::Synth { classes, per_class, hw } => write!(f, "synth:{classes}x{per_class}x{hw}")?,
        }
        if let Some(v) = self.frac {
            write!(f, "@frac={v}")?;
        }
        if let Some(v) = self.split {
            write!(f, "@split={v}")?;
        }
        if let Some(c) = &self.classes {
            let list: Vec<String> = c.iter().map(usize::to_string).collect();
            write!(f, "@classes={}", list.join(","))?;
        }
        Ok(())
    }
}

/// Loaded data after class filtering, splitting, subsampling and
/// preprocessing. `split` indexes into the loaded (unsplit) dataset.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub split: Split,
}

fn cifar_files(path: &Path) -> Result<(Vec<PathBuf>, Vec<PathBuf>)> {
    if path.is_file() {
        return Ok((vec![path.to_path_buf()], vec![]));
    }
    let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(path, e))?.path();
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name.starts_with("data_batch_") && name.ends_with(".bin") {
            train.push(p);
        } else if name == "test_batch.bin" {
            test.push(p);
        }
    }
    train.sort();
    if train.is_empty() {
        return Err(Error::format(path, "no data_batch_*.bin files"));
    }
    Ok((train, test))
}

impl DataSpec {
    /// Loads the raw dataset; for CIFAR-10 directories with a test batch
    /// the official train/test partition is returned too.
    pub fn load(&self, seed: u64, resize: Option<(usize, usize)>) -> Result<(LabeledDataset, Option<Split>)> {
        let (mut ds, mut official) = match &self.source {
            DataSource::Synth { classes, per_class, hw } => {
                (synth_dataset(*classes, *per_class, *hw, SYNTH_NOISE, seed)?, None)
            }
            DataSource::Folder(root) => (load_folder_dataset(root, resize)?, None),
            DataSource::Cifar10(path) => {
                let (train, test) = cifar_files(path)?;
                let all: Vec<PathBuf> = train.iter().chain(&test).cloned().collect();
                let ds = load_cifar10_binary(&all)?;
                let n_train = train
                    .iter()
                    .map(|p| std::fs::metadata(p).map(|m| m.len() as usize))
                    .sum::<std::io::Result<usize>>();
                let n_train = n_train.map_err(|e| Error::io(path, e))? / super::CIFAR_RECORD_BYTES;
                let split = (!test.is_empty())
                    .then(|| Split { train: (0..n_train).collect(), test: (n_train..ds.len()).collect() });
                (ds, split)
            }
        };
        if let Some(classes) = &self.classes {
            let keep_before: Vec<usize> = (0..ds.len()).filter(|&i| classes.contains(&ds.labels[i])).collect();
            ds = ds.select_classes(classes)?;
            if let Some(s) = &official {
                let remap = |set: &[usize]| -> Vec<usize> {
                    set.iter().filter_map(|i| keep_before.binary_search(i).ok()).collect()
                };
                official = Some(Split { train: remap(&s.train), test: remap(&s.test) });
            }
        }
        Ok((ds, official))
    }

    /// Train and held-out portions for training runs. Without `@split` the
    /// official partition is used when one exists, otherwise an 8:2
    /// stratified split. `@frac` subsamples the training portion only.
    pub fn prepare_training(&self, seed: u64, pre: &Preprocess) -> Result<PreparedData> {
        let (ds, official) = self.load(seed, pre.resize)?;
        let split = match (self.split, official) {
            (Some(f), _) => stratified_split(&ds, f, seed)?,
            (None, Some(s)) => s,
            (None, None) => stratified_split(&ds, 0.8, seed)?,
        };
        let mut train_idx = split.train.clone();
        if let Some(f) = self.frac {
            let train = ds.subset(&train_idx)?;
            train_idx = subsample_indices(&train, f, seed)?.into_iter().map(|i| train_idx[i]).collect();
        }
        let split = Split { train: train_idx, test: split.test };
        let (train, test) = split.apply(&ds)?;
        Ok(PreparedData { train: train.preprocess(pre)?, test: test.preprocess(pre)?, split })
    }

    /// The set to evaluate or embed: the held-out portion when `@split` is
    /// given, otherwise the official test partition or the whole dataset;
    /// `@frac` then subsamples it.
    pub fn prepare_eval(&self, seed: u64, pre: &Preprocess) -> Result<LabeledDataset> {
        let (ds, official) = self.load(seed, pre.resize)?;
        let mut idx: Vec<usize> = match (self.split, official) {
            (Some(f), _) => stratified_split(&ds, f, seed)?.test,
            (None, Some(s)) => s.test,
            (None, None) => (0..ds.len()).collect(),
        };
        if let Some(f) = self.frac {
            let sub = ds.subset(&idx)?;
            idx = subsample_indices(&sub, f, seed)?.into_iter().map(|i| idx[i]).collect();
        }
        ds.subset(&idx)?.preprocess(pre)
    }
}
