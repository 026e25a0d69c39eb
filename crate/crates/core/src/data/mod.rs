//! Datasets: CIFAR-10 binary batches, folder-per-class P6 pixmaps and a
//! procedural generator, plus splitting, resizing and normalization.

mod cifar;
mod folder;
mod image;
mod spec;
mod split;
mod synth;

pub use cifar::{load_cifar10_binary, CIFAR10_CLASSES, CIFAR_RECORD_BYTES};
pub use folder::{load_folder_dataset, read_ppm, write_ppm};
pub use image::{normalize, resize_bicubic, Preprocess, CIFAR_MEAN, CIFAR_STD};
pub use spec::{DataSource, DataSpec, PreparedData};
pub use split::{split_manifest, stratified_split, subsample_fraction, subsample_indices, Split};
pub use synth::{synth_dataset, SYNTH_NOISE};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images (N×3×H×W, values in [0, 1] before normalization) with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub provenance: String,
}

impl LabeledDataset {
    pub fn new(
        images: Tensor<f32>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let s = images.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::shape("dataset", format!("images must be N×3×H×W, got {s:?}")));
        }
        if s[0] != labels.len() {
            return Err(Error::shape("dataset", format!("{} images but {} labels", s[0], labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::invalid("dataset", format!("label {bad} with {} classes", class_names.len())));
        }
        Ok(Self { images, labels, class_names, provenance: provenance.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// (height, width) of every image.
    pub fn image_hw(&self) -> (usize, usize) {
        let s = self.images.shape();
        (s[2], s[3])
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes()];
        self.labels.iter().for_each(|&l| c[l] += 1);
        c
    }

    /// Samples at `indices`, in that order; class names are kept.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            images: self.images.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
        })
    }

    /// Keeps only the listed classes, relabelled 0.. in the given order.
    pub fn select_classes(&self, classes: &[usize]) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::invalid("select_classes", "need at least two classes"));
        }
        if let Some(&bad) = classes.iter().find(|&&c| c >= self.num_classes()) {
            return Err(Error::invalid("select_classes", format!("class {bad} not in dataset")));
        }
        let keep: Vec<usize> = (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect();
        let mut ds = self.subset(&keep)?;
        ds.labels = ds.labels.iter().map(|l| classes.iter().position(|c| c == l).expect("filtered")).collect();
        ds.class_names = classes.iter().map(|&c| self.class_names[c].clone()).collect();
        Ok(ds)
    }

    /// One image as a 3×H×W tensor.
    pub fn image(&self, i: usize) -> Tensor<f32> {
        let (h, w) = self.image_hw();
        let n = 3 * h * w;
        Tensor::new(&[3, h, w], self.images.data()[i * n..(i + 1) * n].to_vec()).expect("consistent image")
    }

    /// Applies resizing and normalization to every image.
    pub fn preprocess(&self, pre: &Preprocess) -> Result<Self> {
        pre.validate()?;
        let (h, w) = pre.resize.unwrap_or(self.image_hw());
        let mut data = Vec::with_capacity(self.len() * 3 * h * w);
        for i in 0..self.len() {
            let img = resize_bicubic(&self.image(i), h, w)?;
            data.extend_from_slice(normalize(&img, pre)?.data());
        }
        Ok(Self {
            images: Tensor::new(&[self.len(), 3, h, w], data)?,
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
        })
    }
}
