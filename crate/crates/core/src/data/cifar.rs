use std::path::{Path, PathBuf};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One label byte followed by 32×32 R, G and B planes.
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;

pub const CIFAR10_CLASSES: [&str; 10] =
    ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"];

fn parse_records(bytes: &[u8], path: &Path, images: &mut Vec<f32>, labels: &mut Vec<usize>) -> Result<()> {
    let whole = bytes.len() - bytes.len() % CIFAR_RECORD_BYTES;
    if whole != bytes.len() {
        return Err(Error::Truncated { path: path.to_path_buf(), offset: whole as u64 });
    }
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        if rec[0] > 9 {
            return Err(Error::format(path, format!("label byte {} > 9 at offset {}", rec[0], r * CIFAR_RECORD_BYTES)));
        }
        labels.push(rec[0] as usize);
        images.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok(())
}

/// Reads whole files of 3073-byte records, in the order given.
pub fn load_cifar10_binary(paths: &[PathBuf]) -> Result<LabeledDataset> {
    let (mut images, mut labels) = (Vec::new(), Vec::new());
    for path in paths {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        parse_records(&bytes, path, &mut images, &mut labels)?;
    }
    if labels.is_empty() {
        return Err(Error::invalid("load_cifar10_binary", "no records"));
    }
    let n = labels.len();
    let names = CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect();
    let prov = paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
    LabeledDataset::new(Tensor::new(&[n, 3, 32, 32], images)?, labels, names, format!("cifar10:{prov}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_file_reports_offset() {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let bytes = vec![0u8; CIFAR_RECORD_BYTES + 10];
        let err = parse_records(&bytes, Path::new("x.bin"), &mut images, &mut labels).unwrap_err();
        assert!(err.to_string().contains("3073"), "{err}");
    }

    #[test]
    fn bad_label_rejected() {
        let mut bytes = vec![0u8; 2 * CIFAR_RECORD_BYTES];
        bytes[CIFAR_RECORD_BYTES] = 10;
        let err = parse_records(&bytes, Path::new("x.bin"), &mut Vec::new(), &mut Vec::new()).unwrap_err();
        assert!(err.to_string().contains("label byte 10"), "{err}");
    }
}
