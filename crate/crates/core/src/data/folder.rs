use std::path::{Path, PathBuf};

use super::{resize_bicubic, LabeledDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Skips whitespace and `#` comments, then reads one ASCII integer token.
fn header_int(bytes: &[u8], pos: &mut usize, path: &Path, what: &str) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(path, format!("malformed P6 header: bad {what}")))
}

/// Decodes a binary P6 pixmap with maxval 255 into a 3×H×W tensor in [0, 1].
pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if !bytes.starts_with(b"P6") {
        return Err(Error::format(path, "malformed P6 header: missing magic"));
    }
    let mut pos = 2;
    let w = header_int(&bytes, &mut pos, path, "width")?;
    let h = header_int(&bytes, &mut pos, path, "height")?;
    let maxval = header_int(&bytes, &mut pos, path, "maxval")?;
    if w == 0 || h == 0 {
        return Err(Error::format(path, "malformed P6 header: zero extent"));
    }
    if maxval != 255 {
        return Err(Error::format(path, format!("only 8-bit pixmaps are supported, maxval {maxval}")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(path, "malformed P6 header: no separator before pixels"));
    }
    pos += 1;
    let need = 3 * w * h;
    let pixels = &bytes[pos..];
    if pixels.len() < need {
        return Err(Error::Truncated { path: path.to_path_buf(), offset: bytes.len() as u64 });
    }
    if pixels.len() > need {
        return Err(Error::format(path, format!("{} trailing bytes", pixels.len() - need)));
    }
    let plane = h * w;
    Ok(Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / plane, i % plane);
        pixels[p * 3 + c] as f32 / 255.0
    }))
}

/// Encodes a 3×H×W tensor in [0, 1] as a P6 pixmap.
pub fn write_ppm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape("write_ppm", format!("expected 3×H×W, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for p in 0..h * w {
        for c in 0..3 {
            let v = image.data()[c * h * w + p];
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    v.sort();
    Ok(v)
}

/// One subdirectory per class, labelled in lexicographic name order; every
/// `.ppm` file inside is a sample. Images must share a size unless `resize`
/// is given, in which case each is resized on load.
pub fn load_folder_dataset(root: &Path, resize: Option<(usize, usize)>) -> Result<LabeledDataset> {
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.len() < 2 {
        return Err(Error::format(root, format!("found {} class directories, need at least 2", class_dirs.len())));
    }
    let mut names = Vec::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut hw: Option<(usize, usize)> = resize;
    for (label, dir) in class_dirs.iter().enumerate() {
        let files: Vec<PathBuf> = sorted_entries(dir)?
            .into_iter()
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")))
            .collect();
        if files.is_empty() {
            return Err(Error::format(dir, "class directory has no .ppm images"));
        }
        for f in &files {
            let mut img = read_ppm(f)?;
            let this = (img.shape()[1], img.shape()[2]);
            match (resize, hw) {
                (Some((h, w)), _) => img = resize_bicubic(&img, h, w)?,
                (None, Some(want)) if want != this => {
                    return Err(Error::format(
                        f,
                        format!(
                            "image is {}×{} but earlier images are {}×{}; configure a resize",
                            this.0, this.1, want.0, want.1
                        ),
                    ));
                }
                _ => hw = Some(this),
            }
            data.extend_from_slice(img.data());
            labels.push(label);
        }
        names.push(dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    }
    let (h, w) = hw.expect("at least one image");
    LabeledDataset::new(
        Tensor::new(&[labels.len(), 3, h, w], data)?,
        labels,
        names,
        format!("folder:{}", root.display()),
    )
}
