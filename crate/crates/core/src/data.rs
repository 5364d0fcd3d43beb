//! Labeled image sets: synthetic Gaussian blobs and `root/<class>/<image>` trees.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Shape, Tensor};

/// Images are stored NCHW in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let s = images.shape();
        if s.n != labels.len() || s.c != 3 {
            return Err(dim_err!("{} labels for images {s}", labels.len()));
        }
        if s.n == 0 {
            return Err(Error::EmptyDataset("no samples".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(dim_err!("label {l} out of range for {classes} classes"));
        }
        let class_names = (0..classes).map(|c| c.to_string()).collect();
        Ok(Dataset { images, labels, classes, class_names })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn resolution(&self) -> (usize, usize) {
        let s = self.images.shape();
        (s.h, s.w)
    }

    /// Gathers the listed samples into one batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let s = self.images.shape();
        let mut data = Vec::with_capacity(indices.len() * s.item());
        for &i in indices {
            data.extend_from_slice(self.images.item(i));
        }
        let x = Tensor::from_vec(s.with_n(indices.len()), data).expect("sizes match");
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Same images with labels permuted by a seeded shuffle.
    pub fn with_shuffled_labels(&self, seed: u64) -> Dataset {
        let mut labels = self.labels.clone();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Dataset { labels, ..self.clone() }
    }

    /// Nearest-neighbor resize of every image.
    pub fn resized(&self, h: usize, w: usize) -> Dataset {
        let s = self.images.shape();
        let images = Tensor::from_fn(Shape::new(s.n, 3, h, w), |n, c, y, x| self.images.at(n, c, y * s.h / h, x * s.w / w));
        Dataset { images, ..self.clone() }
    }
}

/// Each class is a colored Gaussian blob at its own position on a ring,
/// with jittered centers and additive pixel noise.
pub fn synthetic_blobs(classes: usize, per_class: usize, h: usize, w: usize, seed: u64) -> Result<Dataset> {
    if classes == 0 || per_class == 0 {
        return Err(Error::EmptyDataset("synthetic set needs classes and samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.1).expect("valid std");
    let (hf, wf) = (h as f64, w as f64);
    let sigma = 0.12 * hf.min(wf);
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * 3 * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % classes;
        let angle = std::f64::consts::TAU * k as f64 / classes as f64;
        let cy = hf / 2.0 + 0.3 * hf * angle.sin() + rng.random_range(-0.04..0.04) * hf;
        let cx = wf / 2.0 + 0.3 * wf * angle.cos() + rng.random_range(-0.04..0.04) * wf;
        let color = [(k % 3) as f64 / 2.0, ((k / 3) % 3) as f64 / 2.0, 1.0 - (k % 2) as f64];
        for col in color {
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                    let v = -0.5 + (0.5 + col) * (-d2 / (2.0 * sigma * sigma)).exp() + noise.sample(&mut rng);
                    data.push(v.clamp(-1.0, 1.0) as f32);
                }
            }
        }
        labels.push(k);
    }
    Dataset::new(Tensor::from_vec(Shape::new(n, 3, h, w), data)?, labels, classes)
}

/// Two classes split by the sign of a fixed random projection of the pixels,
/// with a margin.
pub fn linearly_separable(n: usize, h: usize, w: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset("synthetic set needs samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = 3 * h * w;
    let normal = Normal::new(0.0, 1.0).expect("valid std");
    let dir: Vec<f64> = (0..len).map(|_| normal.sample(&mut rng)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut data = Vec::with_capacity(n * len);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let sign = if label == 1 { 1.0 } else { -1.0 };
        let x: Vec<f64> = (0..len).map(|_| 0.3 * normal.sample(&mut rng)).collect();
        let proj = x.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>() / norm;
        let shift = sign * 0.5 - proj;
        data.extend(x.iter().zip(&dir).map(|(a, d)| (a + shift * d / norm * (len as f64).sqrt() * 0.1) as f32));
        labels.push(label);
    }
    Dataset::new(Tensor::from_vec(Shape::new(n, 3, h, w), data)?, labels, 2)
}

/// Decodes an 8-bit image and nearest-neighbor resizes it to `h×w`.
/// Returns `(1, 3, h, w)` in `[-1, 1]` and whether a resize happened.
pub fn load_image(path: &Path, h: usize, w: usize) -> Result<(Tensor<f32>, bool)> {
    let img = image::open(path)
        .map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?
        .to_rgb8();
    let (iw, ih) = (img.width() as usize, img.height() as usize);
    if iw == 0 || ih == 0 {
        return Err(Error::Image { path: path.to_path_buf(), message: "empty image".into() });
    }
    let t = Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        let p = img.get_pixel((x * iw / w) as u32, (y * ih / h) as u32);
        p[c] as f32 / 127.5 - 1.0
    });
    Ok((t, (ih, iw) != (h, w)))
}

/// Reads `root/<class>/<image>`; classes are the sorted subdirectory names.
pub fn from_dir(root: &Path, h: usize, w: usize) -> Result<Dataset> {
    let mut class_dirs: Vec<_> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    class_dirs.sort();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut names = Vec::new();
    for (k, dir) in class_dirs.iter().enumerate() {
        names.push(dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        let mut files: Vec<_> = std::fs::read_dir(dir)?.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_file()).collect();
        files.sort();
        for f in files {
            let (t, _) = load_image(&f, h, w)?;
            data.extend(t.into_vec());
            labels.push(k);
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset(format!("no images under {}", root.display())));
    }
    let n = labels.len();
    let mut ds = Dataset::new(Tensor::from_vec(Shape::new(n, 3, h, w), data)?, labels, names.len())?;
    ds.class_names = names;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_balanced_and_bounded() {
        let d = synthetic_blobs(10, 3, 16, 16, 1).unwrap();
        assert_eq!(d.len(), 30);
        for k in 0..10 {
            assert_eq!(d.labels.iter().filter(|&&l| l == k).count(), 3);
        }
        assert!(d.images.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(d, synthetic_blobs(10, 3, 16, 16, 1).unwrap());
    }

    #[test]
    fn shuffled_labels_keep_counts() {
        let d = synthetic_blobs(4, 5, 8, 8, 0).unwrap();
        let s = d.with_shuffled_labels(3);
        let mut a = d.labels.clone();
        let mut b = s.labels.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_ne!(d.labels, s.labels);
    }

    #[test]
    fn batch_gathers_rows() {
        let d = synthetic_blobs(2, 2, 4, 4, 0).unwrap();
        let (x, y) = d.batch(&[3, 0]);
        assert_eq!(x.item(0), d.images.item(3));
        assert_eq!(y, vec![d.labels[3], d.labels[0]]);
    }

    #[test]
    fn directory_ingestion() {
        let dir = tempfile::tempdir().unwrap();
        for (name, px) in [("cat", [255u8, 0, 0]), ("dog", [0, 0, 255])] {
            std::fs::create_dir(dir.path().join(name)).unwrap();
            for i in 0..2 {
                let img = image::RgbImage::from_pixel(5, 7, image::Rgb(px));
                img.save(dir.path().join(name).join(format!("{i}.png"))).unwrap();
            }
        }
        let d = from_dir(dir.path(), 4, 4).unwrap();
        assert_eq!(d.labels, vec![0, 0, 1, 1]);
        assert_eq!(d.class_names, vec!["cat", "dog"]);
        assert_eq!(d.images.at(0, 0, 0, 0), 1.0);
        assert_eq!(d.images.at(2, 0, 0, 0), -1.0);
        assert!(matches!(from_dir(&dir.path().join("cat"), 4, 4), Err(Error::EmptyDataset(_))));
    }
}
