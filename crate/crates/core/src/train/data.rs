use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use super::TrainError;
use crate::autodiff::Tensor;
use crate::codec::Image;
use crate::entropy::SymbolGrid;

/// Training images held in memory, in file-name order.
#[derive(Debug, Clone)]
pub struct Dataset {
    names: Vec<String>,
    images: Vec<Image>,
    patch: usize,
}

/// Image files (`.ppm`, `.png`) directly inside `dir`, sorted by name.
pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>, TrainError> {
    let entries = std::fs::read_dir(dir).map_err(|e| TrainError::Data(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| ["ppm", "png"].contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

impl Dataset {
    pub fn from_dir(dir: &Path, patch: usize) -> Result<Self, TrainError> {
        let mut names = Vec::new();
        let mut images = Vec::new();
        for path in image_files(dir)? {
            let img = Image::load(&path).map_err(|e| TrainError::Data(format!("{}: {e}", path.display())))?;
            names.push(path.display().to_string());
            images.push(img);
        }
        Self::new(names, images, patch)
    }

    /// Rejects an empty set and any image smaller than `patch` on either side.
    pub fn new(names: Vec<String>, images: Vec<Image>, patch: usize) -> Result<Self, TrainError> {
        if images.is_empty() {
            return Err(TrainError::Data("dataset is empty".into()));
        }
        for (name, img) in names.iter().zip(&images) {
            if img.width() < patch || img.height() < patch {
                return Err(TrainError::TooSmall {
                    name: name.clone(),
                    width: img.width(),
                    height: img.height(),
                    patch,
                });
            }
        }
        Ok(Self { names, images, patch })
    }

    pub fn from_images(images: Vec<Image>, patch: usize) -> Result<Self, TrainError> {
        let names = (0..images.len()).map(|i| format!("image{i:03}")).collect();
        Self::new(names, images, patch)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// One epoch of batches: a shuffled order, cut into groups of `batch`
    /// (the last may be short), each image cropped at a random offset.
    pub fn epoch<R: Rng>(&self, batch: usize, rng: &mut R) -> Vec<Tensor> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        order
            .chunks(batch)
            .map(|idx| {
                let crops: Vec<Image> = idx
                    .iter()
                    .map(|&i| {
                        let img = &self.images[i];
                        let x0 = rng.gen_range(0..=img.width() - self.patch);
                        let y0 = rng.gen_range(0..=img.height() - self.patch);
                        img.crop(x0, y0, self.patch, self.patch)
                    })
                    .collect();
                stack(&crops)
            })
            .collect()
    }
}

/// Normalized `[B, 3, H, W]` tensor of equally sized images.
pub fn stack(images: &[Image]) -> Tensor {
    let grid = SymbolGrid::pixels();
    let mut data = Vec::new();
    let shape = [images.len(), 3, images[0].height(), images[0].width()];
    for img in images {
        assert_eq!(
            (img.width(), img.height()),
            (shape[3], shape[2]),
            "batch images differ in size"
        );
        data.extend(img.to_tensor(&grid).into_data());
    }
    Tensor::new(shape.to_vec(), data).expect("stacked shape")
}

/// Content families of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Constant,
    Gradient,
    /// A random 3×3 tile repeated over the image.
    Texture,
    /// A smooth gradient with small random dither.
    Dithered,
    /// Independent uniform samples.
    Noise,
}

impl SynthKind {
    /// The families used for training sets, in rotation order.
    pub const TRAINING: [SynthKind; 4] = [Self::Constant, Self::Gradient, Self::Texture, Self::Dithered];

    pub fn name(self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Gradient => "gradient",
            Self::Texture => "texture",
            Self::Dithered => "dithered",
            Self::Noise => "noise",
        }
    }
}

pub fn synth_image<R: Rng>(kind: SynthKind, width: usize, height: usize, rng: &mut R) -> Image {
    let color: [u8; 3] = rng.gen();
    match kind {
        SynthKind::Constant => Image::from_fn(width, height, |_, _, c| color[c]),
        SynthKind::Gradient | SynthKind::Dithered => {
            let gx: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-4.0..4.0));
            let gy: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-4.0..4.0));
            let dither = if kind == SynthKind::Dithered { 6 } else { 0 };
            Image::from_fn(width, height, |x, y, c| {
                let v = 128.0 + gx[c] * (x as f64 - width as f64 / 2.0) + gy[c] * (y as f64 - height as f64 / 2.0);
                let d = if dither > 0 { rng.gen_range(-dither..=dither) } else { 0 };
                (v.round() as i64 + d).clamp(0, 255) as u8
            })
        }
        SynthKind::Texture => {
            let tile: Vec<[u8; 3]> = (0..9).map(|_| rng.gen()).collect();
            Image::from_fn(width, height, |x, y, c| tile[(y % 3) * 3 + x % 3][c])
        }
        SynthKind::Noise => Image::from_fn(width, height, |_, _, _| rng.gen()),
    }
}

/// `count` images cycling through [`SynthKind::TRAINING`].
pub fn synth_set<R: Rng>(count: usize, size: usize, rng: &mut R) -> Vec<(SynthKind, Image)> {
    (0..count)
        .map(|i| {
            let kind = SynthKind::TRAINING[i % SynthKind::TRAINING.len()];
            (kind, synth_image(kind, size, size, rng))
        })
        .collect()
}
