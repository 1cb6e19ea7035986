use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Layout, Sample, TaskStream};
use crate::error::{Error, Result};

/// Isotropic Gaussian blobs, one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub centers: Vec<Vec<f64>>,
    /// Per-class standard deviation.
    pub scales: Vec<f64>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl BlobSpec {
    pub fn new(
        centers: Vec<Vec<f64>>,
        scale: f64,
        train_per_class: usize,
        test_per_class: usize,
        seed: u64,
    ) -> Self {
        let scales = vec![scale; centers.len()];
        Self {
            centers,
            scales,
            train_per_class,
            test_per_class,
            seed,
        }
    }

    /// `n` centers on a closed curve of the given radius.
    ///
    /// Center `k` sits at angle `a = 2*pi*k/n` and has coordinates
    /// `r/sqrt(m) * (cos(a), sin(a), cos(2a), sin(2a), ..., cos(m a), sin(m a))`
    /// with `m = dim / 2` harmonics (a trailing odd dimension is zero). For
    /// `dim = 2` this is the ordinary planar ring; higher dimensions spread
    /// neighbouring classes further apart while every center keeps norm `r`.
    pub fn ring(
        n: usize,
        dim: usize,
        radius: f64,
        scale: f64,
        train_per_class: usize,
        test_per_class: usize,
        seed: u64,
    ) -> Self {
        Self::new(
            ring_centers(n, dim, radius),
            scale,
            train_per_class,
            test_per_class,
            seed,
        )
    }

    /// Adds `offset` to every coordinate of every center.
    pub fn shifted(mut self, offset: f64) -> Self {
        for c in &mut self.centers {
            c.iter_mut().for_each(|v| *v += offset);
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    /// Mean and standard deviation of class `r`'s generating density.
    pub fn class_density(&self, class: usize) -> Option<(&[f64], f64)> {
        Some((self.centers.get(class)?.as_slice(), *self.scales.get(class)?))
    }

    fn validate(&self, layout: Layout) -> Result<()> {
        let n = layout.num_classes();
        if self.centers.len() != n {
            return Err(Error::BlobSpec(format!(
                "{} centers for a layout with {n} classes",
                self.centers.len()
            )));
        }
        if self.scales.len() != n {
            return Err(Error::BlobSpec(format!(
                "{} scales for {n} classes",
                self.scales.len()
            )));
        }
        let d = self.dim();
        if d == 0 || self.centers.iter().any(|c| c.len() != d) {
            return Err(Error::BlobSpec("centers must share a positive dimension".into()));
        }
        if self.scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::BlobSpec("scales must be positive and finite".into()));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::BlobSpec("per-class sample counts must be positive".into()));
        }
        Ok(())
    }
}

pub fn ring_centers(n: usize, dim: usize, radius: f64) -> Vec<Vec<f64>> {
    let harmonics = dim / 2;
    let norm = if harmonics == 0 {
        0.0
    } else {
        radius / (harmonics as f64).sqrt()
    };
    (0..n)
        .map(|k| {
            let angle = std::f64::consts::TAU * k as f64 / n as f64;
            let mut c = vec![0.0; dim];
            for f in 0..harmonics {
                let a = (f + 1) as f64 * angle;
                c[2 * f] = norm * a.cos();
                c[2 * f + 1] = norm * a.sin();
            }
            c
        })
        .collect()
}

/// Independent stream id for each (class, split, sample) triple, so any
/// sample can be regenerated without drawing the ones before it.
fn stream_id(class: usize, split: u64, index: usize) -> u64 {
    ((class as u64) << 33) | (split << 32) | index as u64
}

fn draw(spec: &BlobSpec, class: usize, split: u64, index: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream_id(class, split, index));
    let scale = spec.scales[class];
    let features = spec.centers[class]
        .iter()
        .map(|&mu| {
            let z: f64 = StandardNormal.sample(&mut rng);
            mu + scale * z
        })
        .collect();
    Sample::new(features, class)
}

/// Generates a deterministic blob stream. Same spec, same bytes.
pub fn make_blob_stream(spec: &BlobSpec, layout: Layout) -> Result<TaskStream> {
    spec.validate(layout)?;
    let n = layout.num_classes();
    let per_class = |split: u64, count: usize| -> Vec<Vec<Sample>> {
        (0..n)
            .map(|c| (0..count).map(|i| draw(spec, c, split, i)).collect())
            .collect()
    };
    let train = per_class(0, spec.train_per_class);
    let test = per_class(1, spec.test_per_class);
    let mut stream = TaskStream::from_class_samples(layout, spec.dim(), spec.seed, train, test)?;
    stream.blob_spec = Some(spec.clone());
    Ok(stream)
}
