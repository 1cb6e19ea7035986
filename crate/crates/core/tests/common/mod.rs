#![allow(dead_code)]

use classil::data::Sample;
use classil::models::{loss_gradient, Arch, DiscriminativeModel};
use classil::strategies::{distill_loss, ewc_penalty, labels_trick_loss, si_penalty, EwcState, SiState};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-300 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` at `theta`.
pub fn numeric_grad(f: impl Fn(&[f64]) -> f64, theta: &[f64]) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|j| {
            t[j] = theta[j] + FD_STEP;
            let up = f(&t);
            t[j] = theta[j] - FD_STEP;
            let down = f(&t);
            t[j] = theta[j];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn with_params(model: &DiscriminativeModel, theta: &[f64]) -> DiscriminativeModel {
    let mut m = model.clone();
    m.params_mut().copy_from_slice(theta);
    m
}

struct Point {
    model: DiscriminativeModel,
    batch: Vec<Sample>,
    classes: usize,
}

fn random_point(rng: &mut ChaCha8Rng) -> Point {
    let dim = rng.random_range(2..=5);
    let classes = rng.random_range(2..=6);
    let arch = if rng.random_bool(0.25) {
        Arch::Linear
    } else {
        Arch::Mlp {
            hidden: rng.random_range(2..=6),
        }
    };
    let mut model = DiscriminativeModel::new(arch, dim, classes, rng.random()).unwrap();
    let gain = rng.random_range(0.5..2.0);
    model.params_mut().iter_mut().for_each(|p| *p *= gain);
    let batch = (0..8)
        .map(|_| {
            Sample::new(
                (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
                rng.random_range(0..classes),
            )
        })
        .collect();
    Point { model, batch, classes }
}

/// Largest relative error of the model cross-entropy gradient.
pub fn check_model_ce(points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..points)
        .map(|_| {
            let p = random_point(&mut rng);
            let refs: Vec<&Sample> = p.batch.iter().collect();
            let analytic = loss_gradient(&p.model, &refs).unwrap();
            let numeric = numeric_grad(|t| oracle_ce(&with_params(&p.model, t), &p.batch), p.model.params());
            rel_err(&analytic, &numeric)
        })
        .fold(0.0, f64::max)
}

/// Mean cross-entropy computed from the logits with a direct log-sum-exp.
pub fn oracle_ce(model: &DiscriminativeModel, samples: &[Sample]) -> f64 {
    samples
        .iter()
        .map(|s| {
            let z = model.forward_logits(&s.features).unwrap();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - z[s.label]
        })
        .sum::<f64>()
        / samples.len() as f64
}

pub fn check_ewc(points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..points)
        .map(|_| {
            let n = rng.random_range(1..=30);
            let mut st = EwcState::new(rng.random_range(0.1..100.0));
            for _ in 0..rng.random_range(1..=3) {
                let anchor = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
                let fisher = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
                st.push(anchor, fisher).unwrap();
            }
            let theta: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (_, analytic) = ewc_penalty(&st, &theta).unwrap();
            let numeric = numeric_grad(|t| ewc_penalty(&st, t).unwrap().0, &theta);
            rel_err(&analytic, &numeric)
        })
        .fold(0.0, f64::max)
}

pub fn check_si(points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..points)
        .map(|_| {
            let n = rng.random_range(1..=30);
            let start: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut st = SiState::new(rng.random_range(0.1..10.0), 0.1, &start).unwrap();
            // a few descent steps on a random quadratic build importances
            let target: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut theta = start.clone();
            for _ in 0..5 {
                let grad: Vec<f64> = theta.iter().zip(&target).map(|(t, g)| t - g).collect();
                let next: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - 0.3 * g).collect();
                st.update(&theta, &next, &grad).unwrap();
                theta = next;
            }
            st.consolidate(&theta).unwrap();
            let probe: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (_, analytic) = si_penalty(&st, &probe).unwrap();
            let numeric = numeric_grad(|t| si_penalty(&st, t).unwrap().0, &probe);
            rel_err(&analytic, &numeric)
        })
        .fold(0.0, f64::max)
}

pub fn check_distill(points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..points)
        .map(|_| {
            let p = random_point(&mut rng);
            let mut teacher = p.model.clone();
            teacher.params_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
            let old: Vec<usize> = (0..rng.random_range(1..p.classes)).collect();
            let tau = rng.random_range(1.0..4.0);
            let alpha = rng.random_range(0.0..1.0);
            let refs: Vec<&Sample> = p.batch.iter().collect();
            let (_, analytic) = distill_loss(&teacher, &p.model, &refs, tau, alpha, &old).unwrap();
            let numeric = numeric_grad(
                |t| distill_loss(&teacher, &with_params(&p.model, t), &refs, tau, alpha, &old).unwrap().0,
                p.model.params(),
            );
            rel_err(&analytic, &numeric)
        })
        .fold(0.0, f64::max)
}

pub fn check_labels_trick(points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..points)
        .map(|_| {
            let mut p = random_point(&mut rng);
            let lo = rng.random_range(0..p.classes - 1);
            let ids: Vec<usize> = (lo..p.classes).collect();
            for s in &mut p.batch {
                s.label = ids[rng.random_range(0..ids.len())];
            }
            let refs: Vec<&Sample> = p.batch.iter().collect();
            let (_, analytic) = labels_trick_loss(&p.model, &refs, &ids).unwrap();
            let numeric = numeric_grad(
                |t| labels_trick_loss(&with_params(&p.model, t), &refs, &ids).unwrap().0,
                p.model.params(),
            );
            rel_err(&analytic, &numeric)
        })
        .fold(0.0, f64::max)
}

/// Batch linear discriminant analysis written out from scratch: class
/// means, pooled covariance over the total count, shrinkage toward the
/// mean variance, floored diagonal.
pub struct BatchLda {
    pub means: Vec<Option<DVector<f64>>>,
    /// Pooled scatter over the total count, before shrinkage.
    pub raw_cov: DMatrix<f64>,
    pub cov: DMatrix<f64>,
    pub counts: Vec<usize>,
    inv: DMatrix<f64>,
}

impl BatchLda {
    pub fn fit(samples: &[Sample], num_classes: usize, shrinkage: f64, floor: f64) -> Self {
        let d = samples[0].features.len();
        let mut counts = vec![0usize; num_classes];
        let mut sums = vec![DVector::zeros(d); num_classes];
        for s in samples {
            counts[s.label] += 1;
            sums[s.label] += DVector::from_column_slice(&s.features);
        }
        let means: Vec<Option<DVector<f64>>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| (c > 0).then(|| s / c as f64))
            .collect();
        let mut scatter = DMatrix::zeros(d, d);
        for s in samples {
            let diff = DVector::from_column_slice(&s.features) - means[s.label].as_ref().unwrap();
            scatter += &diff * diff.transpose();
        }
        let raw = scatter / samples.len() as f64;
        let iso = raw.trace() / d as f64;
        let mut cov = &raw * (1.0 - shrinkage) + DMatrix::identity(d, d) * (shrinkage * iso);
        for i in 0..d {
            cov[(i, i)] = cov[(i, i)].max(floor);
        }
        let inv = cov.clone().try_inverse().unwrap();
        Self {
            means,
            raw_cov: raw,
            cov,
            counts,
            inv,
        }
    }

    /// Ties go to the lowest class index.
    pub fn classify(&self, x: &[f64]) -> usize {
        let total: usize = self.counts.iter().sum();
        let x = DVector::from_column_slice(x);
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for (r, m) in self.means.iter().enumerate() {
            let Some(m) = m else { continue };
            let diff = &x - m;
            let score = (self.counts[r] as f64 / total as f64).ln() - 0.5 * (diff.transpose() * &self.inv * &diff)[(0, 0)];
            if score > best.1 {
                best = (r, score);
            }
        }
        best.0
    }
}
