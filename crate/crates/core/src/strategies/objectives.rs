use nalgebra::DMatrix;

use crate::data::{Layout, Sample};
use crate::error::{Error, Result};
use crate::models::{loss, DiscriminativeModel, Objective};

/// Which logits each sample's cross-entropy may see.
#[derive(Debug, Clone, PartialEq)]
pub enum LogitSubset {
    /// One fixed set for every sample; labels outside it are an error.
    Fixed(Vec<usize>),
    /// Each sample sees only the classes of its own task.
    OwnTask(Layout),
}

/// Cross-entropy restricted to a logit subset. With the current task's
/// classes this is the labels trick; with `OwnTask` over the union of all
/// tasks it trains independent task heads, which minimizes the intra-task
/// blocks and nothing else.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetObjective {
    pub subset: LogitSubset,
}

impl SubsetObjective {
    pub fn labels_trick(current_task_class_ids: &[usize]) -> Self {
        let mut ids = current_task_class_ids.to_vec();
        ids.sort_unstable();
        Self {
            subset: LogitSubset::Fixed(ids),
        }
    }

    pub fn own_task(layout: Layout) -> Self {
        Self {
            subset: LogitSubset::OwnTask(layout),
        }
    }
}

impl Objective for SubsetObjective {
    fn loss_and_grad(&self, model: &DiscriminativeModel, batch: &[&Sample], grad: &mut [f64]) -> Result<f64> {
        let fwd = model.forward_batch(batch)?;
        let n = model.num_classes();
        let scale = 1.0 / batch.len() as f64;
        let mut dz = DMatrix::zeros(n, batch.len());
        let mut total = 0.0;
        for (b, s) in batch.iter().enumerate() {
            let subset: Vec<usize> = match &self.subset {
                LogitSubset::Fixed(ids) => {
                    if !ids.contains(&s.label) {
                        return Err(Error::InvalidArgument(format!(
                            "label {} outside the current task {ids:?}",
                            s.label
                        )));
                    }
                    ids.clone()
                }
                LogitSubset::OwnTask(layout) => layout.classes_of(layout.task_of(s.label)).collect(),
            };
            let z = fwd.logits_of(b);
            total += loss::subset_cross_entropy(z, s.label, &subset);
            let col = &mut dz.as_mut_slice()[b * n..(b + 1) * n];
            loss::subset_cross_entropy_grad(z, s.label, &subset, scale, col);
        }
        model.backward_batch(&fwd, &dz, grad);
        Ok(total * scale)
    }
}

/// Mean labels-trick loss over `batch` and its parameter gradient.
pub fn labels_trick_loss(
    model: &DiscriminativeModel,
    batch: &[&Sample],
    current_task_class_ids: &[usize],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("labels_trick_loss"));
    }
    let mut grad = vec![0.0; model.num_params()];
    let v = SubsetObjective::labels_trick(current_task_class_ids).loss_and_grad(model, batch, &mut grad)?;
    Ok((v, grad))
}

/// `alpha * CE + (1 - alpha) * tau^2 * KL(teacher || student)`, the KL
/// taken over temperature-softened old-class logits only. The CE term uses
/// `active_classes` when set, all logits otherwise.
#[derive(Debug, Clone)]
pub struct DistillObjective {
    pub teacher: DiscriminativeModel,
    pub temperature: f64,
    pub alpha: f64,
    pub old_classes: Vec<usize>,
    pub active_classes: Option<Vec<usize>>,
}

impl DistillObjective {
    pub fn new(teacher: DiscriminativeModel, temperature: f64, alpha: f64, old_classes: Vec<usize>) -> Result<Self> {
        if !(temperature > 0.0) || !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!(
                "need temperature > 0 and alpha in [0, 1], got {temperature}, {alpha}"
            )));
        }
        let n = teacher.num_classes();
        if let Some(&bad) = old_classes.iter().find(|&&c| c >= n) {
            return Err(Error::UnknownClass(bad));
        }
        Ok(Self {
            teacher,
            temperature,
            alpha,
            old_classes,
            active_classes: None,
        })
    }

    pub fn with_active_classes(mut self, mut active: Vec<usize>) -> Self {
        active.sort_unstable();
        self.active_classes = Some(active);
        self
    }
}

impl Objective for DistillObjective {
    fn loss_and_grad(&self, model: &DiscriminativeModel, batch: &[&Sample], grad: &mut [f64]) -> Result<f64> {
        let fwd = model.forward_batch(batch)?;
        let distill = !self.old_classes.is_empty();
        let (alpha, tau) = if distill { (self.alpha, self.temperature) } else { (1.0, 1.0) };
        let teacher = if distill {
            Some(self.teacher.forward_batch(batch)?)
        } else {
            None
        };
        let n = model.num_classes();
        let scale = 1.0 / batch.len() as f64;
        let mut dz = DMatrix::zeros(n, batch.len());
        let mut total = 0.0;
        for (b, s) in batch.iter().enumerate() {
            let z = fwd.logits_of(b);
            let col = &mut dz.as_mut_slice()[b * n..(b + 1) * n];
            match &self.active_classes {
                Some(active) => {
                    if !active.contains(&s.label) {
                        return Err(Error::InvalidArgument(format!("label {} is not active", s.label)));
                    }
                    total += alpha * loss::subset_cross_entropy(z, s.label, active);
                    loss::subset_cross_entropy_grad(z, s.label, active, alpha * scale, col);
                }
                None => {
                    total += alpha * loss::cross_entropy(z, s.label);
                    loss::cross_entropy_grad(z, s.label, alpha * scale, col);
                }
            }
            if let Some(t) = &teacher {
                let t = t.logits_of(b);
                let zo: Vec<f64> = self.old_classes.iter().map(|&c| z[c]).collect();
                let to: Vec<f64> = self.old_classes.iter().map(|&c| t[c]).collect();
                let q = loss::softmax_with_temperature(&zo, tau);
                let p = loss::softmax_with_temperature(&to, tau);
                let kl: f64 = p
                    .iter()
                    .zip(&q)
                    .filter(|(pi, _)| **pi > 0.0)
                    .map(|(pi, qi)| pi * (pi.ln() - qi.ln()))
                    .sum();
                let w = (1.0 - alpha) * tau * tau;
                total += w * kl;
                for (i, &c) in self.old_classes.iter().enumerate() {
                    col[c] += (1.0 - alpha) * tau * (q[i] - p[i]) * scale;
                }
            }
        }
        model.backward_batch(&fwd, &dz, grad);
        Ok(total * scale)
    }
}

/// Mean distillation loss of `student` over `batch` and its gradient.
pub fn distill_loss(
    teacher: &DiscriminativeModel,
    student: &DiscriminativeModel,
    batch: &[&Sample],
    temperature: f64,
    alpha: f64,
    old_class_ids: &[usize],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("distill_loss"));
    }
    let obj = DistillObjective::new(teacher.clone(), temperature, alpha, old_class_ids.to_vec())?;
    let mut grad = vec![0.0; student.num_params()];
    let v = obj.loss_and_grad(student, batch, &mut grad)?;
    Ok((v, grad))
}
