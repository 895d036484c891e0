//! Softmax, cross-entropy and temperature-scaled KL with analytic gradients.
//!
//! All reductions over the batch are means. Mentor logits never receive a
//! gradient: every loss here differentiates with respect to the student side only.

use crate::error::{CkdError, Result};
use crate::matrix::{LabelVector, Matrix};

/// A scalar loss and its gradient with respect to the student logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWithGrad {
    pub value: f64,
    pub grad: Matrix,
}

impl LossWithGrad {
    pub fn zero(rows: usize, cols: usize) -> Self {
        LossWithGrad {
            value: 0.0,
            grad: Matrix::zeros(rows, cols),
        }
    }

    /// `self += weight * other`, value and gradient alike.
    pub fn accumulate(&mut self, other: &LossWithGrad, weight: f64) -> Result<()> {
        self.value += weight * other.value;
        self.grad.add_scaled(&other.grad, weight)
    }

    pub fn scaled(&self, weight: f64) -> LossWithGrad {
        LossWithGrad {
            value: weight * self.value,
            grad: self.grad.scale(weight),
        }
    }
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(CkdError::invalid(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    Ok(())
}

fn check_finite(logits: &Matrix, what: &str) -> Result<()> {
    if !logits.is_finite() {
        return Err(CkdError::invalid(format!("{what} contain non-finite values")));
    }
    Ok(())
}

/// Row-wise log-softmax of `logits / temperature`, computed with the row max subtracted.
pub fn log_softmax(logits: &Matrix, temperature: f64) -> Result<Matrix> {
    check_temperature(temperature)?;
    check_finite(logits, "logits")?;
    let mut out = logits.clone();
    for row in 0..out.rows() {
        let r = out.row_mut(row);
        let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in r.iter_mut() {
            *v = (*v - max) / temperature;
        }
        let log_sum = r.iter().map(|v| v.exp()).sum::<f64>().ln();
        for v in r.iter_mut() {
            *v -= log_sum;
        }
    }
    Ok(out)
}

/// Row-wise softmax of `logits / temperature`.
pub fn softmax(logits: &Matrix, temperature: f64) -> Result<Matrix> {
    check_temperature(temperature)?;
    check_finite(logits, "logits")?;
    let mut out = logits.clone();
    for row in 0..out.rows() {
        let r = out.row_mut(row);
        let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in r.iter_mut() {
            *v = ((*v - max) / temperature).exp();
            sum += *v;
        }
        for v in r.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Output of [`cross_entropy`]: per-sample losses plus the batch mean with its gradient.
#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub per_sample: Vec<f64>,
    pub mean: LossWithGrad,
}

/// Mean cross-entropy; per-sample loss is `-ln softmax(logits)[label]`.
pub fn cross_entropy(logits: &Matrix, labels: &LabelVector) -> Result<CrossEntropy> {
    labels.validate_for(logits)?;
    let log_probs = log_softmax(logits, 1.0)?;
    let n = logits.rows();
    let per_sample: Vec<f64> = (0..n).map(|i| -log_probs[(i, labels[i])]).collect();
    let value = if n == 0 {
        0.0
    } else {
        per_sample.iter().sum::<f64>() / n as f64
    };

    let mut grad = log_probs.map(f64::exp);
    let inv_n = 1.0 / n.max(1) as f64;
    for i in 0..n {
        grad[(i, labels[i])] -= 1.0;
    }
    for v in grad.as_mut_slice() {
        *v *= inv_n;
    }
    Ok(CrossEntropy {
        per_sample,
        mean: LossWithGrad { value, grad },
    })
}

/// `tau^2 * mean_rows KL(softmax(mentor/tau) || softmax(student/tau))`.
///
/// The gradient is with respect to the student logits only and equals
/// `tau * (softmax(student/tau) - softmax(mentor/tau)) / N`.
pub fn kl_distill(mentor: &Matrix, student: &Matrix, temperature: f64) -> Result<LossWithGrad> {
    mentor.check_same_shape(student, "kl_distill")?;
    let log_p = log_softmax(mentor, temperature)?;
    let log_q = log_softmax(student, temperature)?;
    let n = student.rows();
    let inv_n = 1.0 / n.max(1) as f64;

    let mut total = 0.0;
    let mut grad = Matrix::zeros(n, student.cols());
    for ((lp, lq), g) in log_p.as_slice().iter().zip(log_q.as_slice()).zip(grad.as_mut_slice()) {
        let p = lp.exp();
        let q = lq.exp();
        if p > 0.0 {
            total += p * (lp - lq);
        }
        *g = temperature * (q - p) * inv_n;
    }
    // KL is non-negative; rounding can leave a tiny negative residue
    let value = (temperature * temperature * total * inv_n).max(0.0);
    Ok(LossWithGrad { value, grad })
}
