//! Plain-loop reference implementations shared by the integration tests. Nothing
//! here calls into the engine's numerics; inputs and outputs are nested `Vec`s.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rows = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, c: usize, scale: f64) -> Rows {
    (0..n)
        .map(|_| (0..c).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

pub fn softmax_row(row: &[f64], tau: f64) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for &v in row {
        if v > max {
            max = v;
        }
    }
    let mut exps = Vec::with_capacity(row.len());
    let mut sum = 0.0;
    for &v in row {
        let e = ((v - max) / tau).exp();
        exps.push(e);
        sum += e;
    }
    for e in exps.iter_mut() {
        *e /= sum;
    }
    exps
}

/// Mean cross-entropy and its gradient.
pub fn cross_entropy(logits: &Rows, labels: &[usize]) -> (f64, Rows) {
    let n = logits.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::new();
    for (row, &y) in logits.iter().zip(labels) {
        let p = softmax_row(row, 1.0);
        value += -p[y].ln();
        let mut g = p.clone();
        g[y] -= 1.0;
        for v in g.iter_mut() {
            *v /= n;
        }
        grad.push(g);
    }
    (value / n, grad)
}

pub fn correct_class_probs(logits: &Rows, labels: &[usize]) -> Vec<f64> {
    logits
        .iter()
        .zip(labels)
        .map(|(row, &y)| softmax_row(row, 1.0)[y])
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `tau^2 * mean KL(softmax(mentor/tau) || softmax(student/tau))` and the student gradient.
pub fn kl_distill(mentor: &Rows, student: &Rows, tau: f64) -> (f64, Rows) {
    let n = student.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::new();
    for (m, s) in mentor.iter().zip(student) {
        let p = softmax_row(m, tau);
        let q = softmax_row(s, tau);
        let mut g = vec![0.0; s.len()];
        for c in 0..s.len() {
            if p[c] > 0.0 {
                value += p[c] * (p[c].ln() - q[c].ln());
            }
            g[c] = tau * (q[c] - p[c]) / n;
        }
        grad.push(g);
    }
    (tau * tau * value / n, grad)
}

/// Proportional ranks: `lambda * w / sum(w)`.
pub fn ranks_proportional(weights: &[f64], lambda: f64) -> Vec<f64> {
    let mut total = 0.0;
    for w in weights {
        total += w;
    }
    weights.iter().map(|w| lambda * w / total).collect()
}

/// Uniform ranks: the k-th smallest weight (ties by position) gets `step * k`.
pub fn ranks_uniform(weights: &[f64], step: f64) -> Vec<f64> {
    let mut ranks = vec![0.0; weights.len()];
    for i in 0..weights.len() {
        let mut below = 0;
        for j in 0..weights.len() {
            if weights[j] < weights[i] || (weights[j] == weights[i] && j < i) {
                below += 1;
            }
        }
        ranks[i] = step * (below + 1) as f64;
    }
    ranks
}

pub fn adapt(gap: f64, tau: f64) -> f64 {
    1.0 + gap * tau
}

pub fn add_into(acc: &mut Rows, g: &Rows, w: f64) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += w * y;
        }
    }
}

pub fn zeros_like(r: &Rows) -> Rows {
    r.iter().map(|row| vec![0.0; row.len()]).collect()
}

/// Classroom settings for the reference loss.
#[derive(Clone, Copy, Debug)]
pub struct Settings {
    pub tau: f64,
    pub beta: f64,
    pub delta: f64,
    pub adaptive: bool,
    pub uniform: bool,
}

/// Models are index 0 = student, 1 = teacher, 2.. = peers. Returns the total
/// loss, its student gradient, the ranks and the active mentor indices.
pub fn classroom_step(models: &[Rows], labels: &[usize], s: Settings) -> (f64, Rows, Vec<f64>, Vec<usize>) {
    let weights: Vec<f64> = models.iter().map(|m| mean(&correct_class_probs(m, labels))).collect();
    let ranks = if s.uniform {
        ranks_uniform(&weights, 0.1)
    } else {
        ranks_proportional(&weights, (models.len() - 1) as f64)
    };
    let student = &models[0];
    let (ce, ce_grad) = cross_entropy(student, labels);
    let alpha = ranks[0];
    let mut total = alpha * ce;
    let mut grad = zeros_like(student);
    add_into(&mut grad, &ce_grad, alpha);
    let mut active = Vec::new();
    for m in 1..models.len() {
        if ranks[m] > ranks[0] {
            active.push(m);
            let tau_m = if s.adaptive {
                adapt((ranks[m] - ranks[0]) / ranks[m], s.tau)
            } else {
                s.tau
            };
            let (kl, kl_grad) = kl_distill(&models[m], student, tau_m);
            total += s.beta * ranks[m] * kl;
            add_into(&mut grad, &kl_grad, s.beta * ranks[m]);
        }
    }
    if s.delta != 0.0 {
        let (kl, kl_grad) = kl_distill(&models[1], student, 1.0);
        total += s.delta * (ce + kl);
        add_into(&mut grad, &ce_grad, s.delta);
        add_into(&mut grad, &kl_grad, s.delta);
    }
    (total, grad, ranks, active)
}

/// `L_task + sum_m L_distill(m, s; tau)` over every mentor.
pub fn aver(models: &[Rows], labels: &[usize], tau: f64) -> (f64, Rows) {
    let (mut total, mut grad) = cross_entropy(&models[0], labels);
    for m in &models[1..] {
        let (kl, g) = kl_distill(m, &models[0], tau);
        total += kl;
        add_into(&mut grad, &g, 1.0);
    }
    (total, grad)
}

/// SimCC head logits per sample: `K*dx` x-bins joint by joint, then `K*dy` y-bins.
pub fn simcc_distill(mentor: &Rows, student: &Rows, k: usize, dx: usize, dy: usize, tau: f64) -> (f64, Rows) {
    let n = student.len();
    let rows = (n * k) as f64;
    let mut value = 0.0;
    let mut grad = zeros_like(student);
    for i in 0..n {
        for j in 0..k {
            for (offset, d) in [(j * dx, dx), (k * dx + j * dy, dy)] {
                let p = softmax_row(&mentor[i][offset..offset + d], tau);
                let q = softmax_row(&student[i][offset..offset + d], tau);
                for b in 0..d {
                    value += p[b] * (p[b].ln() - q[b].ln());
                    grad[i][offset + b] = tau * (q[b] - p[b]) / rows / k as f64;
                }
            }
        }
    }
    (tau * tau * value / rows / k as f64, grad)
}

/// Heatmaps per sample as `K*h*w` values; per joint one distribution.
pub fn heatmap_distill(mentor: &Rows, student: &Rows, k: usize, cells: usize, tau: f64) -> (f64, Rows) {
    let n = student.len() as f64;
    let mut value = 0.0;
    let mut grad = zeros_like(student);
    for j in 0..k {
        let mut joint = 0.0;
        for i in 0..student.len() {
            let range = j * cells..(j + 1) * cells;
            let p = softmax_row(&mentor[i][range.clone()], tau);
            let q = softmax_row(&student[i][range], tau);
            for c in 0..cells {
                joint += p[c] * (p[c].ln() - q[c].ln());
                grad[i][j * cells + c] = tau * (q[c] - p[c]) / n / k as f64;
            }
        }
        value += tau * tau * joint / n;
    }
    (value / k as f64, grad)
}

/// Dense layer stored as `weight[in][out]` and `bias[out]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: Rows,
    pub bias: Vec<f64>,
}

/// ReLU MLP forward: returns every layer input and pre-activation.
pub fn mlp_forward(layers: &[Dense], x: &Rows) -> (Rows, Vec<Rows>, Vec<Rows>) {
    let mut inputs = Vec::new();
    let mut pres = Vec::new();
    let mut h = x.clone();
    for (l, layer) in layers.iter().enumerate() {
        inputs.push(h.clone());
        let out = layer.bias.len();
        let mut z = Vec::new();
        for row in &h {
            let mut zr = layer.bias.clone();
            for (i, &xi) in row.iter().enumerate() {
                for o in 0..out {
                    zr[o] += xi * layer.weight[i][o];
                }
            }
            z.push(zr);
        }
        pres.push(z.clone());
        h = if l + 1 < layers.len() {
            z.iter().map(|r| r.iter().map(|&v| v.max(0.0)).collect()).collect()
        } else {
            z
        };
    }
    (h, inputs, pres)
}

/// Parameter gradients of an upstream gradient on the MLP output.
pub fn mlp_backward(layers: &[Dense], inputs: &[Rows], pres: &[Rows], upstream: &Rows) -> Vec<Dense> {
    let mut grads: Vec<Dense> = layers
        .iter()
        .map(|l| Dense {
            weight: zeros_like(&l.weight),
            bias: vec![0.0; l.bias.len()],
        })
        .collect();
    let mut delta = upstream.clone();
    for l in (0..layers.len()).rev() {
        if l + 1 < layers.len() {
            for (dr, zr) in delta.iter_mut().zip(&pres[l]) {
                for (d, &z) in dr.iter_mut().zip(zr) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
        }
        for (xr, dr) in inputs[l].iter().zip(&delta) {
            for (i, &xi) in xr.iter().enumerate() {
                for (o, &d) in dr.iter().enumerate() {
                    grads[l].weight[i][o] += xi * d;
                }
            }
            for (o, &d) in dr.iter().enumerate() {
                grads[l].bias[o] += d;
            }
        }
        let prev: Rows = delta
            .iter()
            .map(|dr| {
                (0..layers[l].weight.len())
                    .map(|i| dr.iter().enumerate().map(|(o, &d)| d * layers[l].weight[i][o]).sum())
                    .collect()
            })
            .collect();
        delta = prev;
    }
    grads
}

/// First momentum SGD step from zero velocity: `theta - lr * (g + wd * theta)`.
pub fn sgd_first_step(layers: &[Dense], grads: &[Dense], lr: f64, wd: f64) -> Vec<Dense> {
    layers
        .iter()
        .zip(grads)
        .map(|(l, g)| Dense {
            weight: l
                .weight
                .iter()
                .zip(&g.weight)
                .map(|(wr, gr)| wr.iter().zip(gr).map(|(w, g)| w - lr * (g + wd * w)).collect())
                .collect(),
            bias: l.bias.iter().zip(&g.bias).map(|(b, g)| b - lr * (g + wd * b)).collect(),
        })
        .collect()
}

pub fn max_abs_diff(a: &Rows, b: &Rows) -> f64 {
    let mut m = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.len(), y.len());
        for (u, v) in x.iter().zip(y) {
            m = m.max((u - v).abs());
        }
    }
    m
}
