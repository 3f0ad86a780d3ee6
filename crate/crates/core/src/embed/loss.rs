//! Adapter training losses with analytic gradients with respect to the
//! adapter weights.
//!
//! Each input is projected as `e = Wx / ‖Wx‖`. Given `g = ∂L/∂e`, the
//! gradient through the normalization is `∂L/∂z = (g − e(e·g)) / ‖Wx‖` and the
//! weight gradient accumulates `∂L/∂z · xᵀ`.

use nalgebra::DMatrix;

use super::{EmbedError, EmbeddingAdapter, Projection, Vector};

/// Two base embeddings and their target similarity (0 or 1).
#[derive(Debug, Clone)]
pub struct PairExample {
    pub a: Vector,
    pub b: Vector,
    pub label: f64,
}

#[derive(Debug, Clone)]
pub struct TripletExample {
    pub anchor: Vector,
    pub positive: Vector,
    pub negative: Vector,
}

#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: DMatrix<f64>,
}

struct Accumulator {
    grad: DMatrix<f64>,
}

impl Accumulator {
    fn new(dim: usize) -> Self {
        Accumulator {
            grad: DMatrix::zeros(dim, dim),
        }
    }

    /// Push `∂L/∂e` for one projected input back onto the weights.
    fn add(&mut self, x: &Vector, p: &Projection, grad_unit: &Vector) {
        let along = p.unit.dot(grad_unit);
        let grad_z = (grad_unit - &p.unit * along) / p.norm;
        self.grad.ger(1.0, &grad_z, x, 1.0);
    }
}

/// Mean squared residual of cosine against label.
pub fn cosine_similarity_value(cosines: &[f64], labels: &[f64]) -> f64 {
    if cosines.is_empty() {
        return 0.0;
    }
    cosines
        .iter()
        .zip(labels)
        .map(|(c, y)| (c - y).powi(2))
        .sum::<f64>()
        / cosines.len() as f64
}

/// `(cos(a, b) − label)²` averaged over the batch.
pub fn cosine_similarity_loss(
    adapter: &EmbeddingAdapter,
    batch: &[PairExample],
) -> Result<LossGrad, EmbedError> {
    let mut acc = Accumulator::new(adapter.dim());
    if batch.is_empty() {
        return Ok(LossGrad {
            loss: 0.0,
            grad: acc.grad,
        });
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        let pa = adapter.project(&ex.a)?;
        let pb = adapter.project(&ex.b)?;
        let c = pa.unit.dot(&pb.unit);
        let r = c - ex.label;
        loss += r * r * scale;
        let dc = 2.0 * r * scale;
        acc.add(&ex.a, &pa, &(&pb.unit * dc));
        acc.add(&ex.b, &pb, &(&pa.unit * dc));
    }
    Ok(LossGrad {
        loss,
        grad: acc.grad,
    })
}

/// Ranking loss `log(1 + Σ exp(τ(cos_low − cos_high)))` over every ordered
/// pair of pairs whose labels differ, where `high` has the larger label.
/// Returns 0 when no such pair-of-pairs exists.
pub fn cosine_sentence_value(cosines: &[f64], labels: &[f64], scale: f64) -> f64 {
    let terms = ranking_terms(cosines, labels, scale);
    if terms.is_empty() {
        return 0.0;
    }
    log1p_sum_exp(terms.iter().map(|t| t.2))
}

fn ranking_terms(cosines: &[f64], labels: &[f64], scale: f64) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for hi in 0..cosines.len() {
        for lo in 0..cosines.len() {
            if labels[hi] > labels[lo] {
                out.push((hi, lo, scale * (cosines[lo] - cosines[hi])));
            }
        }
    }
    out
}

/// `log(1 + Σ exp(s))`, computed stably.
fn log1p_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(0.0f64, f64::max);
    if m == 0.0 {
        return values.map(f64::exp).sum::<f64>().ln_1p();
    }
    let sum: f64 = (-m).exp() + values.map(|s| (s - m).exp()).sum::<f64>();
    m + sum.ln()
}

pub fn cosine_sentence_loss(
    adapter: &EmbeddingAdapter,
    batch: &[PairExample],
    scale: f64,
) -> Result<LossGrad, EmbedError> {
    let mut acc = Accumulator::new(adapter.dim());
    let mut projections = Vec::with_capacity(batch.len());
    let mut cosines = Vec::with_capacity(batch.len());
    let labels: Vec<f64> = batch.iter().map(|e| e.label).collect();
    for ex in batch {
        let pa = adapter.project(&ex.a)?;
        let pb = adapter.project(&ex.b)?;
        cosines.push(pa.unit.dot(&pb.unit));
        projections.push((pa, pb));
    }
    let terms = ranking_terms(&cosines, &labels, scale);
    if terms.is_empty() {
        return Ok(LossGrad {
            loss: 0.0,
            grad: acc.grad,
        });
    }
    let loss = log1p_sum_exp(terms.iter().map(|t| t.2));
    let mut dcos = vec![0.0; batch.len()];
    for (hi, lo, s) in terms {
        let w = (s - loss).exp();
        dcos[lo] += scale * w;
        dcos[hi] -= scale * w;
    }
    for ((ex, (pa, pb)), dc) in batch.iter().zip(&projections).zip(dcos) {
        if dc != 0.0 {
            acc.add(&ex.a, pa, &(&pb.unit * dc));
            acc.add(&ex.b, pb, &(&pa.unit * dc));
        }
    }
    Ok(LossGrad {
        loss,
        grad: acc.grad,
    })
}

/// `max(d(a,p) − d(a,n) + margin, 0)` for Euclidean distances.
pub fn triplet_hinge(d_ap: f64, d_an: f64, margin: f64) -> f64 {
    (d_ap - d_an + margin).max(0.0)
}

/// Triplet hinge averaged over the batch, on adapted unit embeddings.
/// At `a = p` (zero distance) the distance term contributes a zero
/// subgradient.
pub fn triplet_loss(
    adapter: &EmbeddingAdapter,
    batch: &[TripletExample],
    margin: f64,
) -> Result<LossGrad, EmbedError> {
    let mut acc = Accumulator::new(adapter.dim());
    if batch.is_empty() {
        return Ok(LossGrad {
            loss: 0.0,
            grad: acc.grad,
        });
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        let pa = adapter.project(&ex.anchor)?;
        let pp = adapter.project(&ex.positive)?;
        let pn = adapter.project(&ex.negative)?;
        let ap = &pa.unit - &pp.unit;
        let an = &pa.unit - &pn.unit;
        let (d_ap, d_an) = (ap.norm(), an.norm());
        let h = triplet_hinge(d_ap, d_an, margin);
        loss += h * scale;
        if h <= 0.0 {
            continue;
        }
        let u_ap = if d_ap > 0.0 {
            ap / d_ap
        } else {
            Vector::zeros(pa.unit.len())
        };
        let u_an = if d_an > 0.0 {
            an / d_an
        } else {
            Vector::zeros(pa.unit.len())
        };
        acc.add(&ex.anchor, &pa, &((&u_ap - &u_an) * scale));
        acc.add(&ex.positive, &pp, &(&u_ap * -scale));
        acc.add(&ex.negative, &pn, &(&u_an * scale));
    }
    Ok(LossGrad {
        loss,
        grad: acc.grad,
    })
}

/// Smallest |hinge argument| in the batch; finite-difference checks skip
/// batches that sit near the kink.
pub fn triplet_min_active_margin(
    adapter: &EmbeddingAdapter,
    batch: &[TripletExample],
    margin: f64,
) -> Result<f64, EmbedError> {
    let mut min = f64::INFINITY;
    for ex in batch {
        let a = adapter.project(&ex.anchor)?.unit;
        let p = adapter.project(&ex.positive)?.unit;
        let n = adapter.project(&ex.negative)?.unit;
        let arg = (&a - &p).norm() - (&a - &n).norm() + margin;
        min = min.min(arg.abs());
    }
    Ok(min)
}
