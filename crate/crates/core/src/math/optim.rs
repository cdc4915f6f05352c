use serde::{Deserialize, Serialize};

use super::{ParamSet, Real, Tensor2};
use crate::error::{Error, Result};

/// L2 norm over every element of every tensor.
pub fn global_norm<T: Real>(grads: &[&Tensor2<T>]) -> T {
    grads.iter().map(|g| g.sum_sq()).sum::<T>().sqrt()
}

fn clip_factor<T: Real>(grads: &[&Tensor2<T>], clip: Option<T>) -> T {
    match clip {
        Some(c) if c > T::zero() => {
            let norm = global_norm(grads);
            if norm > c {
                c / norm
            } else {
                T::one()
            }
        }
        _ => T::one(),
    }
}

/// `p <- p - lr * g`, after rescaling `g` so its global norm is at most `clip`.
pub fn sgd_step<T: Real>(
    params: &mut [&mut Tensor2<T>],
    grads: &[&Tensor2<T>],
    lr: T,
    clip: Option<T>,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(
            "sgd_step",
            format!("{} parameter tensors", params.len()),
            format!("{} gradient tensors", grads.len()),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        p.check_same_shape("sgd_step", g)?;
    }
    let scale = clip_factor(grads, clip) * lr;
    for (p, g) in params.iter_mut().zip(grads) {
        p.add_scaled(g, -scale)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Stateful optimizer driving any [`ParamSet`]. Gradient-norm clipping applies
/// to both kinds before the update.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: T,
    clip: Option<T>,
    step: i32,
    moments: Vec<(Tensor2<T>, Tensor2<T>)>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, clip: Option<f64>) -> Self {
        Self {
            kind,
            lr: T::lit(lr),
            clip: clip.map(T::lit),
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = T::lit(lr);
    }

    pub fn step<P: ParamSet<T>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g = grads.tensors();
        let mut p = params.tensors_mut();
        match self.kind {
            OptimizerKind::Sgd => sgd_step(&mut p, &g, self.lr, self.clip),
            OptimizerKind::Adam => self.adam(&mut p, &g),
        }
    }

    fn adam(&mut self, params: &mut [&mut Tensor2<T>], grads: &[&Tensor2<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "adam",
                format!("{} parameter tensors", params.len()),
                format!("{} gradient tensors", grads.len()),
            ));
        }
        if self.moments.is_empty() {
            self.moments = grads
                .iter()
                .map(|g| {
                    (
                        Tensor2::zeros(g.rows(), g.cols()),
                        Tensor2::zeros(g.rows(), g.cols()),
                    )
                })
                .collect();
        }
        let (b1, b2, eps) = (T::lit(0.9), T::lit(0.999), T::lit(1e-8));
        self.step += 1;
        let bc1 = T::one() - b1.powi(self.step);
        let bc2 = T::one() - b2.powi(self.step);
        let scale = clip_factor(grads, self.clip);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.moments.iter_mut()) {
            p.check_same_shape("adam", g)?;
            let ps = p.as_mut_slice();
            let ms = m.as_mut_slice();
            let vs = v.as_mut_slice();
            for (k, &gk) in g.as_slice().iter().enumerate() {
                let gk = gk * scale;
                ms[k] = b1 * ms[k] + (T::one() - b1) * gk;
                vs[k] = b2 * vs[k] + (T::one() - b2) * gk * gk;
                let mh = ms[k] / bc1;
                let vh = vs[k] / bc2;
                ps[k] -= self.lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
