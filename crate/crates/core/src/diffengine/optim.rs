//! Adam with decoupled weight decay, per-group base rates and an epoch-level
//! linear-warmup / cosine schedule.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Learning rate for `epoch`: linear warmup to `base_lr` over `warmup`
/// epochs, then a half-cosine decay to zero at `total`.
pub fn lr_schedule<T: Scalar>(epoch: usize, base_lr: T, warmup: usize, total: usize) -> Result<T> {
    if total <= warmup {
        return Err(Error::invalid(format!(
            "total epochs ({total}) must exceed warmup epochs ({warmup})"
        )));
    }
    if epoch >= total {
        return Err(Error::invalid(format!("epoch {epoch} outside 0..{total}")));
    }
    if epoch < warmup {
        return Ok(base_lr * T::from_usize_lossy(epoch + 1) / T::from_usize_lossy(warmup));
    }
    let progress = T::from_usize_lossy(epoch - warmup) / T::from_usize_lossy(total - warmup);
    Ok(base_lr * T::lit(0.5) * (T::one() + (T::PI() * progress).cos()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        Self {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            weight_decay: T::lit(1e-4),
        }
    }
}

/// Moments, step counter and parameter-group schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig<T>,
    pub step: u64,
    pub first_moment: Vec<Array2<T>>,
    pub second_moment: Vec<Array2<T>>,
    /// Group id of each parameter tensor.
    pub groups: Vec<usize>,
    /// Base learning rate per group.
    pub base_lrs: Vec<T>,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(
        config: AdamConfig<T>,
        shapes: &[(usize, usize)],
        groups: Vec<usize>,
        base_lrs: Vec<T>,
        warmup_epochs: usize,
        total_epochs: usize,
    ) -> Result<Self> {
        if groups.len() != shapes.len() {
            return Err(Error::LengthMismatch {
                what: "parameter groups",
                expected: shapes.len(),
                actual: groups.len(),
            });
        }
        if let Some(&g) = groups.iter().find(|&&g| g >= base_lrs.len()) {
            return Err(Error::invalid(format!("group {g} has no base learning rate")));
        }
        if total_epochs <= warmup_epochs {
            return Err(Error::invalid("total epochs must exceed warmup epochs"));
        }
        Ok(Self {
            config,
            step: 0,
            first_moment: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            second_moment: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            groups,
            base_lrs,
            warmup_epochs,
            total_epochs,
        })
    }

    /// Scheduled rate of `group` at `epoch`.
    pub fn learning_rate(&self, group: usize, epoch: usize) -> Result<T> {
        lr_schedule(epoch, self.base_lrs[group], self.warmup_epochs, self.total_epochs)
    }

    /// One bias-corrected Adam update of every parameter tensor in place.
    pub fn adam_step(&mut self, epoch: usize, params: &mut [&mut Array2<T>], grads: &[Array2<T>]) -> Result<()> {
        if params.len() != self.groups.len() || grads.len() != self.groups.len() {
            return Err(Error::LengthMismatch {
                what: "parameter tensors",
                expected: self.groups.len(),
                actual: params.len().min(grads.len()),
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.dim() != g.dim() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.dim(),
                    rhs: g.dim(),
                });
            }
        }
        let lrs: Vec<T> = (0..self.base_lrs.len())
            .map(|grp| self.learning_rate(grp, epoch))
            .collect::<Result<_>>()?;
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bc1 = T::one() - beta1.powi(t);
        let bc2 = T::one() - beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let lr = lrs[self.groups[i]];
            Zip::from(&mut **p)
                .and(&mut self.first_moment[i])
                .and(&mut self.second_moment[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = beta1 * *m + (T::one() - beta1) * g;
                    *v = beta2 * *v + (T::one() - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *p);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn schedule_examples() {
        let base = 0.02f64;
        assert_abs_diff_eq!(lr_schedule(9, base, 10, 100).unwrap(), base, epsilon = 1e-15);
        assert_abs_diff_eq!(lr_schedule(0, base, 10, 100).unwrap(), base / 10.0, epsilon = 1e-15);
        assert_abs_diff_eq!(lr_schedule(10, base, 10, 100).unwrap(), base, epsilon = 1e-15);
        assert_abs_diff_eq!(lr_schedule(55, base, 10, 100).unwrap(), base / 2.0, epsilon = 1e-15);
        let last = lr_schedule(99, base, 10, 100).unwrap();
        let bound = base * 0.5 * (1.0 + (std::f64::consts::PI * (1.0 - 1.0 / 90.0)).cos());
        assert_abs_diff_eq!(last, bound, epsilon = 1e-15);
        let tail: Vec<f64> = (10..100).map(|e| lr_schedule(e, base, 10, 100).unwrap()).collect();
        assert!(tail.windows(2).all(|w| w[1] <= w[0]));
        assert!(lr_schedule(0, base, 10, 10).is_err());
        assert!(lr_schedule(100, base, 10, 100).is_err());
    }

    fn single(lr: f64, wd: f64) -> OptimizerState<f64> {
        OptimizerState::new(
            AdamConfig {
                weight_decay: wd,
                ..Default::default()
            },
            &[(1, 2)],
            vec![0],
            vec![lr],
            1,
            1000,
        )
        .unwrap()
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut opt = single(0.1, 0.0);
        let mut p = Array2::from_shape_vec((1, 2), vec![1.5, -2.0]).unwrap();
        let before = p.clone();
        let g = Array2::zeros((1, 2));
        for e in 0..5 {
            opt.adam_step(e, &mut [&mut p], std::slice::from_ref(&g)).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = single(0.1, 0.0);
        let mut p = Array2::from_shape_vec((1, 2), vec![1.0, 1.0]).unwrap();
        let g = Array2::from_shape_vec((1, 2), vec![3.0, -0.002]).unwrap();
        opt.adam_step(1, &mut [&mut p], &[g]).unwrap();
        assert_abs_diff_eq!(p[[0, 0]], 0.9, epsilon = 1e-8);
        assert_abs_diff_eq!(p[[0, 1]], 1.1, epsilon = 1e-5);
    }

    #[test]
    fn quadratic_descends_after_warmup() {
        let mut opt = OptimizerState::new(AdamConfig::default(), &[(1, 1)], vec![0], vec![0.05f64], 5, 200).unwrap();
        let mut x = Array2::from_elem((1, 1), 3.0);
        let mut objective = Vec::new();
        for e in 0..100 {
            let g = x.mapv(|v| 2.0 * v);
            opt.adam_step(e, &mut [&mut x], &[g]).unwrap();
            objective.push(x[[0, 0]] * x[[0, 0]]);
        }
        assert!(objective[5..].windows(2).all(|w| w[1] < w[0]));
        assert_eq!(opt.step, 100);
    }

    #[test]
    fn groups_use_their_own_rates() {
        let mut opt = OptimizerState::new(
            AdamConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            &[(1, 1), (1, 1)],
            vec![0, 1],
            vec![1e-3, 2e-2],
            1,
            10,
        )
        .unwrap();
        let mut a = Array2::zeros((1, 1));
        let mut b = Array2::zeros((1, 1));
        let g = Array2::from_elem((1, 1), 1.0);
        opt.adam_step(0, &mut [&mut a, &mut b], &[g.clone(), g]).unwrap();
        assert_abs_diff_eq!(a[[0, 0]], -1e-3, epsilon = 1e-9);
        assert_abs_diff_eq!(b[[0, 0]], -2e-2, epsilon = 1e-9);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let mut opt = single(0.1, 0.0);
        let mut p = Array2::zeros((1, 2));
        let g = Array2::zeros((2, 1));
        assert!(opt.adam_step(0, &mut [&mut p], &[g]).is_err());
    }
}
