use serde::{Deserialize, Serialize};

use crate::autodiff::DenseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid AdamW settings {self:?}")));
        }
        Ok(())
    }
}

/// Moment estimates for a fixed list of parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
    t: u64,
}

impl AdamWState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a DenseMatrix>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (DenseMatrix::zeros(p.rows(), p.cols()), DenseMatrix::zeros(p.rows(), p.cols())))
            .unzip();
        AdamWState { m, v, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One decoupled-weight-decay Adam update:
    ///
    /// ```text
    /// m ← β1 m + (1-β1) g
    /// v ← β2 v + (1-β2) g²
    /// θ ← θ - lr (m̂ / (√v̂ + eps) + λ θ)
    /// ```
    pub fn step(&mut self, params: &mut [&mut DenseMatrix], grads: &[DenseMatrix], cfg: &AdamWConfig) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} blocks, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(Error::Shape {
                    op: "adamw_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            for (mj, gj) in m.iter_mut().zip(g) {
                *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
            }
            let v = self.v[i].data_mut();
            for (vj, gj) in v.iter_mut().zip(g) {
                *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
            }
            let (m, v) = (self.m[i].data(), self.v[i].data());
            for ((theta, mj), vj) in p.data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mj / bc1;
                let v_hat = vj / bc2;
                *theta -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * *theta);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64) -> AdamWConfig {
        AdamWConfig {
            lr,
            weight_decay: wd,
            ..Default::default()
        }
    }

    #[test]
    fn first_step_by_hand() {
        // m̂ = 2, v̂ = 4: θ' = 1 - 0.1 * 2 / (2 + 1e-8)
        let mut theta = DenseMatrix::scalar(1.0);
        let mut st = AdamWState::new([&theta]);
        st.step(&mut [&mut theta], &[DenseMatrix::scalar(2.0)], &cfg(0.1, 0.0)).unwrap();
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((theta.item() - expected).abs() < 1e-15);
        assert!((theta.item() - 0.9).abs() < 1e-8);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let mut theta = DenseMatrix::row_vector(&[1.0, -2.0]);
        let mut st = AdamWState::new([&theta]);
        st.step(&mut [&mut theta], &[DenseMatrix::zeros(1, 2)], &cfg(0.1, 0.0)).unwrap();
        assert_eq!(theta.data(), &[1.0, -2.0]);
    }

    #[test]
    fn zero_gradient_with_decay_shrinks() {
        let mut theta = DenseMatrix::scalar(3.0);
        let mut st = AdamWState::new([&theta]);
        st.step(&mut [&mut theta], &[DenseMatrix::scalar(0.0)], &cfg(0.1, 0.5)).unwrap();
        assert!((theta.item() - 3.0 * (1.0 - 0.1 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut theta = DenseMatrix::scalar(1.0);
        let mut st = AdamWState::new([&theta]);
        assert!(st.step(&mut [&mut theta], &[DenseMatrix::zeros(1, 2)], &cfg(0.1, 0.0)).is_err());
        assert!(st.step(&mut [], &[], &cfg(0.1, 0.0)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AdamWConfig::default().validate().is_ok());
        assert!(cfg(0.0, 0.0).validate().is_err());
        assert!(AdamWConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
    }
}
