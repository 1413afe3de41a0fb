use super::GradientSet;
use crate::cnn::CnnParams;
use crate::error::{Error, Result};

/// Bias-corrected Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &CnnParams, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.data.len()])
            .collect();
        Self {
            t: 0,
            m: zeros.clone(),
            v: zeros,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update in place. Nothing is modified when a gradient is
    /// non-finite or shapes disagree.
    pub fn step(&mut self, params: &mut CnnParams, grads: &GradientSet) -> Result<()> {
        if grads.tensors.len() != self.m.len() || params.tensors().len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                tensor: "gradient set".into(),
            });
        }
        for ((g, p), m) in grads.tensors.iter().zip(params.tensors()).zip(&self.m) {
            if g.data.len() != p.data.len() || g.data.len() != m.len() || g.name != p.name {
                return Err(Error::ShapeMismatch {
                    tensor: g.name.clone(),
                });
            }
            if g.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    tensor: g.name.clone(),
                });
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params
            .tensors_mut()
            .iter_mut()
            .zip(&grads.tensors)
            .enumerate()
        {
            for (i, (w, &gi)) in p.data.iter_mut().zip(&g.data).enumerate() {
                let m = self.beta1 * self.m[k][i] + (1.0 - self.beta1) * gi;
                let v = self.beta2 * self.v[k][i] + (1.0 - self.beta2) * gi * gi;
                self.m[k][i] = m;
                self.v[k][i] = v;
                *w -= self.lr * (m / bc1) / ((v / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(
    state: &AdamState,
    params: &CnnParams,
    grads: &GradientSet,
) -> Result<(CnnParams, AdamState)> {
    let mut s = state.clone();
    let mut p = params.clone();
    s.step(&mut p, grads)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let p = CnnParams::init(1);
        let s = AdamState::new(&p, 1e-3);
        let (q, s2) = adam_step(&s, &p, &GradientSet::zeros_like(&p)).unwrap();
        assert_eq!(p, q);
        assert_eq!(s2.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let p = CnnParams::zeros();
        let mut g = GradientSet::zeros_like(&p);
        g.tensors[2].data[0] = 50.0;
        g.tensors[2].data[1] = -3.0;
        let s = AdamState::new(&p, 1e-3);
        let (q, _) = adam_step(&s, &p, &g).unwrap();
        assert!((q.tensors()[2].data[0] + 1e-3).abs() < 1e-10);
        assert!((q.tensors()[2].data[1] - 1e-3).abs() < 1e-10);
        assert_eq!(q.tensors()[2].data[2], 0.0);
    }

    #[test]
    fn deterministic_and_rejects_non_finite() {
        let p = CnnParams::init(3);
        let mut g = GradientSet::zeros_like(&p);
        for (i, t) in g.tensors.iter_mut().enumerate() {
            t.data
                .iter_mut()
                .enumerate()
                .for_each(|(j, x)| *x = ((i + j) % 5) as f64 - 2.0);
        }
        let s = AdamState::new(&p, 1e-3);
        assert_eq!(
            adam_step(&s, &p, &g).unwrap(),
            adam_step(&s, &p, &g).unwrap()
        );
        let (_, s2) = adam_step(&s, &p, &g).unwrap();
        assert!(s2.v.iter().flatten().all(|&v| v >= 0.0));

        g.tensors[7].data[0] = f64::NAN;
        match adam_step(&s, &p, &g) {
            Err(Error::NonFiniteGradient { tensor }) => assert_eq!(tensor, "prelu_1"),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }
}
