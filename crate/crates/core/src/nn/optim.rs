//! Parameter update rules.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::{Gradients, Network, Scalar};
use crate::{Error, Result};

/// Learning rate as a function of the epoch index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { rate: f64 },
    /// `rate * factor^(epoch / every)`
    StepDecay { rate: f64, factor: f64, every: usize },
}

impl LrSchedule {
    pub fn rate_at(&self, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant { rate } => rate,
            LrSchedule::StepDecay { rate, factor, every } => {
                rate * factor.powi((epoch / every.max(1)) as i32)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Constant { rate } => rate > 0.0 && rate.is_finite(),
            LrSchedule::StepDecay { rate, factor, every } => {
                rate > 0.0 && rate.is_finite() && factor > 0.0 && factor <= 1.0 && every > 0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid learning-rate schedule {self:?}")))
        }
    }
}

/// Anything that turns gradients into parameter updates.
pub trait Optimizer<F: Scalar> {
    fn step(&mut self, params: Vec<&mut [F]>, grads: Vec<&[F]>) -> Result<()>;

    fn step_network(&mut self, net: &mut Network<F>, grads: &Gradients<F>) -> Result<()> {
        self.step(net.params_mut(), grads.tensors())
    }
}

fn check_step<F: Scalar>(shapes: &[ArrayD<F>], params: &[&mut [F]], grads: &[&[F]]) -> Result<()> {
    if params.len() != shapes.len() || grads.len() != shapes.len() {
        return Err(Error::Shape(format!(
            "optimizer tracks {} tensors, got {} parameters and {} gradients",
            shapes.len(),
            params.len(),
            grads.len()
        )));
    }
    for ((state, p), g) in shapes.iter().zip(params).zip(grads) {
        if state.len() != p.len() || state.len() != g.len() {
            return Err(Error::Shape(format!(
                "tensor of {} values updated with {} parameters / {} gradients",
                state.len(),
                p.len(),
                g.len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
    }
    Ok(())
}

/// Stochastic gradient descent with classical momentum:
/// `v <- momentum * v - lr * g; p <- p + v`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<F> {
    pub learning_rate: F,
    pub momentum: F,
    velocity: Vec<ArrayD<F>>,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(shapes: &[Vec<usize>], learning_rate: F, momentum: F) -> Result<Self> {
        if !(learning_rate > F::zero()) {
            return Err(Error::Parameter(format!("learning rate {learning_rate} must be positive")));
        }
        if !(momentum >= F::zero() && momentum < F::one()) {
            return Err(Error::Parameter(format!("momentum {momentum} not in [0, 1)")));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: shapes.iter().map(|s| ArrayD::zeros(s.as_slice())).collect(),
        })
    }

    pub fn for_network(net: &Network<F>, learning_rate: F, momentum: F) -> Result<Self> {
        Self::new(&net.param_shapes(), learning_rate, momentum)
    }

    pub fn velocity(&self) -> &[ArrayD<F>] {
        &self.velocity
    }
}

impl<F: Scalar> Optimizer<F> for OptimizerState<F> {
    fn step(&mut self, params: Vec<&mut [F]>, grads: Vec<&[F]>) -> Result<()> {
        check_step(&self.velocity, &params, &grads)?;
        let (lr, mu) = (self.learning_rate, self.momentum);
        for ((v, p), g) in self.velocity.iter_mut().zip(params).zip(grads) {
            let v = v.as_slice_mut().expect("standard layout");
            for ((v, p), &g) in v.iter_mut().zip(p.iter_mut()).zip(g) {
                *v = mu * *v - lr * g;
                *p += *v;
            }
        }
        Ok(())
    }
}

/// Adam, used for the adversarial networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    pub learning_rate: F,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
    steps: i32,
    first: Vec<ArrayD<F>>,
    second: Vec<ArrayD<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(shapes: &[Vec<usize>], learning_rate: F, beta1: F, beta2: F) -> Result<Self> {
        if !(learning_rate > F::zero()) {
            return Err(Error::Parameter(format!("learning rate {learning_rate} must be positive")));
        }
        for b in [beta1, beta2] {
            if !(b >= F::zero() && b < F::one()) {
                return Err(Error::Parameter(format!("Adam decay {b} not in [0, 1)")));
            }
        }
        let zeros = || shapes.iter().map(|s| ArrayD::zeros(s.as_slice())).collect();
        Ok(Self {
            learning_rate,
            beta1,
            beta2,
            epsilon: F::from_f64_lossy(1e-8),
            steps: 0,
            first: zeros(),
            second: zeros(),
        })
    }

    pub fn for_network(net: &Network<F>, learning_rate: F, beta1: F, beta2: F) -> Result<Self> {
        Self::new(&net.param_shapes(), learning_rate, beta1, beta2)
    }
}

impl<F: Scalar> Optimizer<F> for Adam<F> {
    fn step(&mut self, params: Vec<&mut [F]>, grads: Vec<&[F]>) -> Result<()> {
        check_step(&self.first, &params, &grads)?;
        self.steps += 1;
        let one = F::one();
        let c1 = one - self.beta1.powi(self.steps);
        let c2 = one - self.beta2.powi(self.steps);
        let step = self.learning_rate * c2.sqrt() / c1;
        for (((m, v), p), g) in self.first.iter_mut().zip(&mut self.second).zip(params).zip(grads) {
            let m = m.as_slice_mut().expect("standard layout");
            let v = v.as_slice_mut().expect("standard layout");
            for (((m, v), p), &g) in m.iter_mut().zip(v.iter_mut()).zip(p.iter_mut()).zip(g) {
                *m = self.beta1 * *m + (one - self.beta1) * g;
                *v = self.beta2 * *v + (one - self.beta2) * g * g;
                *p -= step * *m / (v.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_step(state: &mut OptimizerState<f64>, p: &mut f64, g: f64) {
        let mut ps = [*p];
        state.step(vec![&mut ps[..]], vec![&[g][..]]).unwrap();
        *p = ps[0];
    }

    #[test]
    fn plain_sgd_step() {
        let mut s = OptimizerState::new(&[vec![1]], 0.1, 0.0).unwrap();
        let mut p = 1.0;
        scalar_step(&mut s, &mut p, 1.0);
        assert!((p - 0.9).abs() < 1e-15);
    }

    #[test]
    fn momentum_recurrence_two_steps() {
        // v1 = -0.1, p1 = -0.1; v2 = 0.9 * -0.1 - 0.1 = -0.19, p2 = -0.29
        let mut s = OptimizerState::new(&[vec![1]], 0.1, 0.9).unwrap();
        let mut p = 0.0;
        scalar_step(&mut s, &mut p, 1.0);
        scalar_step(&mut s, &mut p, 1.0);
        assert!((p + 0.29).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_decays_velocity_only_through_momentum() {
        let mut s = OptimizerState::new(&[vec![1]], 0.1, 0.5).unwrap();
        let mut p = 0.0;
        scalar_step(&mut s, &mut p, 1.0);
        let before = p;
        let v_before = s.velocity()[0][[0]];
        scalar_step(&mut s, &mut p, 0.0);
        assert_eq!(s.velocity()[0][[0]], 0.5 * v_before);
        assert_eq!(p, before + 0.5 * v_before);

        // from rest, a zero gradient leaves everything untouched
        let mut s = OptimizerState::new(&[vec![2]], 0.1, 0.9).unwrap();
        let mut ps = [1.5, -2.0];
        s.step(vec![&mut ps[..]], vec![&[0.0, 0.0][..]]).unwrap();
        assert_eq!(ps, [1.5, -2.0]);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut s = OptimizerState::new(&[vec![1]], 0.1, 0.0).unwrap();
        let mut ps = [1.0f32];
        let err = s.step(vec![&mut ps[..]], vec![&[f32::NAN][..]]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(ps, [1.0]);
    }

    #[test]
    fn velocity_shapes_mirror_parameters() {
        let shapes = vec![vec![3, 4], vec![4]];
        let s = OptimizerState::<f32>::new(&shapes, 0.1, 0.9).unwrap();
        let got: Vec<Vec<usize>> = s.velocity().iter().map(|v| v.shape().to_vec()).collect();
        assert_eq!(got, shapes);
    }

    #[test]
    fn step_decay_schedule() {
        let s = LrSchedule::StepDecay { rate: 0.1, factor: 0.5, every: 2 };
        assert_eq!(s.rate_at(0), 0.1);
        assert_eq!(s.rate_at(1), 0.1);
        assert_eq!(s.rate_at(2), 0.05);
        assert_eq!(s.rate_at(5), 0.025);
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(OptimizerState::<f32>::new(&[], 0.0, 0.9).is_err());
        assert!(OptimizerState::<f32>::new(&[], 0.1, 1.0).is_err());
        assert!(Adam::<f32>::new(&[], 0.1, 1.0, 0.9).is_err());
    }
}
