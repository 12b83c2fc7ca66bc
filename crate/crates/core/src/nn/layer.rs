//! Fully connected layer with optional batch normalisation and dropout.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::activation::{Activated, Activation};
use super::Scalar;
use crate::{Error, Result, SeedRng};

/// Architecture of one dense layer. `outputs` counts pre-activations, so a
/// maxout layer emits `outputs / pool` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    #[serde(default)]
    pub batch_norm: bool,
    /// Drop probability applied to the layer output while training.
    #[serde(default)]
    pub dropout: Option<f32>,
}

impl LayerSpec {
    pub fn new(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            activation,
            batch_norm: false,
            dropout: None,
        }
    }

    pub fn output_width(&self) -> usize {
        self.activation.output_width(self.outputs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs == 0 || self.outputs == 0 {
            return Err(Error::Shape(format!(
                "layer dimensions must be positive, got {}x{}",
                self.inputs, self.outputs
            )));
        }
        self.activation.validate(self.outputs).map_err(Error::Shape)?;
        if let Some(p) = self.dropout {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Parameter(format!("dropout probability {p} not in [0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
}

impl<F: Scalar> BatchNorm<F> {
    pub const EPSILON: f64 = 1e-5;

    pub fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<F> {
    /// `[inputs x outputs]`
    pub weights: Array2<F>,
    pub bias: Array1<F>,
    pub activation: Activation,
    pub norm: Option<BatchNorm<F>>,
    pub dropout: Option<f32>,
}

/// How a forward pass treats the stochastic and batch-dependent parts.
pub enum Mode<'a> {
    /// Running batch-norm statistics, no dropout.
    Eval,
    /// Batch statistics; dropout masks drawn from the generator when one is given.
    Train(Option<&'a mut SeedRng>),
}

#[derive(Clone, Debug)]
pub(crate) struct NormTrace<F> {
    pub normalized: Array2<F>,
    pub inv_std: Array1<F>,
    pub mean: Array1<F>,
    pub var: Array1<F>,
    pub batch_stats: bool,
}

/// Everything the backward pass needs from one layer's forward pass.
#[derive(Clone, Debug)]
pub struct LayerTrace<F> {
    /// Input to the activation (after normalisation when enabled).
    pub pre: Array2<F>,
    pub activated: Activated<F>,
    pub(crate) norm: Option<NormTrace<F>>,
    pub(crate) dropout_mask: Option<Array2<F>>,
    pub output: Array2<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad<F> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
    pub gamma: Option<Array1<F>>,
    pub beta: Option<Array1<F>>,
}

impl<F: Scalar> DenseLayer<F> {
    pub fn new(weights: Array2<F>, bias: Array1<F>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.ncols() {
            return Err(Error::Shape(format!(
                "bias length {} does not match {} output columns",
                bias.len(),
                weights.ncols()
            )));
        }
        activation.validate(weights.ncols()).map_err(Error::Shape)?;
        Ok(Self {
            weights: weights.as_standard_layout().into_owned(),
            bias: bias.as_standard_layout().into_owned(),
            activation,
            norm: None,
            dropout: None,
        })
    }

    /// Gaussian initialisation scaled by fan-in (He for rectifiers, LeCun otherwise).
    pub fn init(spec: &LayerSpec, rng: &mut SeedRng) -> Result<Self> {
        spec.validate()?;
        let gain = match spec.activation {
            Activation::Relu | Activation::Maxout { .. } => 2.0,
            _ => 1.0,
        };
        let std = (gain / spec.inputs as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((spec.inputs, spec.outputs), || {
            let z: f64 = rng.sample(StandardNormal);
            F::from_f64_lossy(z * std)
        });
        let mut layer = Self::new(weights, Array1::zeros(spec.outputs), spec.activation)?;
        if spec.batch_norm {
            layer.norm = Some(BatchNorm::new(spec.outputs));
        }
        layer.dropout = spec.dropout;
        Ok(layer)
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec {
            inputs: self.inputs(),
            outputs: self.weights.ncols(),
            activation: self.activation,
            batch_norm: self.norm.is_some(),
            dropout: self.dropout,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    /// Width of the layer output (after maxout pooling).
    pub fn output_width(&self) -> usize {
        self.activation.output_width(self.weights.ncols())
    }

    pub fn forward(&self, x: ArrayView2<F>, mode: &mut Mode<'_>) -> LayerTrace<F> {
        let mut pre = x.dot(&self.weights);
        pre += &self.bias;

        let norm = self.norm.as_ref().map(|bn| {
            let eps = F::from_f64_lossy(BatchNorm::<F>::EPSILON);
            let batch_stats = matches!(mode, Mode::Train(_)) && pre.nrows() > 1;
            let (mean, var) = if batch_stats {
                let mean = pre.mean_axis(Axis(0)).expect("non-empty batch");
                let var = pre.var_axis(Axis(0), F::zero());
                (mean, var)
            } else {
                (bn.running_mean.clone(), bn.running_var.clone())
            };
            let inv_std = var.mapv(|v| F::one() / (v + eps).sqrt());
            let normalized = (&pre - &mean) * &inv_std;
            pre = &normalized * &bn.gamma + &bn.beta;
            NormTrace {
                normalized,
                inv_std,
                mean,
                var,
                batch_stats,
            }
        });

        let activated = self.activation.forward(pre.view());
        let mut output = activated.output.clone();
        let mut dropout_mask = None;
        if let (Some(p), Mode::Train(Some(rng))) = (self.dropout, &mut *mode) {
            if p > 0.0 {
                let keep = F::from_f64_lossy(1.0 / (1.0 - p as f64));
                let mask = output.mapv(|_| if rng.random::<f32>() < p { F::zero() } else { keep });
                output *= &mask;
                dropout_mask = Some(mask);
            }
        }

        LayerTrace {
            pre,
            activated,
            norm,
            dropout_mask,
            output,
        }
    }

    /// Returns parameter gradients and, when asked, the gradient with respect
    /// to the layer input.
    pub fn backward(
        &self,
        input: ArrayView2<F>,
        trace: &LayerTrace<F>,
        grad_out: ArrayView2<F>,
        want_input: bool,
    ) -> (LayerGrad<F>, Option<Array2<F>>) {
        let grad_out = match &trace.dropout_mask {
            Some(mask) => &grad_out * mask,
            None => grad_out.to_owned(),
        };
        let mut grad_pre = self
            .activation
            .backward(trace.pre.view(), &trace.activated, grad_out.view());

        let mut gamma_grad = None;
        let mut beta_grad = None;
        if let (Some(bn), Some(nt)) = (&self.norm, &trace.norm) {
            let dgamma = (&grad_pre * &nt.normalized).sum_axis(Axis(0));
            let dbeta = grad_pre.sum_axis(Axis(0));
            let dnorm = &grad_pre * &bn.gamma;
            grad_pre = if nt.batch_stats {
                let n = F::from_usize(dnorm.nrows()).expect("batch size fits in a float");
                let sum_d = dnorm.sum_axis(Axis(0));
                let sum_dx = (&dnorm * &nt.normalized).sum_axis(Axis(0));
                let mut g = &dnorm * n - &sum_d - &(&nt.normalized * &sum_dx);
                g *= &(&nt.inv_std / n);
                g
            } else {
                &dnorm * &nt.inv_std
            };
            gamma_grad = Some(dgamma);
            beta_grad = Some(dbeta);
        }

        let mut weights = input.t().dot(&grad_pre);
        if !weights.is_standard_layout() {
            weights = weights.as_standard_layout().into_owned();
        }
        let grad = LayerGrad {
            weights,
            bias: grad_pre.sum_axis(Axis(0)),
            gamma: gamma_grad,
            beta: beta_grad,
        };
        let grad_input = want_input.then(|| grad_pre.dot(&self.weights.t()));
        (grad, grad_input)
    }

    pub(crate) fn update_running_stats(&mut self, trace: &LayerTrace<F>, momentum: F) {
        if let (Some(bn), Some(nt)) = (&mut self.norm, &trace.norm) {
            if nt.batch_stats {
                Zip::from(&mut bn.running_mean)
                    .and(&nt.mean)
                    .for_each(|r, &m| *r = momentum * *r + (F::one() - momentum) * m);
                Zip::from(&mut bn.running_var)
                    .and(&nt.var)
                    .for_each(|r, &v| *r = momentum * *r + (F::one() - momentum) * v);
            }
        }
    }

    pub fn cast<G: Scalar>(&self) -> DenseLayer<G> {
        let c = |a: &Array1<F>| a.mapv(|v| G::from_f64_lossy(v.to_f64_lossy()));
        DenseLayer {
            weights: self.weights.mapv(|v| G::from_f64_lossy(v.to_f64_lossy())),
            bias: c(&self.bias),
            activation: self.activation,
            norm: self.norm.as_ref().map(|bn| BatchNorm {
                gamma: c(&bn.gamma),
                beta: c(&bn.beta),
                running_mean: c(&bn.running_mean),
                running_var: c(&bn.running_var),
            }),
            dropout: self.dropout,
        }
    }
}
