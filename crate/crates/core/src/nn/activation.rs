//! Elementwise and grouped nonlinearities.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use super::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    /// Max over contiguous groups of `pool` pre-activations.
    Maxout { pool: usize },
}

/// Result of applying an activation to a batch of pre-activations.
#[derive(Clone, Debug)]
pub struct Activated<F> {
    pub output: Array2<F>,
    /// For maxout: flat index (row-major over `[batch, units]`) of the winning
    /// pre-activation column inside each pool.
    pub winners: Option<Vec<u32>>,
}

impl Activation {
    /// Width of the activation output for `width` pre-activations.
    pub fn output_width(&self, width: usize) -> usize {
        match *self {
            Activation::Maxout { pool } => width / pool,
            _ => width,
        }
    }

    pub fn validate(&self, width: usize) -> Result<(), String> {
        match *self {
            Activation::Maxout { pool } if pool == 0 => Err("maxout pool size must be positive".into()),
            Activation::Maxout { pool } if width % pool != 0 => Err(format!(
                "maxout width {width} is not divisible by pool size {pool}"
            )),
            _ => Ok(()),
        }
    }

    pub fn forward<F: Scalar>(&self, pre: ArrayView2<F>) -> Activated<F> {
        match *self {
            Activation::Identity => Activated {
                output: pre.to_owned(),
                winners: None,
            },
            Activation::Relu => Activated {
                output: pre.mapv(|v| if v > F::zero() { v } else { F::zero() }),
                winners: None,
            },
            Activation::Tanh => Activated {
                output: pre.mapv(F::tanh),
                winners: None,
            },
            Activation::Maxout { pool } => {
                let (batch, width) = pre.dim();
                let units = width / pool;
                let mut output = Array2::zeros((batch, units));
                let mut winners = Vec::with_capacity(batch * units);
                for (row, mut out_row) in pre.outer_iter().zip(output.outer_iter_mut()) {
                    for u in 0..units {
                        let base = u * pool;
                        let mut best = base;
                        // strict comparison: ties keep the lowest index
                        for c in base + 1..base + pool {
                            if row[c] > row[best] {
                                best = c;
                            }
                        }
                        out_row[u] = row[best];
                        winners.push((best - base) as u32);
                    }
                }
                Activated {
                    output,
                    winners: Some(winners),
                }
            }
        }
    }

    /// Gradient with respect to the pre-activations.
    pub fn backward<F: Scalar>(
        &self,
        pre: ArrayView2<F>,
        activated: &Activated<F>,
        grad_out: ArrayView2<F>,
    ) -> Array2<F> {
        match *self {
            Activation::Identity => grad_out.to_owned(),
            Activation::Relu => {
                let mut g = grad_out.to_owned();
                Zip::from(&mut g).and(&pre).for_each(|g, &p| {
                    if p <= F::zero() {
                        *g = F::zero();
                    }
                });
                g
            }
            Activation::Tanh => {
                let mut g = grad_out.to_owned();
                Zip::from(&mut g)
                    .and(&activated.output)
                    .for_each(|g, &y| *g *= F::one() - y * y);
                g
            }
            Activation::Maxout { pool } => {
                let (batch, width) = pre.dim();
                let units = width / pool;
                let winners = activated
                    .winners
                    .as_ref()
                    .expect("maxout forward always records winners");
                let mut g = Array2::zeros((batch, width));
                for b in 0..batch {
                    for u in 0..units {
                        let w = winners[b * units + u] as usize;
                        g[[b, u * pool + w]] = grad_out[[b, u]];
                    }
                }
                g
            }
        }
    }

    /// Discrete pattern that determines the local linear piece (relu signs,
    /// maxout winners). Finite differences are only valid while it is stable.
    pub(crate) fn pattern<F: Scalar>(&self, pre: ArrayView2<F>, activated: &Activated<F>) -> Vec<u32> {
        match *self {
            Activation::Relu => pre.iter().map(|&p| (p > F::zero()) as u32).collect(),
            Activation::Maxout { .. } => activated.winners.clone().unwrap_or_default(),
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn maxout_reduces_width_and_picks_max() {
        let act = Activation::Maxout { pool: 3 };
        let pre = array![[1.0f32, 5.0, 2.0, -1.0, -3.0, -2.0]];
        let a = act.forward(pre.view());
        assert_eq!(a.output, array![[5.0f32, -1.0]]);
        assert_eq!(a.winners.as_deref(), Some(&[1u32, 0][..]));
    }

    #[test]
    fn maxout_tie_routes_gradient_to_lowest_index() {
        let act = Activation::Maxout { pool: 2 };
        let pre = array![[0.5f64, 0.5, 2.0, 2.0]];
        let a = act.forward(pre.view());
        let g = act.backward(pre.view(), &a, array![[1.0, -3.0]].view());
        assert_eq!(g, array![[1.0, 0.0, -3.0, 0.0]]);
    }

    #[test]
    fn maxout_width_must_divide() {
        assert!(Activation::Maxout { pool: 5 }.validate(12).is_err());
        assert!(Activation::Maxout { pool: 0 }.validate(12).is_err());
        assert!(Activation::Maxout { pool: 4 }.validate(12).is_ok());
        assert_eq!(Activation::Maxout { pool: 4 }.output_width(12), 3);
    }

    #[test]
    fn relu_gradient_is_zero_at_and_below_zero() {
        let pre = array![[-1.0f32, 0.0, 2.0]];
        let a = Activation::Relu.forward(pre.view());
        let g = Activation::Relu.backward(pre.view(), &a, array![[1.0, 1.0, 1.0]].view());
        assert_eq!(g, array![[0.0f32, 0.0, 1.0]]);
    }
}
