//! Softmax heads and the two training losses.

use ndarray::{Array2, ArrayView2, Axis, Zip};

use super::Scalar;
use crate::{Error, Result};

/// Probability floor inside the log of the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

fn check_finite<F: Scalar>(a: &ArrayView2<F>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax<F: Scalar>(logits: ArrayView2<F>) -> Result<Array2<F>> {
    check_finite(&logits, "softmax logits")?;
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    Ok(out)
}

/// Softmax of `logits / temperature`. Temperatures below one are rejected.
pub fn temperature_softmax<F: Scalar>(logits: ArrayView2<F>, temperature: F) -> Result<Array2<F>> {
    if !(temperature >= F::one()) || !temperature.is_finite() {
        return Err(Error::Parameter(format!(
            "temperature must be a finite value >= 1, got {temperature}"
        )));
    }
    if temperature == F::one() {
        return softmax(logits);
    }
    check_finite(&logits, "temperature softmax logits")?;
    softmax((&logits / temperature).view())
}

/// Back-propagates `grad_probs = dL/dp` through `p = softmax(z / T)`.
pub fn temperature_softmax_backward<F: Scalar>(
    probs: ArrayView2<F>,
    grad_probs: ArrayView2<F>,
    temperature: F,
) -> Result<Array2<F>> {
    if probs.dim() != grad_probs.dim() {
        return Err(Error::Shape(format!(
            "probabilities {:?} vs gradient {:?}",
            probs.dim(),
            grad_probs.dim()
        )));
    }
    let mut out = Array2::zeros(probs.dim());
    for ((p, g), mut o) in probs
        .axis_iter(Axis(0))
        .zip(grad_probs.axis_iter(Axis(0)))
        .zip(out.axis_iter_mut(Axis(0)))
    {
        let dot: F = p.iter().zip(g.iter()).map(|(&a, &b)| a * b).sum();
        Zip::from(&mut o)
            .and(&p)
            .and(&g)
            .for_each(|o, &p, &g| *o = p * (g - dot) / temperature);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct CrossEntropy<F> {
    /// Mean negative log-likelihood over the batch.
    pub loss: F,
    /// Gradient with respect to the logits that produced `probs`.
    pub grad_logits: Array2<F>,
    /// Targets whose probability had to be raised to [`PROB_FLOOR`].
    pub clamped: usize,
}

/// Categorical cross-entropy of softmax probabilities against integer labels.
pub fn cross_entropy<F: Scalar>(probs: ArrayView2<F>, labels: &[usize]) -> Result<CrossEntropy<F>> {
    let (batch, classes) = probs.dim();
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if batch == 0 {
        return Err(Error::Data("cross-entropy of an empty batch".into()));
    }
    check_finite(&probs, "cross-entropy probabilities")?;
    let floor = F::from_f64_lossy(PROB_FLOOR);
    let scale = F::one() / F::from_usize(batch).expect("batch size fits in a float");
    let mut loss = F::zero();
    let mut clamped = 0;
    let mut grad = probs.to_owned();
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Label {
                label,
                lo: 0,
                hi: classes,
            });
        }
        let p = probs[[i, label]];
        let p = if p < floor {
            clamped += 1;
            floor
        } else {
            p
        };
        loss -= p.ln();
        grad[[i, label]] -= F::one();
    }
    grad *= scale;
    Ok(CrossEntropy {
        loss: loss * scale,
        grad_logits: grad,
        clamped,
    })
}

#[derive(Clone, Debug)]
pub struct SoftTargetLoss<F> {
    /// Mean squared error over batch and components.
    pub mse: F,
    /// Gradient of `mse` with respect to the predictions.
    pub grad: Array2<F>,
}

impl<F: Scalar> SoftTargetLoss<F> {
    pub fn rmse(&self) -> F {
        self.mse.sqrt()
    }
}

/// Squared-error regression of predicted distributions onto soft targets.
pub fn soft_target_loss<F: Scalar>(pred: ArrayView2<F>, target: ArrayView2<F>) -> Result<SoftTargetLoss<F>> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Data("soft-target loss of an empty batch".into()));
    }
    let n = F::from_usize(pred.len()).expect("element count fits in a float");
    let diff = &pred - &target;
    let mse = diff.iter().map(|&d| d * d).sum::<F>() / n;
    let grad = diff * (F::from_f64_lossy(2.0) / n);
    if !mse.is_finite() {
        return Err(Error::NonFinite("soft-target loss".into()));
    }
    Ok(SoftTargetLoss { mse, grad })
}

/// Binary cross-entropy on logits `[B x 1]` against a constant target.
/// Returns the mean loss and its gradient with respect to the logits.
pub fn binary_cross_entropy_with_logits<F: Scalar>(logits: ArrayView2<F>, target: F) -> Result<(F, Array2<F>)> {
    check_finite(&logits, "discriminator logits")?;
    let n = F::from_usize(logits.len().max(1)).expect("batch size fits in a float");
    let mut loss = F::zero();
    let grad = logits.mapv(|z| {
        // log(1 + e^-|z|) + max(z, 0) - z * t
        loss += (F::one() + (-z.abs()).exp()).ln() + z.max(F::zero()) - z * target;
        (sigmoid(z) - target) / n
    });
    Ok((loss / n, grad))
}

pub fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_logits_give_uniform_distribution() {
        let p = softmax(array![[0.0f64, 0.0, 0.0]].view()).unwrap();
        for v in p.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ln2_gap_gives_two_thirds() {
        let p = softmax(array![[2.0f64.ln(), 0.0]].view()).unwrap();
        assert!((p[[0, 0]] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[[0, 1]] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let p = softmax(array![[100.0f64, 0.0]].view()).unwrap();
        // e^-100 ~ 3.72e-44
        assert!((p[[0, 0]] - 1.0).abs() < 1e-15);
        assert!(p[[0, 1]] < 1e-40 && p[[0, 1]] > 0.0);
        let p32 = softmax(array![[100.0f32, 0.0]].view()).unwrap();
        assert!(p32.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn non_finite_logits_are_rejected() {
        assert!(matches!(
            softmax(array![[f64::NAN, 0.0]].view()),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            softmax(array![[f32::INFINITY, 0.0]].view()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn temperature_two_closed_form() {
        let p = temperature_softmax(array![[2.0f64, 0.0]].view(), 2.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p[[0, 0]] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[[0, 0]] - 0.73106).abs() < 1e-5);
        assert!((p[[0, 1]] - 0.26894).abs() < 1e-5);
    }

    #[test]
    fn high_temperature_flattens() {
        let p = temperature_softmax(array![[5.0f64, 1.0]].view(), 1000.0).unwrap();
        assert!((p[[0, 0]] - 0.5).abs() < 1e-3 && (p[[0, 1]] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn temperature_below_one_is_rejected() {
        assert!(matches!(
            temperature_softmax(array![[1.0f32, 0.0]].view(), 0.5),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn cross_entropy_values() {
        let ce = cross_entropy(array![[1.0f64, 0.0]].view(), &[0]).unwrap();
        assert_eq!(ce.loss, 0.0);
        let ce = cross_entropy(array![[0.5f64, 0.5]].view(), &[1]).unwrap();
        assert!((ce.loss - 0.693147).abs() < 1e-6);
        assert_eq!(ce.grad_logits, array![[0.5, -0.5]]);
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let ce = cross_entropy(array![[1.0f64, 0.0], [0.0, 1.0]].view(), &[1, 1]).unwrap();
        assert_eq!(ce.clamped, 1);
        assert!((ce.loss - (-(1e-12f64).ln() / 2.0)).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        assert!(matches!(
            cross_entropy(array![[0.5f32, 0.5]].view(), &[2]),
            Err(Error::Label { label: 2, .. })
        ));
    }

    #[test]
    fn soft_target_values() {
        let l = soft_target_loss(array![[0.3f64, 0.7]].view(), array![[0.3, 0.7]].view()).unwrap();
        assert_eq!(l.mse, 0.0);
        let l = soft_target_loss(array![[1.0f64, 0.0]].view(), array![[0.0, 1.0]].view()).unwrap();
        assert_eq!(l.mse, 1.0);
        assert_eq!(l.rmse(), 1.0);
        assert!(soft_target_loss(array![[1.0f64, 0.0]].view(), array![[1.0]].view()).is_err());
    }

    #[test]
    fn bce_matches_naive_formula() {
        let z = array![[0.3f64], [-2.0]];
        let (loss, _) = binary_cross_entropy_with_logits(z.view(), 1.0).unwrap();
        let naive = -((sigmoid(0.3f64)).ln() + (sigmoid(-2.0f64)).ln()) / 2.0;
        assert!((loss - naive).abs() < 1e-12);
        let (loss, _) = binary_cross_entropy_with_logits(z.view(), 0.0).unwrap();
        let naive = -((1.0 - sigmoid(0.3f64)).ln() + (1.0 - sigmoid(-2.0f64)).ln()) / 2.0;
        assert!((loss - naive).abs() < 1e-12);
    }
}
