//! Feed-forward stacks of dense layers and the classifier built on them.

use ndarray::{Array2, ArrayView2, Axis};

use super::layer::{DenseLayer, LayerGrad, LayerSpec, LayerTrace, Mode};
use super::{Activation, Scalar};
use crate::{Error, Result, SeedRng};

/// An ordered stack of dense layers whose widths chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<F> {
    layers: Vec<DenseLayer<F>>,
}

/// Cached activations of one forward pass, consumed by [`Network::backward`].
#[derive(Clone, Debug)]
pub struct ForwardTrace<F> {
    input: Array2<F>,
    layers: Vec<LayerTrace<F>>,
}

impl<F> ForwardTrace<F> {
    pub fn output(&self) -> &Array2<F> {
        match self.layers.last() {
            Some(l) => &l.output,
            None => &self.input,
        }
    }

    pub fn layers(&self) -> &[LayerTrace<F>] {
        &self.layers
    }

    fn layer_input(&self, i: usize) -> ArrayView2<'_, F> {
        if i == 0 {
            self.input.view()
        } else {
            self.layers[i - 1].output.view()
        }
    }
}

/// Parameter gradients, one entry per layer, same shapes as the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F> {
    pub layers: Vec<LayerGrad<F>>,
}

impl<F: Scalar> Gradients<F> {
    /// Flat views in the same order as [`Network::params_mut`].
    pub fn tensors(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.push(g.weights.as_slice().expect("standard layout"));
            out.push(g.bias.as_slice().expect("standard layout"));
            if let (Some(gamma), Some(beta)) = (&g.gamma, &g.beta) {
                out.push(gamma.as_slice().expect("standard layout"));
                out.push(beta.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn scale(&mut self, factor: F) {
        for g in &mut self.layers {
            g.weights *= factor;
            g.bias *= factor;
            if let Some(x) = &mut g.gamma {
                *x *= factor;
            }
            if let Some(x) = &mut g.beta {
                *x *= factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

impl<F: Scalar> Network<F> {
    pub fn new(layers: Vec<DenseLayer<F>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("a network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].output_width() != pair[1].inputs() {
                return Err(Error::Shape(format!(
                    "layer emits {} values but the next layer expects {}",
                    pair[0].output_width(),
                    pair[1].inputs()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn from_spec(spec: &[LayerSpec], rng: &mut SeedRng) -> Result<Self> {
        let layers = spec
            .iter()
            .map(|s| DenseLayer::init(s, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    /// Builds `input -> hidden... -> output` with the given activations.
    pub fn mlp(
        input: usize,
        hidden: &[(usize, Activation)],
        output: (usize, Activation),
        rng: &mut SeedRng,
    ) -> Result<Self> {
        let mut spec = Vec::with_capacity(hidden.len() + 1);
        let mut width = input;
        for &(units, act) in hidden.iter().chain(std::iter::once(&output)) {
            let s = LayerSpec::new(width, units, act);
            width = s.output_width();
            spec.push(s);
        }
        Self::from_spec(&spec, rng)
    }

    pub fn spec(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(DenseLayer::spec).collect()
    }

    pub fn layers(&self) -> &[DenseLayer<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<F>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_width()
    }

    fn check_input(&self, x: &ArrayView2<F>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Inference pass (no dropout, running normalisation statistics).
    pub fn forward(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_input(&x)?;
        let mut mode = Mode::Eval;
        let mut h = x.to_owned();
        for layer in &self.layers {
            h = layer.forward(h.view(), &mut mode).output;
        }
        ensure_finite(&h, "network output")?;
        Ok(h)
    }

    /// Forward pass that keeps every intermediate needed for backprop.
    pub fn forward_trace(&self, x: ArrayView2<F>, mut mode: Mode<'_>) -> Result<ForwardTrace<F>> {
        self.check_input(&x)?;
        let mut layers: Vec<LayerTrace<F>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let t = match layers.last() {
                Some(prev) => layer.forward(prev.output.view(), &mut mode),
                None => layer.forward(x.view(), &mut mode),
            };
            layers.push(t);
        }
        let trace = ForwardTrace {
            input: x.to_owned(),
            layers,
        };
        ensure_finite(trace.output(), "network output")?;
        Ok(trace)
    }

    fn check_trace(&self, trace: &ForwardTrace<F>, upstream: &ArrayView2<F>) -> Result<()> {
        let matches = trace.layers.len() == self.layers.len()
            && trace.input.ncols() == self.input_dim()
            && trace
                .layers
                .iter()
                .zip(&self.layers)
                .all(|(t, l)| t.pre.ncols() == l.weights.ncols());
        if !matches {
            return Err(Error::State(
                "forward trace was not produced by this network".into(),
            ));
        }
        if upstream.dim() != trace.output().dim() {
            return Err(Error::State(format!(
                "upstream gradient {:?} does not match the traced output {:?}",
                upstream.dim(),
                trace.output().dim()
            )));
        }
        Ok(())
    }

    fn backward_impl(
        &self,
        trace: &ForwardTrace<F>,
        upstream: ArrayView2<F>,
        want_input: bool,
    ) -> Result<(Gradients<F>, Option<Array2<F>>)> {
        self.check_trace(trace, &upstream)?;
        let n = self.layers.len();
        let mut grads = Vec::with_capacity(n);
        let mut grad = upstream.to_owned();
        let mut input_grad = None;
        for i in (0..n).rev() {
            let need = i > 0 || want_input;
            let (g, gi) = self.layers[i].backward(trace.layer_input(i), &trace.layers[i], grad.view(), need);
            grads.push(g);
            match gi {
                Some(gi) if i > 0 => grad = gi,
                other => input_grad = other,
            }
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, input_grad))
    }

    /// Parameter gradients for `upstream = dLoss/dOutput`.
    pub fn backward(&self, trace: &ForwardTrace<F>, upstream: ArrayView2<F>) -> Result<Gradients<F>> {
        Ok(self.backward_impl(trace, upstream, false)?.0)
    }

    /// Parameter gradients plus `dLoss/dInput`.
    pub fn backward_with_input(
        &self,
        trace: &ForwardTrace<F>,
        upstream: ArrayView2<F>,
    ) -> Result<(Gradients<F>, Array2<F>)> {
        let (g, gi) = self.backward_impl(trace, upstream, true)?;
        Ok((g, gi.expect("input gradient requested")))
    }

    /// Mutable flat views of every trainable tensor: per layer weights, bias
    /// and, with batch norm, gamma then beta.
    pub fn params_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weights.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
            if let Some(bn) = &mut l.norm {
                out.push(bn.gamma.as_slice_mut().expect("standard layout"));
                out.push(bn.beta.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weights.shape().to_vec());
            out.push(l.bias.shape().to_vec());
            if let Some(bn) = &l.norm {
                out.push(bn.gamma.shape().to_vec());
                out.push(bn.beta.shape().to_vec());
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    pub fn update_running_stats(&mut self, trace: &ForwardTrace<F>, momentum: F) {
        for (layer, t) in self.layers.iter_mut().zip(&trace.layers) {
            layer.update_running_stats(t, momentum);
        }
    }

    pub fn cast<G: Scalar>(&self) -> Network<G> {
        Network {
            layers: self.layers.iter().map(DenseLayer::cast).collect(),
        }
    }
}

pub(crate) fn ensure_finite<F: Scalar>(a: &Array2<F>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Feed-forward classifier: a trunk of hidden layers followed by a linear
/// softmax head whose column `p` holds the weight vector of class `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<F> {
    net: Network<F>,
}

impl<F: Scalar> Classifier<F> {
    pub fn new(net: Network<F>) -> Result<Self> {
        let head = &net.layers[net.layers.len() - 1];
        if head.activation != Activation::Identity || head.norm.is_some() || head.dropout.is_some() {
            return Err(Error::Shape(
                "classifier head must be a plain linear layer".into(),
            ));
        }
        Ok(Self { net })
    }

    /// `input -> hidden... -> linear head over num_classes`.
    pub fn mlp(
        input: usize,
        hidden: &[(usize, Activation)],
        num_classes: usize,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        Self::new(Network::mlp(input, hidden, (num_classes, Activation::Identity), rng)?)
    }

    pub fn from_spec(spec: &[LayerSpec], rng: &mut SeedRng) -> Result<Self> {
        Self::new(Network::from_spec(spec, rng)?)
    }

    pub fn network(&self) -> &Network<F> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<F> {
        &mut self.net
    }

    pub fn into_network(self) -> Network<F> {
        self.net
    }

    pub fn num_classes(&self) -> usize {
        self.net.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn trunk(&self) -> &[DenseLayer<F>] {
        let n = self.net.layers.len();
        &self.net.layers[..n - 1]
    }

    fn head(&self) -> &DenseLayer<F> {
        &self.net.layers[self.net.layers.len() - 1]
    }

    /// `[trunk_out x num_classes]`
    pub fn head_weights(&self) -> &Array2<F> {
        &self.head().weights
    }

    pub fn head_bias(&self) -> &ndarray::Array1<F> {
        &self.head().bias
    }

    pub fn logits(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        self.net.forward(x)
    }

    pub fn predict(&self, x: ArrayView2<F>) -> Result<Vec<usize>> {
        Ok(self.logits(x)?.axis_iter(Axis(0)).map(|r| argmax(r.iter().copied())).collect())
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<F: PartialOrd>(values: impl IntoIterator<Item = F>) -> usize {
    let mut best: Option<(usize, F)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match &best {
            Some((_, b)) if !(v > *b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(0, |(i, _)| i)
}
