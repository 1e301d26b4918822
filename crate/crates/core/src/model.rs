//! Dense classifiers whose outputs are per-class energies.
//!
//! A [`ModelParams`] is either a single affine map `E = W x + b` or a one
//! hidden layer network `E = W2 tanh(W1 x + b1) + b2`. Parameters are stored
//! layer by layer, weights row-major (`outputs x inputs`) followed by the
//! optional bias; [`ModelParams::flat`] and friends use that order.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::energy::EnergyVector;
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    /// One `tanh` hidden layer of the given width.
    OneHiddenLayer { hidden: usize },
}

/// Affine layer `out = W in + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub outputs: usize,
    pub inputs: usize,
    pub weights: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(outputs: usize, inputs: usize, bias: bool) -> Self {
        Self {
            outputs,
            inputs,
            weights: vec![T::zero(); outputs * inputs],
            bias: bias.then(|| vec![T::zero(); outputs]),
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.weights[r * self.inputs..(r + 1) * self.inputs]
    }

    fn apply(&self, input: &[T]) -> Vec<T> {
        (0..self.outputs)
            .map(|r| {
                let b = self.bias.as_ref().map_or(T::zero(), |b| b[r]);
                dot(self.row(r), input) + b
            })
            .collect()
    }

    fn len(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    fn iter(&self) -> impl Iterator<Item = &T> {
        self.weights.iter().chain(self.bias.iter().flatten())
    }

    fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights.iter_mut().chain(self.bias.iter_mut().flatten())
    }
}

/// Parameters of an energy-based classifier over `dim`-dimensional inputs and
/// `classes` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    architecture: Architecture,
    dim: usize,
    classes: usize,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// All-zero parameters. Every class energy is 0 for every input.
    pub fn zeros(architecture: Architecture, dim: usize, classes: usize, bias: bool) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidModel("input dimension must be positive".into()));
        }
        if classes < 2 {
            return Err(Error::InvalidModel(format!("need at least 2 classes, got {classes}")));
        }
        let layers = match architecture {
            Architecture::Linear => vec![Layer::zeros(classes, dim, bias)],
            Architecture::OneHiddenLayer { hidden } => {
                if hidden == 0 {
                    return Err(Error::InvalidModel("hidden width must be positive".into()));
                }
                vec![Layer::zeros(hidden, dim, bias), Layer::zeros(classes, hidden, bias)]
            }
        };
        Ok(Self { architecture, dim, classes, layers })
    }

    /// Weights i.i.d. uniform on `[-0.1, 0.1]`, biases (when present) zero.
    pub fn init_uniform<R: Rng + ?Sized>(
        architecture: Architecture,
        dim: usize,
        classes: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Self::init_with_scale(architecture, dim, classes, bias, 0.1, rng)
    }

    /// Weights i.i.d. uniform on `[-scale, scale]`, biases zero.
    pub fn init_with_scale<R: Rng + ?Sized>(
        architecture: Architecture,
        dim: usize,
        classes: usize,
        bias: bool,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(architecture, dim, classes, bias)?;
        let dist = Uniform::new_inclusive(-scale, scale)
            .map_err(|e| Error::InvalidModel(format!("bad init scale: {e}")))?;
        for layer in &mut model.layers {
            for w in &mut layer.weights {
                *w = T::lit(dist.sample(rng));
            }
        }
        Ok(model)
    }

    /// Bias-free linear model from its class rows `ω_c`.
    pub fn linear(rows: &[Vec<T>]) -> Result<Self> {
        Self::linear_with_bias(rows, None)
    }

    pub fn linear_with_bias(rows: &[Vec<T>], bias: Option<Vec<T>>) -> Result<Self> {
        let classes = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        let mut model = Self::zeros(Architecture::Linear, dim, classes, bias.is_some())?;
        for row in rows {
            if row.len() != dim {
                return Err(Error::Shape { expected: dim, got: row.len() });
            }
        }
        model.layers[0].weights = rows.concat();
        if let Some(b) = bias {
            if b.len() != classes {
                return Err(Error::Shape { expected: classes, got: b.len() });
            }
            model.layers[0].bias = Some(b);
        }
        model.check_finite()?;
        Ok(model)
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn has_bias(&self) -> bool {
        self.layers[0].bias.is_some()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Class row `ω_c` of a linear model's weight matrix.
    pub fn class_row(&self, c: usize) -> &[T] {
        self.layers.last().expect("at least one layer").row(c)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(Layer::iter)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(Layer::iter_mut)
    }

    pub fn flat(&self) -> Vec<T> {
        self.iter().copied().collect()
    }

    pub fn set_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Shape { expected: self.num_params(), got: values.len() });
        }
        for (p, &v) in self.iter_mut().zip(values) {
            *p = v;
        }
        Ok(())
    }

    /// Zero parameters with the same shape.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.iter_mut().for_each(|p| *p = T::zero());
        out
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        debug_assert_eq!(self.num_params(), other.num_params());
        for (p, &g) in self.iter_mut().zip(other.iter()) {
            *p += alpha * g;
        }
    }

    pub fn scale(&mut self, alpha: T) {
        self.iter_mut().for_each(|p| *p *= alpha);
    }

    /// Euclidean inner product over all parameters.
    pub fn dot(&self, other: &Self) -> T {
        self.iter().zip(other.iter()).map(|(&a, &b)| a * b).sum()
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|p| p.is_finite())
    }

    fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidModel("parameters must be finite".into()))
        }
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Shape { expected: self.dim, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("input must be finite".into()));
        }
        Ok(())
    }

    /// Per-class energies `E(x, c)`: the raw network output.
    pub fn energies(&self, x: &[T]) -> Result<EnergyVector<T>> {
        self.forward(x).map(|(e, _)| e)
    }

    /// Energies plus the hidden activations when the model has a hidden layer.
    pub(crate) fn forward(&self, x: &[T]) -> Result<(EnergyVector<T>, Option<Vec<T>>)> {
        self.check_input(x)?;
        match self.architecture {
            Architecture::Linear => Ok((EnergyVector::new(self.layers[0].apply(x))?, None)),
            Architecture::OneHiddenLayer { .. } => {
                let hidden: Vec<T> = self.layers[0].apply(x).into_iter().map(T::tanh).collect();
                let out = self.layers[1].apply(&hidden);
                Ok((EnergyVector::new(out)?, Some(hidden)))
            }
        }
    }

    /// Adds `scale * d/dθ Σ_c weights[c] E(x, c)` into `grad`.
    ///
    /// `hidden` must be the activations returned by [`Self::forward`] for `x`.
    pub(crate) fn accumulate_energy_grad(
        &self,
        x: &[T],
        hidden: Option<&[T]>,
        weights: &[T],
        scale: T,
        grad: &mut Self,
    ) {
        debug_assert_eq!(weights.len(), self.classes);
        match self.architecture {
            Architecture::Linear => accumulate_affine(&mut grad.layers[0], x, weights, scale),
            Architecture::OneHiddenLayer { hidden: width } => {
                let h = hidden.expect("hidden activations for hidden-layer model");
                accumulate_affine(&mut grad.layers[1], h, weights, scale);
                let out = &self.layers[1];
                let delta: Vec<T> = (0..width)
                    .map(|j| {
                        let back: T = (0..self.classes).map(|c| weights[c] * out.weights[c * width + j]).sum();
                        back * (T::one() - h[j] * h[j])
                    })
                    .collect();
                accumulate_affine(&mut grad.layers[0], x, &delta, scale);
            }
        }
    }
}

fn accumulate_affine<T: Scalar>(layer: &mut Layer<T>, input: &[T], upstream: &[T], scale: T) {
    let inputs = layer.inputs;
    for (r, &u) in upstream.iter().enumerate() {
        let coeff = scale * u;
        if coeff == T::zero() {
            continue;
        }
        for (w, &xi) in layer.weights[r * inputs..(r + 1) * inputs].iter_mut().zip(input) {
            *w += coeff * xi;
        }
        if let Some(b) = layer.bias.as_mut() {
            b[r] += coeff;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights_return_input() {
        let m = ModelParams::linear(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(m.energies(&[3.0, -2.0]).unwrap().as_slice(), &[3.0, -2.0]);
    }

    #[test]
    fn zero_model_gives_zero_energies() {
        let m = ModelParams::<f64>::zeros(Architecture::Linear, 3, 4, true).unwrap();
        assert!(m.energies(&[1.0, -7.0, 2.5]).unwrap().as_slice().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let m = ModelParams::<f64>::zeros(Architecture::Linear, 3, 2, false).unwrap();
        assert_eq!(m.energies(&[1.0]), Err(Error::Shape { expected: 3, got: 1 }));
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(ModelParams::<f64>::zeros(Architecture::Linear, 2, 1, false).is_err());
        assert!(ModelParams::<f64>::zeros(Architecture::Linear, 0, 2, false).is_err());
        assert!(ModelParams::<f64>::zeros(Architecture::OneHiddenLayer { hidden: 0 }, 2, 2, false).is_err());
    }

    #[test]
    fn init_is_bounded_and_biases_start_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = ModelParams::<f64>::init_uniform(Architecture::OneHiddenLayer { hidden: 5 }, 4, 3, true, &mut rng)
            .unwrap();
        assert_eq!(m.num_params(), 5 * 4 + 5 + 3 * 5 + 3);
        for layer in m.layers() {
            assert!(layer.weights.iter().all(|w| w.abs() <= 0.1));
            assert!(layer.bias.as_ref().unwrap().iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn hidden_layer_forward_matches_hand_rolled_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = ModelParams::<f64>::init_with_scale(Architecture::OneHiddenLayer { hidden: 3 }, 2, 2, true, 1.0, &mut rng)
            .unwrap();
        let mut m = m;
        m.layers_mut()[0].bias = Some(vec![0.3, -0.2, 0.1]);
        m.layers_mut()[1].bias = Some(vec![0.05, -0.4]);
        let x = [0.7, -1.3];
        let l1 = &m.layers()[0];
        let l2 = &m.layers()[1];
        let mut expect = [0.0f64; 2];
        for (c, e) in expect.iter_mut().enumerate() {
            let mut acc = l2.bias.as_ref().unwrap()[c];
            for j in 0..3 {
                let z = l1.weights[j * 2] * x[0] + l1.weights[j * 2 + 1] * x[1] + l1.bias.as_ref().unwrap()[j];
                acc += l2.weights[c * 3 + j] * z.tanh();
            }
            *e = acc;
        }
        let got = m.energies(&x).unwrap();
        for (g, e) in got.as_slice().iter().zip(expect) {
            assert!((g - e).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_round_trip_preserves_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = ModelParams::<f64>::init_uniform(Architecture::OneHiddenLayer { hidden: 2 }, 3, 2, true, &mut rng)
            .unwrap();
        let mut other = m.zeros_like();
        other.set_flat(&m.flat()).unwrap();
        assert_eq!(m, other);
        assert!(other.set_flat(&[1.0]).is_err());
    }
}
