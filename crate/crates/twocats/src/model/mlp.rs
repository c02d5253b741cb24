//! Strictly positive MLP: ELU+1 activation at every layer, output included.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::norm::norm_quantile;
use crate::diff_engine::{Jet2, Scalar};

/// Default layer widths: two inputs, hidden sizes 128/64/32/16, one output.
pub const DEFAULT_WIDTHS: [usize; 6] = [2, 128, 64, 32, 16, 1];

/// Fully connected network whose output is positive for every input.
#[derive(Clone, Debug, PartialEq)]
pub struct PositiveMlp {
    pub(crate) weights: Vec<Array2<f64>>, // (out, in)
    pub(crate) biases: Vec<Array1<f64>>,
}

impl PositiveMlp {
    /// LeCun-normal initialization (`N(0, 1/fan_in)`), zero biases.
    ///
    /// Draws come from ChaCha8 through the normal quantile, layer by layer in
    /// row-major order, so initialization is reproducible across platforms.
    pub fn init(widths: &[usize], seed: u64) -> Self {
        assert!(widths.len() >= 2 && widths[0] == 2 && *widths.last().unwrap() == 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let sd = (1.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                sd * norm_quantile(rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12))
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        PositiveMlp { weights, biases }
    }

    /// A network that outputs exactly 1 everywhere: zero weights and biases
    /// leave every pre-activation at 0 and ELU+1(0) = 1.
    pub fn constant_one(widths: &[usize]) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..widths.len() - 1 {
            weights.push(Array2::zeros((widths[l + 1], widths[l])));
            biases.push(Array1::zeros(widths[l + 1]));
        }
        PositiveMlp { weights, biases }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.weights.iter().map(|m| m.ncols()).collect();
        w.push(1);
        w
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn n_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Scalar forward pass.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut acts = vec![x, y];
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let mut next = Vec::with_capacity(w.nrows());
            for i in 0..w.nrows() {
                let mut a = b[i];
                for j in 0..w.ncols() {
                    a += w[[i, j]] * acts[j];
                }
                next.push(elu1(a));
            }
            acts = next;
        }
        acts[0]
    }

    /// Forward pass on jets, generic over the scalar type.
    pub fn eval_jet<S: Scalar>(&self, x: Jet2<S>, y: Jet2<S>) -> Jet2<S> {
        let mut acts = vec![x, y];
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let mut next = Vec::with_capacity(w.nrows());
            for i in 0..w.nrows() {
                let mut a = Jet2::constant(S::from_f64(b[i]));
                for j in 0..w.ncols() {
                    a = a + acts[j].scale(S::from_f64(w[[i, j]]));
                }
                next.push(a.elu1());
            }
            acts = next;
        }
        acts[0]
    }
}

/// ELU(x) + 1 with unit alpha.
#[inline(always)]
pub fn elu1(x: f64) -> f64 {
    if x < 0.0 {
        x.exp()
    } else {
        x + 1.0
    }
}

/// First derivative of ELU+1.
#[inline(always)]
pub fn elu1_d1(x: f64) -> f64 {
    if x < 0.0 {
        x.exp()
    } else {
        1.0
    }
}

/// Second derivative of ELU+1.
#[inline(always)]
pub fn elu1_d2(x: f64) -> f64 {
    if x < 0.0 {
        x.exp()
    } else {
        0.0
    }
}

/// Third derivative of ELU+1 (used by backward passes through jets).
#[inline(always)]
pub fn elu1_d3(x: f64) -> f64 {
    if x < 0.0 {
        x.exp()
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_is_strictly_positive() {
        let mlp = PositiveMlp::init(&DEFAULT_WIDTHS, 17);
        for i in 0..20 {
            for j in 0..20 {
                let (x, y) = (i as f64 / 19.0, j as f64 / 19.0);
                assert!(mlp.eval(x, y) > 0.0);
            }
        }
    }

    #[test]
    fn constant_one_network() {
        let mlp = PositiveMlp::constant_one(&DEFAULT_WIDTHS);
        assert_eq!(mlp.eval(0.3, 0.9), 1.0);
        assert_eq!(mlp.eval(0.0, 0.0), 1.0);
    }

    #[test]
    fn jet_value_matches_scalar_eval() {
        let mlp = PositiveMlp::init(&[2, 8, 4, 1], 3);
        let j = mlp.eval_jet(Jet2::<f64>::var_u(0.4), Jet2::<f64>::var_v(0.7));
        assert_eq!(j.val, mlp.eval(0.4, 0.7));
    }

    #[test]
    fn jet_derivatives_match_finite_differences() {
        let mlp = PositiveMlp::init(&[2, 16, 8, 1], 11);
        let f = |x: f64, y: f64| mlp.eval(x, y);
        let (x0, y0) = (0.33, 0.58);
        let j = mlp.eval_jet(Jet2::<f64>::var_u(x0), Jet2::<f64>::var_v(y0));
        let h = 1e-5;
        let du = (f(x0 + h, y0) - f(x0 - h, y0)) / (2.0 * h);
        let dv = (f(x0, y0 + h) - f(x0, y0 - h)) / (2.0 * h);
        let duv = (f(x0 + h, y0 + h) - f(x0 + h, y0 - h) - f(x0 - h, y0 + h)
            + f(x0 - h, y0 - h))
            / (4.0 * h * h);
        assert!((j.du - du).abs() < 1e-8 * (1.0 + du.abs()));
        assert!((j.dv - dv).abs() < 1e-8 * (1.0 + dv.abs()));
        assert!((j.duv - duv).abs() < 1e-4 * (1.0 + duv.abs()));
    }

    #[test]
    fn initialization_is_deterministic() {
        let a = PositiveMlp::init(&DEFAULT_WIDTHS, 42);
        let b = PositiveMlp::init(&DEFAULT_WIDTHS, 42);
        assert_eq!(a, b);
        let c = PositiveMlp::init(&DEFAULT_WIDTHS, 43);
        assert_ne!(a, c);
    }
}
