//! Central finite-difference checking of analytic gradients.
//!
//! The relative error of one element is `|a − n| / max(|a|, |n|, 1)`, where `a`
//! is the analytic and `n` the numeric derivative. The unit floor keeps
//! near-zero gradients from turning f32 rounding noise into huge ratios.
//!
//! Non-scalar outputs `y` are reduced to `Σ p ⊙ y` with a fixed standard
//! normal `p`. The analytic side seeds the reverse sweep with `p`; the numeric
//! side accumulates the projection in f64 so the only rounding left is in `y`.
//!
//! A probe whose `+h` or `−h` evaluation flips a ReLU sign or a max-pool
//! winner relative to the unperturbed graph straddles a point where the
//! function is not differentiable. Such probes are counted in
//! [`GradCheckReport::skipped`] and excluded from the error.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Shape, Tensor, Var};
use crate::error::Result;

pub const DEFAULT_STEP: f32 = 1e-3;

/// Tolerance for a single differentiable operator.
pub const OP_TOLERANCE: f64 = 1e-3;

/// Tolerance for deep compositions such as a full Elastic block.
pub const COMPOSITE_TOLERANCE: f64 = 1e-2;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub step: f32,
    /// Perturb at most this many evenly spaced elements per input.
    pub max_elements: Option<usize>,
    /// Seed of the output projection.
    pub projection_seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: DEFAULT_STEP,
            max_elements: None,
            projection_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Worst {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    pub worst: Option<Worst>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

impl GradCheck {
    /// `build` records an output from leaves holding `inputs`. Inputs whose
    /// `requires_grad` flag is unset are held fixed.
    pub fn run<F>(&self, inputs: &[Tensor], build: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let output = build(&mut g, &vars)?;
        let shape = g.shape(output);
        let projection = if shape == Shape::scalar() {
            vec![1.0]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.projection_seed);
            Tensor::randn(shape, 1.0, &mut rng).into_data()
        };
        let pattern = g.activation_pattern();
        g.backward_from(output, &projection)?;

        let eval = |inputs: &[Tensor]| -> Result<(f64, u64)> {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
            let y = build(&mut g, &vars)?;
            let value = g
                .value(y)
                .data()
                .iter()
                .zip(&projection)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            Ok((value, g.activation_pattern()))
        };

        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
            worst: None,
        };
        let mut probe = inputs.to_vec();
        for (idx, input) in inputs.iter().enumerate() {
            if !input.requires_grad() {
                continue;
            }
            let analytic = g
                .grad(vars[idx])
                .map(<[f32]>::to_vec)
                .unwrap_or_else(|| vec![0.0; input.data().len()]);
            let len = input.data().len();
            let stride = self.max_elements.map_or(1, |m| len.div_ceil(m.max(1)));
            for e in (0..len).step_by(stride) {
                let orig = input.data()[e];
                probe[idx].data_mut()[e] = orig + self.step;
                let (plus, plus_pattern) = eval(&probe)?;
                probe[idx].data_mut()[e] = orig - self.step;
                let (minus, minus_pattern) = eval(&probe)?;
                probe[idx].data_mut()[e] = orig;
                if plus_pattern != pattern || minus_pattern != pattern {
                    report.skipped += 1;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * self.step as f64);
                let a = analytic[e] as f64;
                let err = relative_error(a, numeric);
                report.checked += 1;
                if err > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = err;
                    report.worst = Some(Worst {
                        input: idx,
                        element: e,
                        analytic: a,
                        numeric,
                    });
                }
            }
        }
        Ok(report)
    }
}
