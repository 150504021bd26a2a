//! Central finite-difference checks of the tape's analytic gradients.

use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Exec, OpKind, Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Outcome of a finite-difference check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// `(input, element)` where the worst error occurred.
    pub worst: Option<(usize, usize)>,
    /// Analytic and numeric derivative at `worst`.
    pub worst_values: (f64, f64),
    pub checked: usize,
    /// Elements whose probes crossed a ReLU kink even at the smallest step.
    pub skipped: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Options for [`FiniteDifference::check`].
#[derive(Debug, Clone)]
pub struct FiniteDifference {
    pub eps: f64,
    /// Check at most this many (seeded, random) elements per input.
    pub max_per_input: Option<usize>,
    pub seed: u64,
    pub fault: Option<(OpKind, f64)>,
    /// Times the step may be divided by ten when a probe changes the ReLU
    /// activation pattern.
    pub refinements: u32,
    /// Use the five-point stencil, whose truncation error is `O(eps⁴)`, so a
    /// larger step keeps rounding noise down.
    pub fourth_order: bool,
}

impl Default for FiniteDifference {
    fn default() -> Self {
        FiniteDifference {
            eps: DEFAULT_EPS,
            max_per_input: None,
            seed: 0,
            fault: None,
            refinements: 2,
            fourth_order: false,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = libm::fabs(analytic).max(libm::fabs(numeric)).max(RELATIVE_FLOOR);
    libm::fabs(analytic - numeric) / denom
}

fn reduce(tape: &mut Tape, out: Var) -> Var {
    if tape.value(out).numel() == 1 {
        out
    } else {
        tape.sum(out)
    }
}

impl FiniteDifference {
    /// Compares the tape gradient of `sum(f(inputs))` with central
    /// differences for every (or a sampled subset of) input element.
    pub fn check<F>(&self, mut f: F, inputs: &[Tensor]) -> Result<GradCheck>
    where
        F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
    {
        let mut tape = Tape::new();
        if let Some((kind, factor)) = self.fault {
            tape.inject_gradient_fault(kind, factor);
        }
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let out = reduce(&mut tape, out);
        let pattern = tape.activation_pattern();
        tape.backward(out)?;
        let analytic: Vec<Vec<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| {
                tape.grad(v)
                    .map_or_else(|| alloc::vec![0.0; t.numel()], <[f64]>::to_vec)
            })
            .collect();
        drop(tape);

        let mut evaluate = |probe: &[Tensor]| -> Result<(f64, u64)> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = probe.iter().map(|t| tape.constant(t.clone())).collect();
            let out = f(&mut tape, &vars)?;
            let out = reduce(&mut tape, out);
            Ok((tape.data(out)[0], tape.activation_pattern()))
        };

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut probe: Vec<Tensor> = inputs.to_vec();
        let mut report = GradCheck {
            max_rel_err: 0.0,
            worst: None,
            worst_values: (0.0, 0.0),
            checked: 0,
            skipped: 0,
        };
        for (i, input) in inputs.iter().enumerate() {
            let n = input.numel();
            let elements: Vec<usize> = match self.max_per_input {
                Some(k) if k < n => {
                    let mut picked = sample(&mut rng, n, k).into_vec();
                    picked.sort_unstable();
                    picked
                }
                _ => (0..n).collect(),
            };
            for j in elements {
                let orig = input.data()[j];
                let mut eps = self.eps;
                let mut numeric = None;
                let offsets: &[f64] = if self.fourth_order {
                    &[1.0, -1.0, 2.0, -2.0]
                } else {
                    &[1.0, -1.0]
                };
                let mut values = [0.0; 4];
                for _ in 0..=self.refinements {
                    let mut smooth = true;
                    for (k, &o) in offsets.iter().enumerate() {
                        probe[i].data_mut()[j] = orig + o * eps;
                        let (v, p) = evaluate(&probe)?;
                        values[k] = v;
                        smooth &= p == pattern;
                        if !smooth {
                            break;
                        }
                    }
                    probe[i].data_mut()[j] = orig;
                    if smooth {
                        let d1 = values[0] - values[1];
                        numeric = Some(if self.fourth_order {
                            (8.0 * d1 - (values[2] - values[3])) / (12.0 * eps)
                        } else {
                            d1 / (2.0 * eps)
                        });
                        break;
                    }
                    eps /= 10.0;
                }
                let Some(numeric) = numeric else {
                    report.skipped += 1;
                    continue;
                };
                let err = relative_error(analytic[i][j], numeric);
                report.checked += 1;
                if report.worst.is_none() || err > report.max_rel_err {
                    report.max_rel_err = err;
                    report.worst = Some((i, j));
                    report.worst_values = (analytic[i][j], numeric);
                }
            }
        }
        Ok(report)
    }
}

/// Maximum relative error between the analytic gradient of `sum(f(inputs))`
/// and central differences with step `eps`, over every input element.
pub fn finite_difference_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let fd = FiniteDifference {
        eps,
        ..FiniteDifference::default()
    };
    Ok(fd.check(f, inputs)?.max_rel_err)
}

mod suites;

pub use suites::{run_scope, CaseResult, Scope, GRADIENT_TOLERANCE};
