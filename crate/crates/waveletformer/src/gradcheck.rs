//! Finite-difference gradient oracle.
//!
//! `grad_check` reduces an arbitrary-shaped op output to a scalar via a fixed
//! random projection, runs the tape backward for the analytic gradients, and
//! compares them against central differences `(f(x+h) - f(x-h)) / 2h` taken
//! per input element. It reports the worst relative error instead of raising,
//! so callers decide what counts as failure.

use crate::error::Result;
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;
use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckCfg {
    /// Central-difference step.
    pub h: f64,
    /// Relative-error threshold for `passed()`.
    pub tol: f64,
    /// Seed for the scalar projection and element subsampling.
    pub seed: u64,
    /// Optional cap on checked elements per input (deterministic subsample);
    /// `None` checks every element.
    pub max_elems_per_input: Option<usize>,
}

impl Default for GradCheckCfg {
    fn default() -> Self {
        GradCheckCfg {
            h: 1e-5,
            tol: 1e-4,
            seed: 0,
            max_elems_per_input: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error per checked input, in argument order.
    pub per_input: Vec<f64>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub elements_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Checks the analytic VJP of `f` against central finite differences with
/// respect to every tensor in `inputs`.
///
/// `f` must be a pure function: it receives a fresh tape plus leaf ids for
/// the inputs (in order) and returns the op output, which may have any shape.
pub fn grad_check<F>(inputs: &[Tensor], f: F, cfg: &GradCheckCfg) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId>,
{
    // Scalar reduction L = sum(r * f(x)) with a projection fixed up front.
    let projection = {
        let mut tape = Tape::new();
        let ids: Vec<VarId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &ids)?;
        Tensor::rand_normal(tape.value(out).shape(), 0.0, 1.0, cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(1))
    };

    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<VarId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &ids)?;
        let r = tape.leaf(projection.clone());
        let prod = tape.mul(out, r)?;
        let l = tape.sum_all(prod)?;
        Ok(tape.value(l).item())
    };

    // Analytic gradients of the projected scalar.
    let mut tape = Tape::new();
    let ids: Vec<VarId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &ids)?;
    let r = tape.leaf(projection.clone());
    let prod = tape.mul(out, r)?;
    let l = tape.sum_all(prod)?;
    tape.backward(l)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .map(|&id| {
            tape.grad(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.value(id).shape()))
        })
        .collect();

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut checked = 0;
    for (i, input) in inputs.iter().enumerate() {
        let numel = input.numel();
        let indices: Vec<usize> = match cfg.max_elems_per_input {
            Some(cap) if cap < numel => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64 + 2));
                let mut v = sample(&mut rng, numel, cap).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..numel).collect(),
        };
        let mut worst = 0.0f64;
        for &e in &indices {
            let orig = work[i].data()[e];
            work[i].data_mut()[e] = orig + cfg.h;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = orig - cfg.h;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;
            let fd = (plus - minus) / (2.0 * cfg.h);
            worst = worst.max(rel_err(analytic[i].data()[e], fd));
        }
        checked += indices.len();
        per_input.push(worst);
    }

    let max_rel_err = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_input,
        max_rel_err,
        tol: cfg.tol,
        elements_checked: checked,
    })
}
