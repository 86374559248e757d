//! Finite-difference verification of reverse-mode gradients.
//!
//! The analytic side comes from tape replay; the numeric side re-runs the
//! same builder closure with one parameter element shifted by +/-eps and
//! takes the central difference. The two sides never share a derivative
//! formula, which is what makes this a check rather than a tautology.

use crate::error::{Error, Result};
use crate::tape::{Perturbation, Tape, VarId};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-parameter outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradRow {
    pub name: String,
    pub elements: usize,
    /// max over elements of |analytic - numeric| / max(1, |numeric|)
    pub max_rel_error: f64,
    pub finite: bool,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub rows: Vec<GradRow>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.rows.iter().all(|r| r.finite)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.all_finite() && self.max_rel_error() < tolerance
    }
}

/// Options for [`grad_check_with`]. `corrupt_first` shifts the first analytic
/// gradient element before comparison; it exists so the suite can prove the
/// comparator actually rejects wrong gradients.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub corrupt_first: Option<f64>,
}

impl GradCheckOptions {
    pub fn new() -> Self {
        GradCheckOptions { eps: DEFAULT_EPS, corrupt_first: None }
    }
}

/// Check every parameter registered by `build` against central differences.
///
/// `build` must deterministically construct the taped computation and return
/// a scalar loss node. It runs 1 + 2 * total_elements times.
pub fn grad_check<F>(build: F) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>) -> Result<VarId>,
{
    grad_check_with(build, GradCheckOptions::new())
}

pub fn grad_check_with<F>(build: F, opts: GradCheckOptions) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>) -> Result<VarId>,
{
    let eps = if opts.eps > 0.0 { opts.eps } else { DEFAULT_EPS };

    let mut tape = Tape::new();
    let loss = build(&mut tape)?;
    if tape.value(loss).numel() != 1 {
        return Err(Error::contract("grad_check requires a scalar-valued map"));
    }
    let adjoints = tape.backward(loss)?;
    let params: Vec<(String, VarId, Tensor<f64>)> = tape
        .params()
        .iter()
        .map(|(name, id)| (name.clone(), *id, tape.value(*id).clone()))
        .collect();

    let mut rows = Vec::with_capacity(params.len());
    for (pi, (name, id, value)) in params.iter().enumerate() {
        let analytic = &adjoints[*id];
        let mut max_rel = 0.0f64;
        let mut finite = true;
        for elem in 0..value.numel() {
            let la = eval_at(&build, Perturbation { param: pi, elem, delta: eps })?;
            let lb = eval_at(&build, Perturbation { param: pi, elem, delta: -eps })?;
            let numeric = (la - lb) / (2.0 * eps);
            let mut a = analytic.data()[elem];
            if elem == 0 {
                if let Some(c) = opts.corrupt_first {
                    a += c;
                }
            }
            if !a.is_finite() || !numeric.is_finite() {
                finite = false;
            }
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
        rows.push(GradRow { name: name.clone(), elements: value.numel(), max_rel_error: max_rel, finite });
    }
    Ok(GradReport { rows })
}

fn eval_at<F>(build: &F, p: Perturbation) -> Result<f64>
where
    F: Fn(&mut Tape<f64>) -> Result<VarId>,
{
    let mut tape = Tape::with_perturbation(p);
    let loss = build(&mut tape)?;
    Ok(tape.value(loss).data()[0])
}

/// Central differences are only valid away from hinge points (relu zeros,
/// max ties), where the loss is not differentiable and the probe straddles
/// the kink. Search consecutive seeds for one whose evaluation point keeps
/// every hinge at least `margin` away, which must be much larger than eps.
pub fn stable_seed<F>(base: u64, tries: u64, margin: f64, build: F) -> Result<u64>
where
    F: Fn(u64, &mut Tape<f64>) -> Result<VarId>,
{
    for i in 0..tries {
        let seed = base.wrapping_add(i);
        let mut tape = Tape::new();
        build(seed, &mut tape)?;
        if tape.min_kink_margin() > margin {
            return Ok(seed);
        }
    }
    Err(Error::numeric(format!(
        "no evaluation point with hinge margin > {margin} within {tries} seeds of {base}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Backend;
    use crate::ops::Activation;
    use crate::tensor::Tensor;

    #[test]
    fn linear_map_is_exact() {
        let x0 = Tensor::from_fn(vec![1, 2, 3, 3], |i| (i as f64) * 0.11 - 0.7);
        let report = grad_check(|t| {
            let x = t.param("x", &x0);
            t.sum(&x)
        })
        .unwrap();
        assert!(report.max_rel_error() < 1e-10, "rel {}", report.max_rel_error());
    }

    #[test]
    fn sigmoid_sum_matches() {
        let x0 = Tensor::zeros(vec![1, 1, 2, 2]);
        let report = grad_check(|t| {
            let x = t.param("x", &x0);
            let s = t.activation(&x, Activation::Sigmoid)?;
            t.sum(&s)
        })
        .unwrap();
        assert!(report.max_rel_error() < 1e-9);
    }

    #[test]
    fn corruption_is_detected() {
        let x0 = Tensor::from_fn(vec![1, 1, 2, 2], |i| i as f64 * 0.3);
        let opts = GradCheckOptions { eps: DEFAULT_EPS, corrupt_first: Some(0.05) };
        let report = grad_check_with(
            |t| {
                let x = t.param("x", &x0);
                t.sum(&x)
            },
            opts,
        )
        .unwrap();
        assert!(report.max_rel_error() >= 1e-4, "corruption missed: {}", report.max_rel_error());
    }
}
