//! Central finite-difference gradient checking.
//!
//! The checked function is rebuilt from scratch for every perturbed input,
//! so the numeric side never touches the backward pass.

use super::{Graph, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rtol: f64,
    /// Absolute floor for entries whose true derivative is near zero.
    pub atol: f64,
    /// When set, a coordinate whose one-sided differences disagree by more
    /// than `guard * (1 + |central|)`, or whose central difference moves
    /// when the step shrinks tenfold, sits near a kink (ReLU, hinge, max)
    /// and is skipped instead of compared.
    pub kink_guard: Option<f64>,
}

impl GradCheckConfig {
    /// Smooth primitives: step 1e-4, rtol 1e-4.
    pub fn smooth() -> Self {
        GradCheckConfig {
            step: 1e-4,
            rtol: 1e-4,
            atol: 1e-6,
            kink_guard: None,
        }
    }

    /// Piecewise-smooth paths: rtol 1e-3 with kink avoidance.
    pub fn piecewise() -> Self {
        GradCheckConfig {
            step: 1e-4,
            rtol: 1e-3,
            atol: 1e-6,
            kink_guard: Some(1e-2),
        }
    }

    pub fn smooth_with_kinks() -> Self {
        GradCheckConfig {
            kink_guard: Some(1e-2),
            ..GradCheckConfig::smooth()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub failures: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.failures.extend(other.failures);
    }
}

fn evaluate<F>(f: &mut F, inputs: &[Tensor], track: bool) -> Result<(Graph, Vec<Var>, Var)>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), track)).collect();
    let out = f(&mut g, &vars)?;
    Ok((g, vars, out))
}

fn scalar_of<F>(f: &mut F, inputs: &[Tensor]) -> Result<f64>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let (g, _, out) = evaluate(f, inputs, false)?;
    Ok(g.value(out).data().iter().sum())
}

/// Compares the backward pass of `f` against central differences for every
/// entry of every input. A non-scalar output is reduced by summation.
pub fn check_gradients<F>(
    mut f: F,
    inputs: &[Tensor],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let (mut g, vars, out) = evaluate(&mut f, inputs, true)?;
    let root = if g.value(out).is_scalar() {
        out
    } else {
        g.sum(out)?
    };
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], |s| s.to_vec()))
        .collect();
    drop(g);

    compare_with_differences(&analytic, inputs, |t| scalar_of(&mut f, t), cfg)
}

/// Checks precomputed analytic gradients of a scalar function of several
/// tensors against central differences of `eval`.
pub fn compare_with_differences<E>(
    analytic: &[Vec<f64>],
    inputs: &[Tensor],
    mut eval: E,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    E: FnMut(&[Tensor]) -> Result<f64>,
{
    let base = match cfg.kink_guard {
        Some(_) => Some(eval(inputs)?),
        None => None,
    };
    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for k in 0..t.len() {
            let x0 = t.data()[k];
            work[ti].data_mut()[k] = x0 + cfg.step;
            let fp = eval(&work)?;
            work[ti].data_mut()[k] = x0 - cfg.step;
            let fm = eval(&work)?;
            work[ti].data_mut()[k] = x0;
            let numeric = (fp - fm) / (2.0 * cfg.step);
            if let (Some(guard), Some(f0)) = (cfg.kink_guard, base) {
                let fwd = (fp - f0) / cfg.step;
                let bwd = (f0 - fm) / cfg.step;
                // A kink inside the stencil also shows up as a central
                // difference that changes with the step size.
                work[ti].data_mut()[k] = x0 + cfg.step / 10.0;
                let fp = eval(&work)?;
                work[ti].data_mut()[k] = x0 - cfg.step / 10.0;
                let fm = eval(&work)?;
                work[ti].data_mut()[k] = x0;
                let fine = (fp - fm) / (0.2 * cfg.step);
                let drift = (fine - numeric).abs() > cfg.atol + 0.5 * cfg.rtol * fine.abs().max(numeric.abs());
                if drift || (fwd - bwd).abs() > guard * (1.0 + numeric.abs()) {
                    report.skipped_kinks += 1;
                    continue;
                }
            }
            let a = analytic[ti][k];
            let err = (a - numeric).abs();
            let rel = err / numeric.abs().max(a.abs()).max(1e-12);
            report.checked += 1;
            if err > cfg.atol + cfg.rtol * numeric.abs().max(a.abs()) {
                report.failures.push(Mismatch {
                    input: ti,
                    index: k,
                    analytic: a,
                    numeric,
                });
            } else if err > cfg.atol {
                report.max_rel_error = report.max_rel_error.max(rel);
            }
        }
    }
    Ok(report)
}
