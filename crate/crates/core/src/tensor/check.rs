use alloc::vec::Vec;

use super::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Magnitude below which a derivative is indistinguishable from zero by
/// differencing in double precision; relative errors are taken against at
/// least this.
pub const GRADIENT_FLOOR: f64 = 1e-10;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckReport {
    /// max over compared components of |analytic − numeric| / max(|analytic|, |numeric|, GRADIENT_FLOOR)
    pub max_rel_error: f64,
    pub components: usize,
    /// probes whose ±step evaluations crossed a ReLU or clamp kink
    pub skipped: usize,
}

/// Scalar value and kink pattern of `f` at `inputs`.
fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<(f64, Vec<u8>)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    // leaves require grad so that every op is recorded for the pattern
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::NonScalarLoss(v.shape().to_vec()));
    }
    let s = v.data()[0];
    if !s.is_finite() {
        return Err(Error::NonFinite("finite difference"));
    }
    Ok((s, g.kink_pattern()))
}

/// Richardson-extrapolated central differences (Ridders' scheme) for
/// component `j` of input `i`, starting from step `h0` and shrinking by
/// `1.4` per stage. Returns `None` if any evaluation leaves the smooth piece
/// identified by `pattern`.
fn ridders<F>(f: &F, work: &mut [Tensor], i: usize, j: usize, h0: f64, pattern: &[u8]) -> Result<Option<f64>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    const CON: f64 = 1.4;
    const STAGES: usize = 10;
    const SAFE: f64 = 2.0;
    let base = work[i].data()[j];
    let mut central = |h: f64| -> Result<Option<f64>> {
        work[i].data_mut()[j] = base + h;
        let plus = evaluate(f, work);
        work[i].data_mut()[j] = base - h;
        let minus = evaluate(f, work);
        work[i].data_mut()[j] = base;
        let ((p, pp), (m, pm)) = (plus?, minus?);
        if pp != pattern || pm != pattern {
            return Ok(None);
        }
        Ok(Some((p - m) / (2.0 * h)))
    };
    let mut table = [[0.0f64; STAGES]; STAGES];
    let mut h = h0;
    let Some(d) = central(h)? else { return Ok(None) };
    table[0][0] = d;
    let mut best = d;
    let mut err = f64::INFINITY;
    for col in 1..STAGES {
        h /= CON;
        let Some(d) = central(h)? else { return Ok(None) };
        table[0][col] = d;
        let mut fac = CON * CON;
        for row in 1..=col {
            table[row][col] = (table[row - 1][col] * fac - table[row - 1][col - 1]) / (fac - 1.0);
            fac *= CON * CON;
            let e = (table[row][col] - table[row - 1][col])
                .abs()
                .max((table[row][col] - table[row - 1][col - 1]).abs());
            if e <= err {
                err = e;
                best = table[row][col];
            }
        }
        if (table[col][col] - table[col - 1][col - 1]).abs() >= SAFE * err {
            break;
        }
    }
    Ok(Some(best))
}

/// Checks the gradient of `f` with respect to every tensor in `inputs`.
///
/// `probe` restricts the comparison to `(input, component)` pairs; `None`
/// probes every component of every input. The numeric derivative uses
/// extrapolated central differences starting at step `eps`. Every probe
/// evaluation must stay on the same side of each ReLU/clamp kink as the
/// base point; the step is shrunk up to three times to achieve that, after
/// which the probe is skipped.
pub fn gradient_check<F>(f: F, inputs: &[Tensor], eps: f64, probe: Option<&[(usize, usize)]>) -> Result<CheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid("gradient_check", "eps must be positive"));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let base_pattern = g.kink_pattern();
    drop(g);

    let all: Vec<(usize, usize)>;
    let probe = match probe {
        Some(p) => p,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
                .collect();
            &all
        }
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_rel = 0.0f64;
    let mut skipped = 0;
    for &(i, j) in probe {
        let analytic = grads.get(vars[i])?.data()[j];
        let mut numeric = None;
        let mut h = eps;
        for _ in 0..4 {
            numeric = ridders(&f, &mut work, i, j, h, &base_pattern)?;
            if numeric.is_some() {
                break;
            }
            h /= 10.0;
        }
        let Some(numeric) = numeric else {
            skipped += 1;
            continue;
        };
        let denom = analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
        max_rel = max_rel.max((analytic - numeric).abs() / denom);
    }
    Ok(CheckReport {
        max_rel_error: max_rel,
        components: probe.len() - skipped,
        skipped,
    })
}

/// Max relative error between the reverse-mode gradient of the scalar
/// function `f` at `input` and its central-difference estimate with step `eps`.
pub fn finite_difference_check<F>(f: F, input: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let report = gradient_check(|g, v| f(g, v[0]), core::slice::from_ref(input), eps, None)?;
    Ok(report.max_rel_error)
}
