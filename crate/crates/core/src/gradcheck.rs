//! Central finite-difference checks for graph-built scalar functions.
//!
//! Only the forward pass is used to form the numerical estimate, so the
//! check is independent of the reverse-mode rules it validates.

use crate::error::Result;
use crate::tensor::{Graph, Tensor, Var};

/// Outcome of comparing analytic and numerical gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Worst elementwise relative error over the checked coordinates.
    pub max_rel_error: f64,
    /// Coordinates compared, as (input index, flat element index).
    pub checked: usize,
    /// Value of the function at the unperturbed point.
    pub value: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
///
/// `floor` keeps coordinates whose true derivative is zero from being judged
/// on cancellation noise; callers derive it from the function's magnitude.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Checks `f` at `inputs`. `f` receives a fresh graph and one leaf per input
/// and must return a single-element node. `coords` optionally restricts the
/// check to a subset of (input, element) pairs.
pub fn check<F>(
    inputs: &[Tensor<f64>],
    step: f64,
    coords: Option<&[(usize, usize)]>,
    f: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
    let root = f(&mut g, &vars)?;
    let value = g.value(root).item();
    let grads = g.backward(root)?;

    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, t)| (0..t.numel()).map(move |k| (i, k)))
                .collect();
            &all
        }
    };

    let floor = 1e-6 * value.abs().max(1.0);
    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for &(i, k) in coords {
        let orig = xs[i].data()[k];
        xs[i].data_mut()[k] = orig + step;
        let plus = eval(&xs)?;
        xs[i].data_mut()[k] = orig - step;
        let minus = eval(&xs)?;
        xs[i].data_mut()[k] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let analytic = grads.get(vars[i]).map_or(0.0, |t| t.data()[k]);
        worst = worst.max(relative_error(analytic, numeric, floor));
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked: coords.len(),
        value,
    })
}

/// Derivative of `f` at 0 by Ridders' extrapolation of central differences.
/// The step starts at `h0` and shrinks by 1.4 per row; the tableau entry
/// with the smallest error estimate wins, so curvature and rounding error are
/// traded off without reference to an analytic value.
pub fn ridders_derivative(h0: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    const SHRINK: f64 = 1.4;
    const ROWS: usize = 16;
    let mut h = h0;
    let mut prev: Vec<f64> = vec![(f(h) - f(-h)) / (2.0 * h)];
    let mut best = prev[0];
    let mut err = f64::INFINITY;
    for i in 1..ROWS {
        h /= SHRINK;
        let mut row = vec![(f(h) - f(-h)) / (2.0 * h)];
        let mut fac = SHRINK * SHRINK;
        for j in 1..=i {
            let v = (row[j - 1] * fac - prev[j - 1]) / (fac - 1.0);
            fac *= SHRINK * SHRINK;
            let e = (v - row[j - 1]).abs().max((v - prev[j - 1]).abs());
            if e <= err {
                err = e;
                best = v;
            }
            row.push(v);
        }
        // Higher orders have stopped helping once the diagonal moves by
        // more than twice the best error estimate.
        if (row[i] - prev[i - 1]).abs() >= 2.0 * err {
            break;
        }
        prev = row;
    }
    best
}
