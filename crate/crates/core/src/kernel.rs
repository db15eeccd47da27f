//! Cumulative exponential-kernel integrals on a uniform grid.
//!
//! Both integrals telescope into O(n) trapezoid recursions whose decay
//! factor `e^{-c h}` is at most one for `c >= 0`:
//!
//! ```text
//! backward: g(s) = int_s^T e^{-c (r - s)} f(r) dr
//! forward:  G(s) = int_0^s e^{-c (s - r)} f(r) dr
//! ```

use crate::model::GridFunction;

/// `s_k -> int_{s_k}^T e^{-c (r - s_k)} f_r dr`, with `g_n = 0`.
pub fn cumulative_backward_kernel(f: &GridFunction, c: f64) -> GridFunction {
    backward_with_terminal(f, c, 0.0)
}

/// Backward recursion started from `g_n = terminal` instead of zero. The
/// terminal value carries the contribution of `[T, inf)`.
pub(crate) fn backward_with_terminal(f: &GridFunction, c: f64, terminal: f64) -> GridFunction {
    let h = f.grid().step();
    let decay = (-c * h).exp();
    let v = f.values();
    let n = v.len() - 1;
    let mut g = vec![0.0; n + 1];
    g[n] = terminal;
    for k in (0..n).rev() {
        g[k] = decay * g[k + 1] + 0.5 * h * (v[k] + decay * v[k + 1]);
    }
    GridFunction::from_parts(*f.grid(), g)
}

/// `s_k -> int_0^{s_k} e^{-c (s_k - r)} f_r dr`, with `G_0 = 0`.
pub fn cumulative_forward_kernel(f: &GridFunction, c: f64) -> GridFunction {
    let h = f.grid().step();
    let decay = (-c * h).exp();
    let v = f.values();
    let mut g = Vec::with_capacity(v.len());
    g.push(0.0);
    for k in 1..v.len() {
        let prev = g[k - 1];
        g.push(decay * prev + 0.5 * h * (decay * v[k - 1] + v[k]));
    }
    GridFunction::from_parts(*f.grid(), g)
}

/// Fourth-order finite-difference derivative: central in the interior,
/// one-sided near the ends. Grids with fewer than five points fall back to
/// second order.
pub fn derivative(f: &GridFunction) -> Vec<f64> {
    let h = f.grid().step();
    let v = f.values();
    let n = v.len();
    if n < 5 {
        return (0..n)
            .map(|k| {
                let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
                (v[b] - v[a]) / ((b - a) as f64 * h)
            })
            .collect();
    }
    let mut d = vec![0.0; n];
    d[0] = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / (12.0 * h);
    d[1] = (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]) / (12.0 * h);
    for k in 2..n - 2 {
        d[k] = (v[k - 2] - 8.0 * v[k - 1] + 8.0 * v[k + 1] - v[k + 2]) / (12.0 * h);
    }
    let m = n - 1;
    d[m - 1] = (3.0 * v[m] + 10.0 * v[m - 1] - 18.0 * v[m - 2] + 6.0 * v[m - 3] - v[m - 4]) / (12.0 * h);
    d[m] = (25.0 * v[m] - 48.0 * v[m - 1] + 36.0 * v[m - 2] - 16.0 * v[m - 3] + 3.0 * v[m - 4]) / (12.0 * h);
    d
}

/// Backward recursion with the Euler-Maclaurin end correction
/// `h^2/12 (g'(s_k) - g'(s_{k+1}))` on every panel, fourth order when `df`
/// is the derivative of `f` to fourth order.
pub fn backward_kernel_corrected(f: &GridFunction, df: &[f64], c: f64, terminal: f64) -> GridFunction {
    let h = f.grid().step();
    let decay = (-c * h).exp();
    let v = f.values();
    let n = v.len() - 1;
    let mut g = vec![0.0; n + 1];
    g[n] = terminal;
    for k in (0..n).rev() {
        let trap = 0.5 * h * (v[k] + decay * v[k + 1]);
        let corr = h * h / 12.0 * ((df[k] - c * v[k]) - decay * (df[k + 1] - c * v[k + 1]));
        g[k] = decay * g[k + 1] + trap + corr;
    }
    GridFunction::from_parts(*f.grid(), g)
}

/// Forward counterpart of [`backward_kernel_corrected`], with `G_0 = 0`.
pub fn forward_kernel_corrected(f: &GridFunction, df: &[f64], c: f64) -> GridFunction {
    let h = f.grid().step();
    let decay = (-c * h).exp();
    let v = f.values();
    let mut g = Vec::with_capacity(v.len());
    g.push(0.0);
    for k in 1..v.len() {
        let trap = 0.5 * h * (decay * v[k - 1] + v[k]);
        let corr = h * h / 12.0 * (decay * (df[k - 1] + c * v[k - 1]) - (df[k] + c * v[k]));
        g.push(decay * g[k - 1] + trap + corr);
    }
    GridFunction::from_parts(*f.grid(), g)
}

/// Trapezoid rule with end-point derivative correction, `int_0^T f`.
pub fn corrected_trapezoid(f: &GridFunction, df: &[f64]) -> f64 {
    let h = f.grid().step();
    f.trapezoid() + h * h / 12.0 * (df[0] - df[df.len() - 1])
}
