//! Quasi-Newton minimization (BFGS with backtracking line search).

/// Stopping rules for [`bfgs_minimize`].
#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the gradient infinity-norm falls below this value.
    pub grad_tol: f64,
    /// Stop when the relative decrease of the objective falls below this value.
    pub f_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 30,
            grad_tol: 1e-8,
            f_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The line search could not decrease the objective from the start point.
    pub line_search_failed: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimize `f` from `x0`. The closure returns the objective and its gradient;
/// non-finite objectives are treated as `+∞` by the line search.
pub fn bfgs_minimize<F>(mut f: F, x0: &[f64], opts: BfgsOptions) -> BfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return BfgsResult {
            x,
            f: fx,
            iterations: 0,
            converged: false,
            line_search_failed: true,
        };
    }
    let mut h = vec![0.0; n * n];
    let reset = |h: &mut Vec<f64>, scale: f64| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = scale;
        }
    };
    reset(&mut h, 1.0);
    let mut first_step = true;
    let mut iterations = 0;
    let mut converged = inf_norm(&g) < opts.grad_tol;
    let mut failed = false;
    let mut fresh_h = true;

    while iterations < opts.max_iter && !converged {
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        let mut slope = dot(&d, &g);
        if slope >= 0.0 || !slope.is_finite() {
            reset(&mut h, 1.0);
            fresh_h = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&d, &g);
        }
        if first_step {
            // keep the first trial step of unit length in the steepest direction
            let norm = dot(&d, &d).sqrt();
            if norm > 1.0 {
                d.iter_mut().for_each(|v| *v /= norm);
                slope /= norm;
            }
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            let (fn_, gn) = f(&xn);
            if fn_.is_finite()
                && gn.iter().all(|v| v.is_finite())
                && fn_ <= fx + 1e-4 * alpha * slope
            {
                accepted = Some((xn, fn_, gn));
                break;
            }
            alpha *= 0.5;
        }
        iterations += 1;
        let Some((xn, fn_, gn)) = accepted else {
            if fresh_h {
                failed = iterations == 1;
                break;
            }
            reset(&mut h, 1.0);
            fresh_h = true;
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let rel = (fx - fn_).abs() / fx.abs().max(1.0);
        x = xn;
        fx = fn_;
        g = gn;
        if inf_norm(&g) < opts.grad_tol || rel < opts.f_tol {
            converged = true;
            break;
        }
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if first_step {
                reset(&mut h, sy / dot(&y, &y));
            }
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
            fresh_h = false;
        }
        first_step = false;
    }
    BfgsResult {
        x,
        f: fx,
        iterations,
        converged,
        line_search_failed: failed,
    }
}
