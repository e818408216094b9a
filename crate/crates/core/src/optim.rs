//! First-order minimization of smooth objectives over small dense vectors.

use ndarray::Array1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Fixed-step gradient descent.
    GradientDescent,
    /// Nesterov momentum with gradient-based adaptive restart.
    Nesterov,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub step: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub method: Method,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            step: 0.1,
            max_iters: 50_000,
            grad_tol: 1e-8,
            method: Method::Nesterov,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    /// Best iterate seen (lowest gradient norm).
    pub x: Array1<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the caller's guard asked to stop early.
    pub aborted: bool,
}

/// What the objective closure reports at a point.
pub struct Eval {
    pub value: f64,
    pub grad: Array1<f64>,
    /// Ask the optimizer to stop (e.g. an overflow guard fired).
    pub abort: bool,
}

impl Eval {
    pub fn new(value: f64, grad: Array1<f64>) -> Self {
        Self {
            value,
            grad,
            abort: false,
        }
    }
}

/// Minimizes `f` from `x0`, optionally projecting every iterate with `project`.
///
/// The step is halved whenever the objective becomes non-finite.
pub fn minimize<F, P>(mut f: F, x0: Array1<f64>, cfg: &OptimConfig, project: P) -> OptimResult
where
    F: FnMut(&Array1<f64>) -> Eval,
    P: Fn(&mut Array1<f64>),
{
    let mut step = cfg.step;
    let mut x = x0;
    project(&mut x);
    let mut y = x.clone();
    let mut momentum_k = 0usize;
    let first = f(&x);
    let mut best = OptimResult {
        grad_norm: norm(&first.grad),
        value: first.value,
        x: x.clone(),
        iterations: 0,
        converged: norm(&first.grad) < cfg.grad_tol,
        aborted: first.abort,
    };
    if best.converged || best.aborted {
        return best;
    }
    for it in 1..=cfg.max_iters {
        let at_y = f(&y);
        if at_y.abort {
            best.aborted = true;
            best.iterations = it;
            return best;
        }
        if !at_y.value.is_finite() || at_y.grad.iter().any(|g| !g.is_finite()) {
            step *= 0.5;
            x = best.x.clone();
            y = x.clone();
            momentum_k = 0;
            if step < 1e-12 {
                break;
            }
            continue;
        }
        let mut x_next = &y - &(&at_y.grad * step);
        project(&mut x_next);
        match cfg.method {
            Method::GradientDescent => {
                x = x_next;
                y = x.clone();
            }
            Method::Nesterov => {
                // Restart when the momentum direction opposes descent.
                let restart = at_y.grad.dot(&(&x_next - &x)) > 0.0;
                let x_prev = std::mem::replace(&mut x, x_next);
                if restart {
                    momentum_k = 0;
                    y = x.clone();
                } else {
                    momentum_k += 1;
                    let beta = (momentum_k as f64 - 1.0) / (momentum_k as f64 + 2.0);
                    y = &x + &((&x - &x_prev) * beta);
                    project(&mut y);
                }
            }
        }
        let at_x = f(&x);
        if at_x.abort {
            best.aborted = true;
            best.iterations = it;
            return best;
        }
        let gn = projected_grad_norm(&x, &at_x.grad, &project);
        if at_x.value.is_finite() && gn.is_finite() && gn <= best.grad_norm {
            best.x = x.clone();
            best.value = at_x.value;
            best.grad_norm = gn;
        }
        best.iterations = it;
        if gn < cfg.grad_tol {
            best.converged = true;
            return best;
        }
    }
    best
}

/// No-op projection for unconstrained problems.
pub fn unconstrained(_: &mut Array1<f64>) {}

fn norm(g: &Array1<f64>) -> f64 {
    g.dot(g).sqrt()
}

/// Norm of the gradient mapping, which reduces to the gradient norm without constraints.
fn projected_grad_norm<P: Fn(&mut Array1<f64>)>(x: &Array1<f64>, g: &Array1<f64>, project: &P) -> f64 {
    let mut moved = x - g;
    project(&mut moved);
    norm(&(x - &moved))
}
