//! Limited-memory BFGS with backtracking Armijo line search.

use std::collections::VecDeque;

use nalgebra::DVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when `max |g_i| <= gtol`.
    pub gtol: f64,
    /// Stop when an accepted step lowers `f` by at most `ftol * max(1, |f|)`.
    pub ftol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 500,
            gtol: 1e-7,
            ftol: 1e-13,
            armijo: 1e-4,
            max_backtracks: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    /// No step along the search direction decreased `f`.
    Stalled,
    Budget,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: DVector<f64>,
    pub f: f64,
    /// Objective at the start and after every accepted step.
    pub history: Vec<f64>,
    pub termination: Termination,
}

/// Minimises `f`; `eval` returns `(value, gradient)`.
pub fn minimize<F>(mut eval: F, x0: DVector<f64>, opts: &LbfgsOptions) -> LbfgsResult
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut x = x0;
    let (mut f, mut g) = eval(&x);
    let mut history = vec![f];
    let mut mem: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut termination = Termination::Budget;

    for iter in 0..opts.max_iters {
        if g.amax() <= opts.gtol {
            termination = Termination::Converged;
            break;
        }
        let mut d = two_loop(&g, &mem);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            mem.clear();
            d = -&g;
            slope = -g.norm_squared();
        }
        let mut step = if iter == 0 && mem.is_empty() {
            (1.0 / g.amax()).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let xn = &x + &d * step;
            let (fn_, gn) = eval(&xn);
            if fn_.is_finite() && fn_ <= f + opts.armijo * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            termination = Termination::Stalled;
            break;
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        let decrease = f - fn_;
        x = xn;
        f = fn_;
        g = gn;
        history.push(f);
        if decrease <= opts.ftol * f.abs().max(1.0) {
            termination = Termination::Converged;
            break;
        }
    }
    LbfgsResult {
        x,
        f,
        history,
        termination,
    }
}

fn two_loop(g: &DVector<f64>, mem: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * s.dot(&q);
        q -= y * a;
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        q *= s.dot(y) / y.norm_squared();
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q += s * (a - b);
    }
    -q
}
