//! Limited-memory BFGS with an Armijo backtracking line search.
//!
//! The minimizer only sees a flat parameter vector and a closure returning
//! `(value, gradient)`; the network trainers flatten `(W, c)` layer by layer.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig {
    /// Sufficient-decrease constant `c₁`.
    pub armijo: f64,
    /// Step multiplier after a rejected trial.
    pub shrink: f64,
    pub max_trials: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        LineSearchConfig {
            armijo: 1e-4,
            shrink: 0.5,
            max_trials: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    /// Number of stored curvature pairs.
    pub memory: usize,
    pub max_iters: usize,
    /// Stop once `‖∇f‖∞` falls to this value.
    pub grad_tol: f64,
    pub line_search: LineSearchConfig,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iters: 100,
            grad_tol: 1e-6,
            line_search: LineSearchConfig::default(),
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.memory == 0 {
            return Err("L-BFGS memory must be at least 1".into());
        }
        if !(self.grad_tol > 0.0) {
            return Err("L-BFGS gradient tolerance must be positive".into());
        }
        let ls = &self.line_search;
        if !(ls.armijo > 0.0 && ls.armijo < 1.0) {
            return Err("Armijo constant must lie in (0, 1)".into());
        }
        if !(ls.shrink > 0.0 && ls.shrink < 1.0) {
            return Err("line-search shrink factor must lie in (0, 1)".into());
        }
        if ls.max_trials == 0 {
            return Err("line search needs at least one trial".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    /// Gradient infinity-norm at or below tolerance.
    Converged,
    MaxIterations,
    /// No step satisfying the Armijo condition was found.
    LineSearchFailed,
    /// The objective returned NaN or infinity; the result is the last
    /// finite iterate.
    NonFinite,
}

impl Status {
    pub fn is_failure(self) -> bool {
        matches!(self, Status::NonFinite)
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: Status,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn all_finite(v: f64, g: &[f64]) -> bool {
    v.is_finite() && g.iter().all(|x| x.is_finite())
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Search direction `−H∇f` from the two-loop recursion, with the initial
/// Hessian scaled by `sᵀy / yᵀy` of the most recent pair.
fn two_loop(grad: &[f64], pairs: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for p in pairs.iter().rev() {
        let a = p.rho * dot(&p.s, &q);
        for (qi, yi) in q.iter_mut().zip(&p.y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some(last) = pairs.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for (p, a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = p.rho * dot(&p.y, &q);
        for (qi, si) in q.iter_mut().zip(&p.s) {
            *qi += (a - b) * si;
        }
    }
    for qi in &mut q {
        *qi = -*qi;
    }
    q
}

pub(crate) enum Step {
    Accepted { x: Vec<f64>, value: f64, grad: Vec<f64> },
    Failed,
    NonFinite,
}

/// Backtracking from `step` until `f(x + t d) ≤ f(x) + c₁ t ∇fᵀd`.
pub(crate) fn backtrack<F>(
    eval: &mut F,
    evaluations: &mut usize,
    x: &[f64],
    value: f64,
    slope: f64,
    dir: &[f64],
    mut step: f64,
    ls: &LineSearchConfig,
) -> Step
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    for _ in 0..ls.max_trials {
        let trial: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + step * di).collect();
        let (v, g) = eval(&trial);
        *evaluations += 1;
        if !all_finite(v, &g) {
            return Step::NonFinite;
        }
        if v <= value + ls.armijo * step * slope {
            return Step::Accepted {
                x: trial,
                value: v,
                grad: g,
            };
        }
        step *= ls.shrink;
    }
    Step::Failed
}

pub fn minimize<F>(mut eval: F, x0: &[f64], config: &LbfgsConfig) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0.to_vec();
    let (mut value, mut grad) = eval(&x);
    let mut evaluations = 1;
    let mut iterations = 0;
    let finish = |x, value, gradient, iterations, evaluations, status| Minimum {
        x,
        value,
        gradient,
        iterations,
        evaluations,
        status,
    };
    if !all_finite(value, &grad) {
        return finish(x, value, grad, 0, evaluations, Status::NonFinite);
    }
    let mut pairs: VecDeque<Pair> = VecDeque::with_capacity(config.memory);

    loop {
        if norm_inf(&grad) <= config.grad_tol {
            return finish(x, value, grad, iterations, evaluations, Status::Converged);
        }
        if iterations >= config.max_iters {
            return finish(x, value, grad, iterations, evaluations, Status::MaxIterations);
        }
        let mut dir = two_loop(&grad, &pairs);
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            pairs.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = dot(&grad, &dir);
        }
        let first = if pairs.is_empty() {
            (1.0 / dot(&grad, &grad).sqrt()).min(1.0)
        } else {
            1.0
        };
        match backtrack(
            &mut eval,
            &mut evaluations,
            &x,
            value,
            slope,
            &dir,
            first,
            &config.line_search,
        ) {
            Step::Accepted {
                x: nx,
                value: nv,
                grad: ng,
            } => {
                let s: Vec<f64> = nx.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = ng.iter().zip(&grad).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                let scale = dot(&s, &s).sqrt() * dot(&y, &y).sqrt();
                if sy > 1e-10 * scale {
                    if pairs.len() == config.memory {
                        pairs.pop_front();
                    }
                    pairs.push_back(Pair { s, y, rho: 1.0 / sy });
                }
                x = nx;
                value = nv;
                grad = ng;
                iterations += 1;
            }
            Step::Failed => {
                return finish(x, value, grad, iterations, evaluations, Status::LineSearchFailed)
            }
            Step::NonFinite => {
                return finish(x, value, grad, iterations, evaluations, Status::NonFinite)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(x: &[f64]) -> (f64, Vec<f64>) {
        let d = [x[0] - 1.0, x[1] - 2.0];
        (d[0] * d[0] + d[1] * d[1], vec![2.0 * d[0], 2.0 * d[1]])
    }

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        (f, g)
    }

    #[test]
    fn quadratic_converges() {
        let cfg = LbfgsConfig {
            grad_tol: 1e-10,
            ..Default::default()
        };
        let r = minimize(quadratic, &[0.0, 0.0], &cfg);
        assert_eq!(r.status, Status::Converged);
        assert!(r.iterations <= 25);
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn starting_at_the_minimum_returns_immediately() {
        let r = minimize(quadratic, &[1.0, 2.0], &LbfgsConfig::default());
        assert_eq!(r.iterations, 0);
        assert_eq!(r.evaluations, 1);
        assert_eq!(r.status, Status::Converged);
    }

    #[test]
    fn rosenbrock_from_the_classic_start() {
        let cfg = LbfgsConfig {
            max_iters: 500,
            grad_tol: 1e-10,
            ..Default::default()
        };
        let r = minimize(rosenbrock, &[-1.2, 1.0], &cfg);
        assert!(r.value < 1e-8, "f = {} after {:?}", r.value, r.status);
    }

    #[test]
    fn objective_never_increases() {
        let mut seen = Vec::new();
        let cfg = LbfgsConfig {
            max_iters: 200,
            ..Default::default()
        };
        let r = minimize(
            |x: &[f64]| {
                let out = rosenbrock(x);
                seen.push(out.0);
                out
            },
            &[-1.2, 1.0],
            &cfg,
        );
        assert!(r.value <= seen[0]);
    }

    #[test]
    fn non_finite_objective_aborts_with_last_good_iterate() {
        // finite only for x < 0.5; the quasi-Newton step toward 2 lands in NaN
        let f = |x: &[f64]| {
            if x[0] < 0.5 {
                ((x[0] - 2.0).powi(2), vec![2.0 * (x[0] - 2.0)])
            } else {
                (f64::NAN, vec![f64::NAN])
            }
        };
        let r = minimize(f, &[0.0], &LbfgsConfig::default());
        assert_eq!(r.status, Status::NonFinite);
        assert!(r.x[0] < 0.5);
        assert!(r.value.is_finite());
    }

    #[test]
    fn beats_gradient_descent_on_a_convex_quadratic() {
        // ill-conditioned quadratic
        let diag = [1.0, 10.0, 100.0];
        let f = |x: &[f64]| {
            let v = x.iter().zip(&diag).map(|(xi, d)| 0.5 * d * (xi - 1.0).powi(2)).sum();
            let g = x.iter().zip(&diag).map(|(xi, d)| d * (xi - 1.0)).collect();
            (v, g)
        };
        let cfg = LbfgsConfig {
            max_iters: 10_000,
            grad_tol: 1e-8,
            ..Default::default()
        };
        let lbfgs = minimize(f, &[0.0; 3], &cfg);
        assert_eq!(lbfgs.status, Status::Converged);

        // steepest descent with the same backtracking rule
        let mut f = f;
        let mut x = vec![0.0; 3];
        let (mut v, mut g) = f(&x);
        let mut evals = 1;
        let mut gd_iters = 0;
        while norm_inf(&g) > cfg.grad_tol && gd_iters < cfg.max_iters {
            let d: Vec<f64> = g.iter().map(|gi| -gi).collect();
            let slope = dot(&g, &d);
            match backtrack(&mut f, &mut evals, &x, v, slope, &d, 1.0, &cfg.line_search) {
                Step::Accepted { x: nx, value, grad } => {
                    x = nx;
                    v = value;
                    g = grad;
                }
                _ => break,
            }
            gd_iters += 1;
        }
        assert!(lbfgs.iterations <= gd_iters, "{} vs {gd_iters}", lbfgs.iterations);
    }

    #[test]
    fn config_validation() {
        assert!(LbfgsConfig::default().validate().is_ok());
        let bad = LbfgsConfig {
            memory: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
