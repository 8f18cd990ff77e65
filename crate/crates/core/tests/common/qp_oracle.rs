//! Reference solver for min ½ αᵀQα  s.t. 0 ≤ α ≤ C, Σα = 1.
//!
//! Accelerated projected gradient gets close to the optimum, the active set
//! is read off, and the free block is then solved exactly from the KKT
//! linear system. Tiny problems are instead solved by enumerating every
//! assignment of indices to {0, free, C}.

use nalgebra::{DMatrix, DVector};

pub struct OracleSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
}

pub fn rbf_matrix(rows: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|a| {
            rows.iter()
                .map(|b| {
                    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                    (-gamma * d2).exp()
                })
                .collect()
        })
        .collect()
}

pub fn linear_matrix(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|a| rows.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum()).collect())
        .collect()
}

fn matvec(q: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    q.iter().map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Euclidean projection onto the capped simplex, by bisection on the shift.
fn project(v: &[f64], c: f64) -> Vec<f64> {
    let total = |tau: f64| v.iter().map(|x| (x - tau).clamp(0.0, c)).sum::<f64>();
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - c - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    v.iter().map(|x| (x - tau).clamp(0.0, c)).collect()
}

fn lipschitz(q: &[Vec<f64>]) -> f64 {
    // Gershgorin bound on the largest eigenvalue.
    q.iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn fista(q: &[Vec<f64>], c: f64, iters: usize) -> Vec<f64> {
    let n = q.len();
    let l = lipschitz(q).max(1e-12);
    let mut x = project(&vec![1.0 / n as f64; n], c);
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let g = matvec(q, &y);
        let step: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - b / l).collect();
        let next = project(&step, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = next
            .iter()
            .zip(&x)
            .map(|(a, b)| a + (t - 1.0) / t_next * (a - b))
            .collect();
        x = next;
        t = t_next;
    }
    x
}

#[derive(Clone, Copy, PartialEq)]
enum State {
    Zero,
    Free,
    Upper,
}

/// Solves the KKT system for a given partition and checks optimality.
fn solve_partition(q: &[Vec<f64>], c: f64, states: &[State], slack: f64) -> Option<OracleSolution> {
    let n = q.len();
    let free: Vec<usize> = (0..n).filter(|&i| states[i] == State::Free).collect();
    let upper: Vec<usize> = (0..n).filter(|&i| states[i] == State::Upper).collect();
    let mut alpha = vec![0.0; n];
    for &i in &upper {
        alpha[i] = c;
    }
    let bound_mass = c * upper.len() as f64;
    let rho;
    if free.is_empty() {
        if (bound_mass - 1.0).abs() > 1e-12 {
            return None;
        }
        let g = matvec(q, &alpha);
        let lo = upper.iter().map(|&i| g[i]).fold(f64::NEG_INFINITY, f64::max);
        let hi = (0..n)
            .filter(|&i| states[i] == State::Zero)
            .map(|i| g[i])
            .fold(f64::INFINITY, f64::min);
        if lo > hi + slack {
            return None;
        }
        rho = if lo.is_finite() && hi.is_finite() {
            0.5 * (lo + hi)
        } else if lo.is_finite() {
            lo
        } else {
            hi
        };
    } else {
        let m = free.len();
        let mut a = DMatrix::<f64>::zeros(m + 1, m + 1);
        let mut rhs = DVector::<f64>::zeros(m + 1);
        for (r, &i) in free.iter().enumerate() {
            for (s, &j) in free.iter().enumerate() {
                a[(r, s)] = q[i][j];
            }
            a[(r, m)] = -1.0;
            a[(m, r)] = 1.0;
            rhs[r] = -upper.iter().map(|&j| q[i][j] * c).sum::<f64>();
        }
        rhs[m] = 1.0 - bound_mass;
        let sol = a.lu().solve(&rhs)?;
        for (r, &i) in free.iter().enumerate() {
            alpha[i] = sol[r];
        }
        rho = sol[m];
        if free.iter().any(|&i| alpha[i] < -slack || alpha[i] > c + slack) {
            return None;
        }
    }
    let g = matvec(q, &alpha);
    for i in 0..n {
        match states[i] {
            State::Zero if g[i] < rho - slack => return None,
            State::Upper if g[i] > rho + slack => return None,
            _ => {}
        }
    }
    Some(OracleSolution { alpha, rho })
}

/// Exhaustive search over all 3ⁿ partitions; for n ≤ 9.
pub fn solve_enumerate(q: &[Vec<f64>], nu: f64) -> OracleSolution {
    let n = q.len();
    assert!(n <= 9);
    let c = 1.0 / (nu * n as f64);
    let mut best: Option<(f64, OracleSolution)> = None;
    let mut states = vec![State::Zero; n];
    for code in 0..3usize.pow(n as u32) {
        let mut x = code;
        for s in states.iter_mut() {
            *s = [State::Zero, State::Free, State::Upper][x % 3];
            x /= 3;
        }
        if let Some(sol) = solve_partition(q, c, &states, 1e-10) {
            let obj = 0.5 * sol.alpha.iter().zip(matvec(q, &sol.alpha)).map(|(a, g)| a * g).sum::<f64>();
            if best.as_ref().is_none_or(|(b, _)| obj < *b - 1e-14) {
                best = Some((obj, sol));
            }
        }
    }
    best.expect("some partition satisfies the KKT conditions").1
}

/// Projected-gradient warm start followed by an exact active-set solve.
pub fn solve(q: &[Vec<f64>], nu: f64) -> OracleSolution {
    let n = q.len();
    let c = 1.0 / (nu * n as f64);
    let x = fista(q, c, 20_000);
    for tol in [1e-7, 1e-6, 1e-5, 1e-4, 1e-3] {
        let states: Vec<State> = x
            .iter()
            .map(|&a| {
                if a <= tol {
                    State::Zero
                } else if a >= c - tol {
                    State::Upper
                } else {
                    State::Free
                }
            })
            .collect();
        if let Some(sol) = solve_partition(q, c, &states, 1e-9) {
            return sol;
        }
    }
    panic!("oracle could not identify the active set");
}

/// Decision values `Σ αⱼ Q[i][j] − ρ` at the training points.
pub fn training_decisions(q: &[Vec<f64>], sol: &OracleSolution) -> Vec<f64> {
    matvec(q, &sol.alpha).into_iter().map(|g| g - sol.rho).collect()
}
