//! Small dense log-barrier interior-point solver.
//!
//! Problems are posed as `minimize f0(x)` over a strictly feasible domain
//! described by a self-concordant barrier. The outer loop scales the
//! objective weight by `mu` until the duality-gap bound `ν/t` falls below the
//! tolerance; each centering step is a damped Newton iteration.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConvexError {
    #[error("starting point is not strictly feasible")]
    InfeasibleStart,
    #[error("newton step failed: singular barrier hessian")]
    SingularHessian,
}

pub trait BarrierProblem {
    fn dim(&self) -> usize;
    /// Barrier parameter ν (sum over constraints); the gap after centering is ν/t.
    fn barrier_parameter(&self) -> f64;
    fn objective(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>);
    /// Barrier value, gradient and Hessian, or `None` outside the strict domain.
    fn barrier(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)>;

    /// Objective value alone, used by the line search.
    fn objective_value(&self, x: &DVector<f64>) -> f64 {
        self.objective(x).0
    }

    /// Barrier value alone, used by the line search.
    fn barrier_value(&self, x: &DVector<f64>) -> Option<f64> {
        self.barrier(x).map(|b| b.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BarrierSettings {
    pub t0: f64,
    pub mu: f64,
    pub gap_tol: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Stop as soon as the objective drops below this value.
    pub target: Option<f64>,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        Self {
            t0: 1.0,
            mu: 10.0,
            gap_tol: 1e-10,
            newton_tol: 1e-12,
            max_newton: 200,
            target: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BarrierResult {
    pub x: DVector<f64>,
    pub objective: f64,
    pub newton_steps: usize,
    pub gap_bound: f64,
}

fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        return Some(-ch.solve(g));
    }
    let scale = h.diagonal().amax().max(1e-300);
    let mut reg = 1e-12 * scale;
    for _ in 0..12 {
        let mut hr = h.clone();
        for i in 0..hr.nrows() {
            hr[(i, i)] += reg;
        }
        if let Some(ch) = hr.cholesky() {
            return Some(-ch.solve(g));
        }
        reg *= 100.0;
    }
    None
}

pub fn solve<P: BarrierProblem>(
    p: &P,
    x0: DVector<f64>,
    settings: &BarrierSettings,
) -> Result<BarrierResult, ConvexError> {
    if p.barrier(&x0).is_none() {
        return Err(ConvexError::InfeasibleStart);
    }
    let nu = p.barrier_parameter().max(1.0);
    let mut x = x0;
    let mut t = settings.t0;
    let mut steps = 0;
    loop {
        for _ in 0..settings.max_newton {
            let (f0, g0, h0) = p.objective(&x);
            let (fb, gb, hb) = p.barrier(&x).ok_or(ConvexError::InfeasibleStart)?;
            let val = t * f0 + fb;
            let g = g0 * t + gb;
            let h = h0 * t + hb;
            let dx = newton_direction(&h, &g).ok_or(ConvexError::SingularHessian)?;
            let decrement = -g.dot(&dx);
            steps += 1;
            if decrement * 0.5 <= settings.newton_tol {
                break;
            }
            let mut s = 1.0;
            let mut accepted = false;
            for _ in 0..80 {
                let xn = &x + &dx * s;
                if let Some(fbn) = p.barrier_value(&xn) {
                    let f0n = p.objective_value(&xn);
                    if t * f0n + fbn <= val - 0.25 * s * decrement {
                        x = xn;
                        accepted = true;
                        break;
                    }
                }
                s *= 0.5;
            }
            if !accepted {
                break;
            }
            if let Some(target) = settings.target {
                let objective = p.objective_value(&x);
                if objective < target {
                    return Ok(BarrierResult {
                        x,
                        objective,
                        newton_steps: steps,
                        gap_bound: nu / t,
                    });
                }
            }
        }
        if nu / t < settings.gap_tol {
            break;
        }
        t *= settings.mu;
    }
    let objective = p.objective(&x).0;
    Ok(BarrierResult {
        x,
        objective,
        newton_steps: steps,
        gap_bound: nu / t,
    })
}

/// Affine or second-order-cone constraint on the decision vector.
#[derive(Debug, Clone)]
pub enum Constraint {
    /// `aᵀx ≤ b`
    Linear { a: DVector<f64>, b: f64 },
    /// `‖M x + c‖ ≤ dᵀx + e`
    Cone {
        m: DMatrix<f64>,
        c: DVector<f64>,
        d: DVector<f64>,
        e: f64,
    },
}

impl Constraint {
    /// Signed slack: positive inside the feasible set.
    pub fn slack(&self, x: &DVector<f64>) -> f64 {
        match self {
            Constraint::Linear { a, b } => b - a.dot(x),
            Constraint::Cone { m, c, d, e } => d.dot(x) + e - (m * x + c).norm(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Objective {
    Linear(DVector<f64>),
    /// `½ xᵀ P x + qᵀ x`
    Quadratic { p: DMatrix<f64>, q: DVector<f64> },
}

/// Linear or convex quadratic objective over linear and cone constraints.
#[derive(Debug, Clone)]
pub struct ConicProgram {
    pub dim: usize,
    pub objective: Objective,
    pub constraints: Vec<Constraint>,
}

impl BarrierProblem for ConicProgram {
    fn dim(&self) -> usize {
        self.dim
    }

    fn barrier_parameter(&self) -> f64 {
        self.constraints
            .iter()
            .map(|c| match c {
                Constraint::Linear { .. } => 1.0,
                Constraint::Cone { .. } => 2.0,
            })
            .sum()
    }

    fn objective(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        match &self.objective {
            Objective::Linear(c) => (c.dot(x), c.clone(), DMatrix::zeros(self.dim, self.dim)),
            Objective::Quadratic { p, q } => {
                let px = p * x;
                (0.5 * x.dot(&px) + q.dot(x), px + q, p.clone())
            }
        }
    }

    fn barrier(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let n = self.dim;
        let mut val = 0.0;
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        for con in &self.constraints {
            match con {
                Constraint::Linear { a, b } => {
                    let s = b - a.dot(x);
                    if !(s > 0.0) {
                        return None;
                    }
                    val -= s.ln();
                    g.axpy(1.0 / s, a, 1.0);
                    h.ger(1.0 / (s * s), a, a, 1.0);
                }
                Constraint::Cone { m, c, d, e } => {
                    let u = m * x + c;
                    let s = d.dot(x) + e;
                    let phi = s * s - u.norm_squared();
                    if !(s > 0.0 && phi > 0.0) {
                        return None;
                    }
                    val -= phi.ln();
                    let w = d * (2.0 * s) - m.transpose() * &u * 2.0;
                    g.axpy(-1.0 / phi, &w, 1.0);
                    h.ger(1.0 / (phi * phi), &w, &w, 1.0);
                    h.ger(-2.0 / phi, d, d, 1.0);
                    h.gemm_tr(2.0 / phi, m, m, 1.0);
                }
            }
        }
        Some((val, g, h))
    }

    fn objective_value(&self, x: &DVector<f64>) -> f64 {
        self.linear_value(x)
    }

    fn barrier_value(&self, x: &DVector<f64>) -> Option<f64> {
        self.barrier_only(x)
    }
}

impl ConicProgram {
    fn linear_value(&self, x: &DVector<f64>) -> f64 {
        match &self.objective {
            Objective::Linear(c) => c.dot(x),
            Objective::Quadratic { p, q } => 0.5 * x.dot(&(p * x)) + q.dot(x),
        }
    }

    fn barrier_only(&self, x: &DVector<f64>) -> Option<f64> {
        let mut val = 0.0;
        for con in &self.constraints {
            let phi = match con {
                Constraint::Linear { a, b } => b - a.dot(x),
                Constraint::Cone { m, c, d, e } => {
                    let s = d.dot(x) + e;
                    if !(s > 0.0) {
                        return None;
                    }
                    s * s - (m * x + c).norm_squared()
                }
            };
            if !(phi > 0.0) {
                return None;
            }
            val -= phi.ln();
        }
        Some(val)
    }

    pub fn min_slack(&self, x: &DVector<f64>) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.slack(x))
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_lp() {
        // minimize x + 2y over the unit box shifted by (1, 1)
        let cons = vec![
            Constraint::Linear { a: DVector::from_vec(vec![1.0, 0.0]), b: 2.0 },
            Constraint::Linear { a: DVector::from_vec(vec![-1.0, 0.0]), b: -1.0 },
            Constraint::Linear { a: DVector::from_vec(vec![0.0, 1.0]), b: 2.0 },
            Constraint::Linear { a: DVector::from_vec(vec![0.0, -1.0]), b: -1.0 },
        ];
        let p = ConicProgram {
            dim: 2,
            objective: Objective::Linear(DVector::from_vec(vec![1.0, 2.0])),
            constraints: cons,
        };
        let r = solve(&p, DVector::from_vec(vec![1.5, 1.5]), &BarrierSettings::default()).unwrap();
        assert!((r.objective - 3.0).abs() < 1e-8);
    }

    #[test]
    fn cone_projection() {
        // minimize t subject to ‖x − (3, 4)‖ ≤ t with x ≤ 0 component-wise: answer 5
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let cons = vec![
            Constraint::Cone {
                m,
                c: DVector::from_vec(vec![-3.0, -4.0]),
                d: DVector::from_vec(vec![0.0, 0.0, 1.0]),
                e: 0.0,
            },
            Constraint::Linear { a: DVector::from_vec(vec![1.0, 0.0, 0.0]), b: 0.0 },
            Constraint::Linear { a: DVector::from_vec(vec![0.0, 1.0, 0.0]), b: 0.0 },
        ];
        let p = ConicProgram {
            dim: 3,
            objective: Objective::Linear(DVector::from_vec(vec![0.0, 0.0, 1.0])),
            constraints: cons,
        };
        let r = solve(&p, DVector::from_vec(vec![-1.0, -1.0, 20.0]), &BarrierSettings::default()).unwrap();
        assert!((r.objective - 5.0).abs() < 1e-7);
    }

    #[test]
    fn rejects_infeasible_start() {
        let p = ConicProgram {
            dim: 1,
            objective: Objective::Linear(DVector::from_vec(vec![1.0])),
            constraints: vec![Constraint::Linear { a: DVector::from_vec(vec![1.0]), b: 0.0 }],
        };
        assert!(matches!(
            solve(&p, DVector::from_vec(vec![1.0]), &BarrierSettings::default()),
            Err(ConvexError::InfeasibleStart)
        ));
    }
}
