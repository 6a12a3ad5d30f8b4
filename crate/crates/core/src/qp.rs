//! Small dense convex QP solver.
//!
//! Solves `min 0.5 x'Gx + c'x  s.t.  A x >= b` with a primal active-set
//! method. `G` must be positive definite and the caller supplies a feasible
//! starting point.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("starting point violates constraint {0} by {1}")]
    InfeasibleStart(usize, f64),
    #[error("KKT system is singular")]
    Singular,
    #[error("no convergence after {0} iterations")]
    MaxIterations(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub g: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per constraint, zero off the final working set.
    pub lambda: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

const MAX_ITER: usize = 500;
const FEAS_TOL: f64 = 1e-12;

impl QpProblem {
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.g * x)) + self.c.dot(x)
    }

    fn check(&self, x0: &DVector<f64>) -> Result<(), QpError> {
        let n = self.g.nrows();
        if self.g.ncols() != n || self.c.len() != n || x0.len() != n {
            return Err(QpError::Dimension(format!("{n} variables")));
        }
        if self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return Err(QpError::Dimension(format!("{} constraints", self.b.len())));
        }
        Ok(())
    }

    /// Active-set solve from a feasible `x0`.
    pub fn solve(&self, x0: DVector<f64>) -> Result<QpSolution, QpError> {
        self.check(&x0)?;
        let n = x0.len();
        let m = self.b.len();
        let scale = 1.0 + self.b.amax();
        let slack0 = &self.a * &x0 - &self.b;
        if let Some((i, v)) = slack0.iter().enumerate().find(|(_, v)| **v < -FEAS_TOL * scale) {
            return Err(QpError::InfeasibleStart(i, -v));
        }

        let mut x = x0;
        let mut working: Vec<usize> = Vec::new();
        for iter in 0..MAX_ITER {
            let grad = &self.g * &x + &self.c;
            let k = working.len();
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(&self.g);
            for (j, &i) in working.iter().enumerate() {
                for col in 0..n {
                    let v = self.a[(i, col)];
                    kkt[(col, n + j)] = -v;
                    kkt[(n + j, col)] = v;
                }
            }
            let mut rhs = DVector::zeros(n + k);
            rhs.rows_mut(0, n).copy_from(&(-&grad));
            let sol = kkt.lu().solve(&rhs).ok_or(QpError::Singular)?;
            let p = sol.rows(0, n).into_owned();
            let lam = sol.rows(n, k).into_owned();

            if p.amax() <= 1e-13 * (1.0 + x.amax()) {
                let worst = lam.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1));
                match worst {
                    Some((j, &l)) if l < -1e-12 => {
                        working.remove(j);
                    }
                    _ => {
                        let mut lambda = DVector::zeros(m);
                        for (j, &i) in working.iter().enumerate() {
                            lambda[i] = lam[j].max(0.0);
                        }
                        let objective = self.objective(&x);
                        return Ok(QpSolution { x, lambda, objective, iterations: iter + 1 });
                    }
                }
                continue;
            }

            let mut alpha = 1.0;
            let mut blocking = None;
            for i in 0..m {
                if working.contains(&i) {
                    continue;
                }
                let row = self.a.row(i);
                let ap = row.dot(&p.transpose());
                if ap < -1e-15 {
                    let slack = (row.dot(&x.transpose()) - self.b[i]).max(0.0);
                    let t = slack / -ap;
                    if t < alpha {
                        alpha = t;
                        blocking = Some(i);
                    }
                }
            }
            x.axpy(alpha, &p, 1.0);
            if let Some(i) = blocking {
                working.push(i);
            }
        }
        Err(QpError::MaxIterations(MAX_ITER))
    }

    /// Infinity-norm KKT residuals of a candidate solution.
    pub fn kkt_residual(&self, sol: &QpSolution) -> KktResidual {
        let x = &sol.x;
        let lambda = &sol.lambda;
        let stat = &self.g * x + &self.c - self.a.transpose() * lambda;
        let slack = &self.a * x - &self.b;
        KktResidual {
            stationarity: stat.amax(),
            primal: slack.iter().fold(0.0_f64, |m, s| m.max(-s)),
            dual: lambda.iter().fold(0.0_f64, |m, l| m.max(-l)),
            complementarity: slack.iter().zip(lambda.iter()).fold(0.0_f64, |m, (s, l)| m.max((s * l).abs())),
        }
    }
}
