//! Small dense semidefinite programs solved with a log-det barrier method.
//!
//! Problems have the form
//!
//! ```text
//! maximize  cᵀy   subject to   G_j(y) = C_j + Σ_k y_k F_jk ≻ 0,  j = 1..J
//! ```
//!
//! and are solved by following the central path of
//! `−s·cᵀy − Σ_j log det G_j(y)` with damped Newton steps. Sizes here are a
//! handful of variables and blocks of dimension ≤ 10, so everything is dense.

use nalgebra::{DMatrix, DVector};

/// One affine symmetric block `C + Σ y_k F_k`; only nonzero terms are stored.
#[derive(Debug, Clone)]
pub struct AffineBlock {
    pub constant: DMatrix<f64>,
    pub terms: Vec<(usize, DMatrix<f64>)>,
}

impl AffineBlock {
    pub fn new(constant: DMatrix<f64>) -> Self {
        Self { constant, terms: Vec::new() }
    }

    pub fn term(mut self, var: usize, coeff: DMatrix<f64>) -> Self {
        if coeff.iter().any(|v| *v != 0.0) {
            self.terms.push((var, coeff));
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut g = self.constant.clone();
        for (k, f) in &self.terms {
            g += f * y[*k];
        }
        g
    }
}

#[derive(Debug, Clone)]
pub struct Sdp {
    pub objective: DVector<f64>,
    pub blocks: Vec<AffineBlock>,
}

#[derive(Debug, Clone, Copy)]
pub struct BarrierOptions {
    /// Stop when `ν/s` falls below `gap_tol · max(1, |cᵀy|)`.
    pub gap_tol: f64,
    pub growth: f64,
    pub initial_weight: f64,
    pub max_newton: usize,
    pub max_outer: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-9, growth: 10.0, initial_weight: 1.0, max_newton: 200, max_outer: 40 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Converged,
    /// Upper bound dropped below the caller's cutoff.
    BelowCutoff,
    /// Objective exceeded the caller's target.
    ReachedTarget,
}

#[derive(Debug, Clone)]
pub struct BarrierOutcome {
    pub y: DVector<f64>,
    pub objective: f64,
    /// `cᵀy + ν/s`, an estimate of the optimal value from above.
    pub upper_bound: f64,
    pub exit: Exit,
    pub newton_steps: usize,
}

impl Sdp {
    pub fn new(nvars: usize) -> Self {
        Self { objective: DVector::zeros(nvars), blocks: Vec::new() }
    }

    pub fn nvars(&self) -> usize {
        self.objective.len()
    }

    pub fn push(&mut self, block: AffineBlock) {
        self.blocks.push(block);
    }

    fn barrier_degree(&self) -> f64 {
        self.blocks.iter().map(AffineBlock::dim).sum::<usize>() as f64
    }

    /// `Σ log det G_j(y)`, or `None` when some block is not positive definite.
    fn log_det(&self, y: &DVector<f64>) -> Option<f64> {
        let mut total = 0.0;
        for b in &self.blocks {
            let chol = b.eval(y).cholesky()?;
            let l = chol.l_dirty();
            for i in 0..b.dim() {
                let d = l[(i, i)];
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                total += 2.0 * d.ln();
            }
        }
        Some(total)
    }

    pub fn is_strictly_feasible(&self, y: &DVector<f64>) -> bool {
        self.log_det(y).is_some()
    }

    /// Follows the central path from a strictly feasible `y0`.
    ///
    /// `target` stops early once `cᵀy ≥ target`; `cutoff` stops early once the
    /// upper bound is below `cutoff`.
    pub fn maximize(
        &self,
        y0: DVector<f64>,
        opts: &BarrierOptions,
        target: Option<f64>,
        cutoff: Option<f64>,
    ) -> Result<BarrierOutcome, String> {
        let m = self.nvars();
        if y0.len() != m {
            return Err(format!("start point has {} entries, problem has {m}", y0.len()));
        }
        if !self.is_strictly_feasible(&y0) {
            return Err("start point is not strictly feasible".into());
        }
        let nu = self.barrier_degree();
        let mut y = y0;
        let mut s = opts.initial_weight;
        let mut newton_steps = 0;

        for _ in 0..opts.max_outer {
            newton_steps += self.center(&mut y, s, opts)?;
            let obj = self.objective.dot(&y);
            let gap = nu / s;
            let ub = obj + gap;
            if let Some(t) = target {
                if obj >= t {
                    return Ok(BarrierOutcome { y, objective: obj, upper_bound: ub, exit: Exit::ReachedTarget, newton_steps });
                }
            }
            if let Some(c) = cutoff {
                if ub < c {
                    return Ok(BarrierOutcome { y, objective: obj, upper_bound: ub, exit: Exit::BelowCutoff, newton_steps });
                }
            }
            if gap <= opts.gap_tol * obj.abs().max(1.0) {
                return Ok(BarrierOutcome { y, objective: obj, upper_bound: ub, exit: Exit::Converged, newton_steps });
            }
            s *= opts.growth;
        }
        let obj = self.objective.dot(&y);
        Ok(BarrierOutcome { y, objective: obj, upper_bound: obj + nu / s, exit: Exit::Converged, newton_steps })
    }

    /// Damped Newton on `−s·cᵀy − log det`; returns the number of steps.
    fn center(&self, y: &mut DVector<f64>, s: f64, opts: &BarrierOptions) -> Result<usize, String> {
        let m = self.nvars();
        let value = |y: &DVector<f64>| self.log_det(y).map(|ld| -s * self.objective.dot(y) - ld);
        let mut current = value(y).ok_or("iterate left the feasible set")?;

        for step in 0..opts.max_newton {
            let mut grad = -&self.objective * s;
            let mut hess = DMatrix::<f64>::zeros(m, m);
            for b in &self.blocks {
                let g = b.eval(y);
                let inv = g.cholesky().ok_or("block lost definiteness")?.inverse();
                let w: Vec<(usize, DMatrix<f64>)> = b.terms.iter().map(|(k, f)| (*k, &inv * f)).collect();
                for (i, (ki, wi)) in w.iter().enumerate() {
                    grad[*ki] -= wi.trace();
                    for (kj, wj) in w.iter().skip(i) {
                        // tr(W_i W_j) without forming the product
                        let mut tr = 0.0;
                        for a in 0..wi.nrows() {
                            for c in 0..wi.ncols() {
                                tr += wi[(a, c)] * wj[(c, a)];
                            }
                        }
                        hess[(*ki, *kj)] += tr;
                        if ki != kj {
                            hess[(*kj, *ki)] += tr;
                        }
                    }
                }
            }
            if grad.iter().any(|v| !v.is_finite()) || hess.iter().any(|v| !v.is_finite()) {
                return Err("non-finite gradient or Hessian".into());
            }

            let dir = solve_spd(&hess, &(-&grad)).ok_or("singular Newton system")?;
            let decrement2 = -grad.dot(&dir);
            if !decrement2.is_finite() {
                return Err("non-finite Newton decrement".into());
            }
            if decrement2 <= 1e-9 {
                return Ok(step);
            }

            let mut alpha = 1.0;
            let slope = grad.dot(&dir);
            loop {
                let trial = &*y + &dir * alpha;
                if trial == *y {
                    // step is below rounding resolution
                    return Ok(step);
                }
                if let Some(v) = value(&trial) {
                    if v <= current + 0.25 * alpha * slope {
                        let gain = current - v;
                        *y = trial;
                        current = v;
                        if decrement2 < 1e-3 && gain <= 1e-13 * current.abs().max(1.0) {
                            // rounding floor reached
                            return Ok(step);
                        }
                        break;
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-14 {
                    // no progress possible at this weight
                    return Ok(step);
                }
            }
        }
        Err(format!("centering did not converge in {} Newton steps", opts.max_newton))
    }
}

/// Solves `H x = r` for symmetric positive (semi)definite `H`, adding a small
/// diagonal shift when plain Cholesky fails.
fn solve_spd(h: &DMatrix<f64>, r: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        return Some(ch.solve(r));
    }
    let scale = h.diagonal().iter().cloned().fold(0.0, f64::max).max(1e-300);
    let mut shift = 1e-14 * scale;
    for _ in 0..8 {
        let mut hs = h.clone();
        for i in 0..hs.nrows() {
            hs[(i, i)] += shift;
        }
        if let Some(ch) = hs.cholesky() {
            return Some(ch.solve(r));
        }
        shift *= 100.0;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn linear_program_on_a_box() {
        // maximize y0 + 2 y1 on 0 < y0 < 1, 0 < y1 < 3
        let mut sdp = Sdp::new(2);
        sdp.objective = DVector::from_vec(vec![1.0, 2.0]);
        sdp.push(AffineBlock::new(scalar(0.0)).term(0, scalar(1.0)));
        sdp.push(AffineBlock::new(scalar(1.0)).term(0, scalar(-1.0)));
        sdp.push(AffineBlock::new(scalar(0.0)).term(1, scalar(1.0)));
        sdp.push(AffineBlock::new(scalar(3.0)).term(1, scalar(-1.0)));
        let out = sdp.maximize(DVector::from_vec(vec![0.5, 1.0]), &BarrierOptions::default(), None, None).unwrap();
        assert_eq!(out.exit, Exit::Converged);
        assert_relative_eq!(out.objective, 7.0, max_relative = 1e-8);
    }

    #[test]
    fn largest_eigenvalue_bound() {
        // maximize t subject to S - tI ⪰ 0: optimum is λ_min(S)
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let mut sdp = Sdp::new(1);
        sdp.objective[0] = 1.0;
        sdp.push(AffineBlock::new(s.clone()).term(0, -DMatrix::identity(2, 2)));
        let out = sdp.maximize(DVector::from_element(1, 0.0), &BarrierOptions::default(), None, None).unwrap();
        let lmin = s.symmetric_eigen().eigenvalues.min();
        assert_relative_eq!(out.objective, lmin, max_relative = 1e-8);
        assert!(out.upper_bound >= lmin - 1e-12);
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let mut sdp = Sdp::new(1);
        sdp.push(AffineBlock::new(scalar(0.0)).term(0, scalar(1.0)));
        assert!(sdp.maximize(DVector::from_element(1, -1.0), &BarrierOptions::default(), None, None).is_err());
    }

    #[test]
    fn cutoff_stops_early() {
        let mut sdp = Sdp::new(1);
        sdp.objective[0] = 1.0;
        sdp.push(AffineBlock::new(scalar(-1.0)).term(0, scalar(-1.0))); // y < -1
        sdp.push(AffineBlock::new(scalar(10.0)).term(0, scalar(1.0))); // y > -10
        let out = sdp.maximize(DVector::from_element(1, -5.0), &BarrierOptions::default(), None, Some(0.0)).unwrap();
        assert_eq!(out.exit, Exit::BelowCutoff);
        assert!(out.upper_bound < 0.0);
    }
}
