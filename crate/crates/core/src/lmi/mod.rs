//! Block LMIs at polytope vertices, their feasibility, and independent
//! eigenvalue verification of every solution.
//!
//! For a vertex slope matrix `Ψ` with `M = A + BKΨ` the certificate is a
//! triple `(P, χ, γ)` with
//!
//! ```text
//! ⎡ MᵀP + PM + τP   PD  ⎤
//! ⎣ DᵀP            −χI ⎦ ≺ 0,      P ≻ γI,   χ > 0,  γ > 0.
//! ```
//!
//! The conditions are homogeneous of degree one in `(P, χ, γ)`, so the solver
//! normalizes `tr P + χ ≤ n + 1` and maximizes a common margin `t` on every
//! block. Solutions are then re-checked by [`verify`], which only uses a
//! symmetric eigendecomposition and never looks at solver internals.

pub mod sdp;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{closed_loop_matrix, Gain, Plant};
use sdp::{AffineBlock, BarrierOptions, Exit, Sdp};

/// Default cap on vertices enumerated for one interval.
pub const DEFAULT_VERTEX_CAP: usize = 1 << 16;
/// Default relative verification tolerance.
pub const DEFAULT_VERIFY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexMode {
    /// Independent slope per state component: `2ⁿ` vertices.
    Componentwise,
    /// One slope for the whole control signal, `Ψ = ρI`: 2 vertices.
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeAssignment {
    Diagonal(Vec<f64>),
    Scalar(f64),
}

impl SlopeAssignment {
    pub fn diag(&self, n: usize) -> Vec<f64> {
        match self {
            SlopeAssignment::Diagonal(d) => d.clone(),
            SlopeAssignment::Scalar(r) => vec![*r; n],
        }
    }
}

pub fn vertex_set(rho_prev: f64, rho_cur: f64, n: usize, mode: VertexMode) -> Result<Vec<SlopeAssignment>> {
    vertex_set_capped(rho_prev, rho_cur, n, mode, DEFAULT_VERTEX_CAP)
}

/// Corners of the slope box `[rho_prev, rho_cur]ⁿ` (or its diagonal).
///
/// Componentwise vertices are listed in binary order with the first entry as
/// the most significant bit.
pub fn vertex_set_capped(
    rho_prev: f64,
    rho_cur: f64,
    n: usize,
    mode: VertexMode,
    cap: usize,
) -> Result<Vec<SlopeAssignment>> {
    if !(rho_prev < rho_cur) {
        return Err(Error::InvalidParameter(format!(
            "vertex interval needs rho_prev < rho_cur, got ({rho_prev}, {rho_cur})"
        )));
    }
    match mode {
        VertexMode::Scalar => Ok(vec![SlopeAssignment::Scalar(rho_prev), SlopeAssignment::Scalar(rho_cur)]),
        VertexMode::Componentwise => {
            let needed: u128 = if n >= 127 { u128::MAX } else { 1u128 << n };
            if needed > cap as u128 {
                return Err(Error::VertexBudgetExceeded { needed, cap });
            }
            let count = needed as usize;
            Ok((0..count)
                .map(|idx| {
                    SlopeAssignment::Diagonal(
                        (0..n)
                            .map(|i| if idx >> (n - 1 - i) & 1 == 1 { rho_cur } else { rho_prev })
                            .collect(),
                    )
                })
                .collect())
        }
    }
}

/// Data of one vertex LMI; the unknowns `(P, χ, γ)` are supplied separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexLmi {
    pub closed_loop: DMatrix<f64>,
    pub disturbance: DMatrix<f64>,
    pub tau: f64,
}

impl VertexLmi {
    pub fn n(&self) -> usize {
        self.closed_loop.nrows()
    }

    pub fn l(&self) -> usize {
        self.disturbance.ncols()
    }

    /// The `(n + l)`-square block matrix evaluated at `(P, χ)`.
    pub fn block(&self, p: &DMatrix<f64>, chi: f64) -> DMatrix<f64> {
        let (n, l) = (self.n(), self.l());
        let m = &self.closed_loop;
        let top_left = m.transpose() * p + p * m + p * self.tau;
        let top_right = p * &self.disturbance;
        let mut out = DMatrix::zeros(n + l, n + l);
        out.view_mut((0, 0), (n, n)).copy_from(&top_left);
        out.view_mut((0, n), (n, l)).copy_from(&top_right);
        out.view_mut((n, 0), (l, n)).copy_from(&top_right.transpose());
        for i in 0..l {
            out[(n + i, n + i)] = -chi;
        }
        out
    }

    /// Coefficients of the block as a linear map of `(svec P, χ)`.
    fn linear_terms(&self) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
        let n = self.n();
        let p_terms = sym_basis(n).iter().map(|e| self.block(e, 0.0)).collect();
        let chi_term = self.block(&DMatrix::zeros(n, n), 1.0);
        (p_terms, chi_term)
    }
}

/// Builds the vertex LMI for slope assignment `psi` and decay rate `tau`.
pub fn assemble(plant: &Plant, gain: &Gain, psi: &SlopeAssignment, tau: f64) -> Result<VertexLmi> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau must be >= 0, got {tau}")));
    }
    let closed_loop = closed_loop_matrix(plant, gain, &psi.diag(plant.n()))?;
    Ok(VertexLmi { closed_loop, disturbance: plant.d.clone(), tau })
}

/// Certificate for one set of vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiSolution {
    pub p: DMatrix<f64>,
    pub chi: f64,
    pub gamma: f64,
    /// `−max_v λ_max(block_v)`: how far the worst vertex is from the boundary.
    pub margin: f64,
}

impl LmiSolution {
    pub fn p_norm(&self) -> f64 {
        spectral_norm_sym(&self.p)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { p: &self.p * c, chi: self.chi * c, gamma: self.gamma * c, margin: self.margin * c }
    }
}

fn spectral_norm_sym(p: &DMatrix<f64>) -> f64 {
    let sym = (p + p.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

fn eig_min(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

fn eig_max(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.max()
}

/// Eigenvalue check of a solution at one vertex.
///
/// Tolerances are relative to `‖P‖₂`, so the check is invariant under the
/// scaling `(P, χ, γ) → c·(P, χ, γ)`.
pub fn verify(vertex: &VertexLmi, sol: &LmiSolution, tol: f64) -> bool {
    let n = vertex.n();
    if sol.p.nrows() != n || sol.p.ncols() != n {
        return false;
    }
    let finite = sol.p.iter().all(|v| v.is_finite()) && sol.chi.is_finite() && sol.gamma.is_finite();
    if !finite || !(sol.chi > 0.0) || !(sol.gamma > 0.0) {
        return false;
    }
    let norm = spectral_norm_sym(&sol.p);
    if !(norm > 0.0) {
        return false;
    }
    let asym = (&sol.p - sol.p.transpose()).norm();
    if asym > tol * norm {
        return false;
    }
    let p = (&sol.p + sol.p.transpose()) * 0.5;
    if eig_min(&p) < tol * norm {
        return false;
    }
    let shifted = &p - DMatrix::identity(n, n) * sol.gamma;
    if eig_min(&shifted) < -tol * norm {
        return false;
    }
    eig_max(&vertex.block(&p, sol.chi)) <= -tol * norm
}

pub fn verify_all(vertices: &[VertexLmi], sol: &LmiSolution, tol: f64) -> bool {
    vertices.iter().all(|v| verify(v, sol, tol))
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub verify_tol: f64,
    /// When set, a feasible solution is re-optimized for `γ − w·χ` subject to
    /// `‖P‖ ≤ 1`, with `w` the given weight.
    pub refine_chi_weight: Option<f64>,
    pub barrier: BarrierOptions,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { verify_tol: DEFAULT_VERIFY_TOL, refine_chi_weight: None, barrier: BarrierOptions::default() }
    }
}

impl SolveOptions {
    /// Margin a solver answer must exceed, relative to `‖P‖`, before it is
    /// handed to [`verify`].
    fn accept_margin(&self) -> f64 {
        10.0 * self.verify_tol
    }
}

fn sym_basis(n: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let mut e = DMatrix::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            out.push(e);
        }
    }
    out
}

fn svec(p: &DMatrix<f64>) -> Vec<f64> {
    let n = p.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            out.push(if i == j { p[(i, i)] } else { 0.5 * (p[(i, j)] + p[(j, i)]) });
        }
    }
    out
}

fn unsvec(y: &[f64], n: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            p[(i, j)] = y[k];
            p[(j, i)] = y[k];
            k += 1;
        }
    }
    p
}

fn check_vertices(vertices: &[VertexLmi]) -> Result<(usize, usize)> {
    let first = vertices.first().ok_or_else(|| Error::InvalidParameter("empty vertex list".into()))?;
    let (n, l) = (first.n(), first.l());
    for v in vertices {
        if v.n() != n || v.l() != l || v.closed_loop.ncols() != n || v.disturbance.nrows() != n {
            return Err(Error::DimensionMismatch("vertices disagree on (n, l)".into()));
        }
    }
    Ok((n, l))
}

/// Variable layout shared by the problem builders: `svec P`, then `χ` when it
/// is free, then one trailing scalar (`t` or `γ`).
struct Layout {
    n: usize,
    np: usize,
    chi: Option<usize>,
    last: usize,
}

impl Layout {
    fn new(n: usize, free_chi: bool) -> Self {
        let np = n * (n + 1) / 2;
        let chi = free_chi.then_some(np);
        let last = np + usize::from(free_chi);
        Self { n, np, chi, last }
    }

    fn nvars(&self) -> usize {
        self.last + 1
    }

    fn p(&self, y: &DVector<f64>) -> DMatrix<f64> {
        unsvec(&y.as_slice()[..self.np], self.n)
    }

    fn pack(&self, p: &DMatrix<f64>, chi: f64, last: f64) -> DVector<f64> {
        let mut y = svec(p);
        if self.chi.is_some() {
            y.push(chi);
        }
        y.push(last);
        DVector::from_vec(y)
    }

    /// `−block_v(P, χ) + shift` as an affine block; `fixed_chi` is used when
    /// `χ` is not a variable.
    fn negated_vertex(&self, v: &VertexLmi, fixed_chi: f64, shift: DMatrix<f64>) -> AffineBlock {
        let (p_terms, chi_term) = v.linear_terms();
        let mut constant = shift;
        if self.chi.is_none() {
            constant -= &chi_term * fixed_chi;
        }
        let mut block = AffineBlock::new(constant);
        for (k, term) in p_terms.into_iter().enumerate() {
            block = block.term(k, -term);
        }
        if let Some(c) = self.chi {
            block = block.term(c, -chi_term);
        }
        block
    }

    /// `P + shift·I` (shift applied through the constant).
    fn p_block(&self, sign: f64, constant: DMatrix<f64>) -> AffineBlock {
        let mut block = AffineBlock::new(constant);
        for (k, e) in sym_basis(self.n).into_iter().enumerate() {
            block = block.term(k, e * sign);
        }
        block
    }

    fn trace_cap(&self, cap: f64) -> AffineBlock {
        let mut block = AffineBlock::new(DMatrix::from_element(1, 1, cap));
        let mut k = 0;
        for i in 0..self.n {
            for j in i..self.n {
                if i == j {
                    block = block.term(k, DMatrix::from_element(1, 1, -1.0));
                }
                k += 1;
            }
        }
        block
    }
}

fn scalar_block(constant: f64, terms: &[(usize, f64)]) -> AffineBlock {
    let mut block = AffineBlock::new(DMatrix::from_element(1, 1, constant));
    for (k, c) in terms {
        block = block.term(*k, DMatrix::from_element(1, 1, *c));
    }
    block
}

fn worst_block_eig(vertices: &[VertexLmi], p: &DMatrix<f64>, chi: f64) -> f64 {
    vertices.iter().map(|v| eig_max(&v.block(p, chi))).fold(f64::NEG_INFINITY, f64::max)
}

/// Finds one `(P, χ, γ)` satisfying the LMI at every vertex simultaneously.
///
/// Returns [`Error::Infeasible`] when the best achievable margin is below the
/// acceptance threshold, and [`Error::NumericalFailure`] when the barrier
/// iteration breaks down or its answer does not pass [`verify`].
pub fn solve_feasibility(vertices: &[VertexLmi], opts: &SolveOptions) -> Result<LmiSolution> {
    let (n, l) = check_vertices(vertices)?;
    let lay = Layout::new(n, true);
    let t = lay.last;
    let chi = lay.chi.expect("free chi");
    let mut sdp = Sdp::new(lay.nvars());
    sdp.objective[t] = 1.0;
    let eye_nl = DMatrix::<f64>::identity(n + l, n + l);
    for v in vertices {
        sdp.push(lay.negated_vertex(v, 0.0, DMatrix::zeros(n + l, n + l)).term(t, -eye_nl.clone()));
    }
    sdp.push(lay.p_block(1.0, DMatrix::zeros(n, n)).term(t, -DMatrix::identity(n, n)));
    sdp.push(scalar_block(0.0, &[(chi, 1.0), (t, -1.0)]));
    sdp.push(lay.trace_cap(n as f64 + 1.0).term(chi, DMatrix::from_element(1, 1, -1.0)));

    let p0 = DMatrix::<f64>::identity(n, n) * 0.5;
    let chi0 = 0.5;
    let t0 = (-worst_block_eig(vertices, &p0, chi0)).min(0.5) - 1.0;
    let y0 = lay.pack(&p0, chi0, t0);

    let out = sdp.maximize(y0, &opts.barrier, None, Some(0.0)).map_err(Error::NumericalFailure)?;
    let p = lay.p(&out.y);
    let chi_v = out.y[chi];
    let norm = spectral_norm_sym(&p);
    if out.exit == Exit::BelowCutoff || out.objective <= opts.accept_margin() * norm {
        return Err(Error::Infeasible(format!(
            "best margin {:.3e} (upper bound {:.3e}) across {} vertices",
            out.objective,
            out.upper_bound,
            vertices.len()
        )));
    }
    let gamma = eig_min(&p) * (1.0 - 1e-6);
    let margin = -worst_block_eig(vertices, &p, chi_v);
    let sol = LmiSolution { p, chi: chi_v, gamma, margin };
    if !verify_all(vertices, &sol, opts.verify_tol) {
        return Err(Error::NumericalFailure("solver answer failed eigenvalue verification".into()));
    }
    match opts.refine_chi_weight {
        Some(w) => Ok(refine(vertices, &sol, w, opts).unwrap_or(sol)),
        None => Ok(sol),
    }
}

/// Re-optimizes a verified solution for `γ − w·χ` with `P ⪯ I`.
///
/// Returns `None` when the refined point does not verify or does not improve
/// the objective, in which case callers keep the original.
fn refine(vertices: &[VertexLmi], start: &LmiSolution, w: f64, opts: &SolveOptions) -> Option<LmiSolution> {
    let n = start.p.nrows();
    let l = vertices[0].l();
    let lay = Layout::new(n, true);
    let (chi, gamma) = (lay.chi.expect("free chi"), lay.last);
    let eta = opts.accept_margin();

    let scale = 0.5 / start.p_norm();
    let s0 = start.scaled(scale);
    if s0.margin <= 1.5 * eta {
        return None;
    }
    let chi_cap = (10.0 * s0.chi).max(1e6);

    let mut sdp = Sdp::new(lay.nvars());
    sdp.objective[gamma] = 1.0;
    sdp.objective[chi] = -w;
    for v in vertices {
        sdp.push(lay.negated_vertex(v, 0.0, DMatrix::identity(n + l, n + l) * -eta));
    }
    sdp.push(lay.p_block(-1.0, DMatrix::identity(n, n)));
    sdp.push(lay.p_block(1.0, DMatrix::zeros(n, n)).term(gamma, -DMatrix::identity(n, n)));
    sdp.push(scalar_block(0.0, &[(gamma, 1.0)]));
    sdp.push(scalar_block(chi_cap, &[(chi, -1.0)]));

    let y0 = lay.pack(&s0.p, s0.chi, 0.5 * eig_min(&s0.p));
    if !sdp.is_strictly_feasible(&y0) {
        return None;
    }
    let before = sdp.objective.dot(&y0);
    let out = sdp.maximize(y0, &opts.barrier, None, None).ok()?;
    if out.objective < before {
        return None;
    }
    let p = lay.p(&out.y);
    let chi_v = out.y[chi];
    let gamma_v = out.y[gamma].min(eig_min(&p)) * (1.0 - 1e-9);
    let margin = -worst_block_eig(vertices, &p, chi_v);
    let sol = LmiSolution { p, chi: chi_v, gamma: gamma_v, margin };
    verify_all(vertices, &sol, opts.verify_tol).then_some(sol)
}

/// How the disturbance weight `χ` enters the ultimate-bound problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChiPolicy {
    /// Dedicated variable with `0 < χ ≤ max`.
    Free { max: f64 },
    /// `χ` pinned to a constant (the `−τI` block form uses `τ`).
    Fixed(f64),
}

impl ChiPolicy {
    fn bound(self) -> f64 {
        match self {
            ChiPolicy::Free { max } | ChiPolicy::Fixed(max) => max,
        }
    }
}

fn trace_cap_for(n: usize, gamma: f64) -> f64 {
    1e8 * n as f64 * (1.0 + gamma)
}

/// Decides whether the LMI admits a solution with `P ⪰ γI` for the given `γ`.
pub fn feasible_at_gamma(
    vertices: &[VertexLmi],
    gamma: f64,
    chi_policy: ChiPolicy,
    opts: &SolveOptions,
) -> Result<LmiSolution> {
    let (n, l) = check_vertices(vertices)?;
    if !(gamma > 0.0) || !(chi_policy.bound() > 0.0) {
        return Err(Error::InvalidParameter("gamma and chi bound must be positive".into()));
    }
    let free = matches!(chi_policy, ChiPolicy::Free { .. });
    let lay = Layout::new(n, free);
    let t = lay.last;
    let mut sdp = Sdp::new(lay.nvars());
    sdp.objective[t] = 1.0;
    let fixed_chi = chi_policy.bound();
    for v in vertices {
        sdp.push(lay.negated_vertex(v, fixed_chi, DMatrix::zeros(n + l, n + l)).term(t, -DMatrix::identity(n + l, n + l)));
    }
    sdp.push(
        lay.p_block(1.0, DMatrix::identity(n, n) * -gamma).term(t, -DMatrix::identity(n, n)),
    );
    if let Some(c) = lay.chi {
        sdp.push(scalar_block(0.0, &[(c, 1.0), (t, -1.0)]));
        sdp.push(scalar_block(fixed_chi, &[(c, -1.0)]));
    }
    let cap = trace_cap_for(n, gamma);
    sdp.push(lay.trace_cap(cap));

    let p0 = DMatrix::<f64>::identity(n, n) * (gamma + 1.0);
    let chi0 = if free { 0.5 * fixed_chi } else { fixed_chi };
    let t0 = (-worst_block_eig(vertices, &p0, chi0)).min(1.0).min(chi0) - 1.0;
    let y0 = lay.pack(&p0, chi0, t0);

    let out = sdp.maximize(y0, &opts.barrier, None, Some(0.0)).map_err(Error::NumericalFailure)?;
    let p = lay.p(&out.y);
    let chi_v = lay.chi.map_or(fixed_chi, |c| out.y[c]);
    let norm = spectral_norm_sym(&p);
    if out.exit == Exit::BelowCutoff || out.objective <= opts.accept_margin() * norm {
        return Err(Error::Infeasible(format!("gamma = {gamma:.6e}: best margin {:.3e}", out.objective)));
    }
    let margin = -worst_block_eig(vertices, &p, chi_v);
    let sol = LmiSolution { p, chi: chi_v, gamma, margin };
    if !verify_all(vertices, &sol, opts.verify_tol) {
        return Err(Error::NumericalFailure(format!("gamma = {gamma:.6e}: answer failed verification")));
    }
    Ok(sol)
}

/// Maximizes `γ` directly in one barrier solve (no bisection).
pub fn maximize_gamma(vertices: &[VertexLmi], chi_policy: ChiPolicy, opts: &SolveOptions) -> Result<LmiSolution> {
    let (n, l) = check_vertices(vertices)?;
    // strictly feasible start with a comfortable margin
    let start = feasible_at_gamma(vertices, 1e-9, chi_policy, opts)?;
    let eta = (opts.accept_margin() * start.p_norm()).min(0.5 * start.margin);

    let free = matches!(chi_policy, ChiPolicy::Free { .. });
    let lay = Layout::new(n, free);
    let gamma = lay.last;
    let fixed_chi = chi_policy.bound();
    let mut sdp = Sdp::new(lay.nvars());
    sdp.objective[gamma] = 1.0;
    for v in vertices {
        sdp.push(lay.negated_vertex(v, fixed_chi, DMatrix::identity(n + l, n + l) * -eta));
    }
    sdp.push(lay.p_block(1.0, DMatrix::zeros(n, n)).term(gamma, -DMatrix::identity(n, n)));
    sdp.push(scalar_block(0.0, &[(gamma, 1.0)]));
    if let Some(c) = lay.chi {
        sdp.push(scalar_block(0.0, &[(c, 1.0)]));
        sdp.push(scalar_block(fixed_chi, &[(c, -1.0)]));
    }
    sdp.push(lay.trace_cap(trace_cap_for(n, 1.0).max(2.0 * start.p.trace())));

    let chi0 = if free { start.chi.min(0.999 * fixed_chi) } else { fixed_chi };
    let y0 = lay.pack(&start.p, chi0, 0.5 * eig_min(&start.p));
    if !sdp.is_strictly_feasible(&y0) {
        return Err(Error::NumericalFailure("could not build an interior start for gamma maximization".into()));
    }
    let out = sdp.maximize(y0, &opts.barrier, None, None).map_err(Error::NumericalFailure)?;
    let p = lay.p(&out.y);
    let chi_v = lay.chi.map_or(fixed_chi, |c| out.y[c]);
    let gamma_v = out.y[gamma].min(eig_min(&p)) * (1.0 - 1e-9);
    let margin = -worst_block_eig(vertices, &p, chi_v);
    let sol = LmiSolution { p, chi: chi_v, gamma: gamma_v, margin };
    if !verify_all(vertices, &sol, opts.verify_tol) {
        return Err(Error::NumericalFailure("maximized gamma failed verification".into()));
    }
    Ok(sol)
}
