//! End-to-end certificates: multistep slope-interval search, stability region,
//! admissible initial ball, settling-time bound and ultimate bound.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ext::ExtReal;
use crate::lmi::{
    self, assemble, feasible_at_gamma, vertex_set_capped, ChiPolicy, LmiSolution, SlopeAssignment, SolveOptions,
    VertexLmi, VertexMode, DEFAULT_VERIFY_TOL,
};
use crate::model::{Gain, Plant};
use crate::sector::{sector_region, sector_region_scalar, OddFunction, SectorRegion, SlopeProfile};

/// Decay rate `τᵢ` per interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauSchedule {
    Uniform(f64),
    /// `τᵢ` for interval `i`; the last entry repeats past the end.
    PerInterval(Vec<f64>),
}

impl TauSchedule {
    pub fn tau(&self, interval: usize) -> f64 {
        match self {
            TauSchedule::Uniform(t) => *t,
            TauSchedule::PerInterval(ts) => ts[interval.min(ts.len() - 1)],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            TauSchedule::Uniform(t) => *t > 0.0 && t.is_finite(),
            TauSchedule::PerInterval(ts) => !ts.is_empty() && ts.iter().all(|t| *t > 0.0 && t.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("tau values must be positive and finite".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    /// Lower end `ρ̲` of the first interval. When absent, 0 is used if the
    /// open loop is certifiable, otherwise the first feasible point of a
    /// doubling scan.
    pub rho_start: Option<f64>,
    /// First step `Δρ`; defaults to `0.1·max(anchor, 1)`.
    pub initial_step: Option<f64>,
    pub growth: f64,
    /// Relative resolution of the endpoint bisection after a failed step.
    pub refine_rtol: f64,
    pub max_intervals: usize,
    /// Upper bound on `ρ̄` when the origin slope is infinite.
    pub rho_cap: f64,
    pub scan_start: f64,
    pub vertex_cap: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            rho_start: None,
            initial_step: None,
            growth: 2.0,
            refine_rtol: 1e-3,
            max_intervals: 64,
            rho_cap: 100.0,
            scan_start: 1e-3,
            vertex_cap: lmi::DEFAULT_VERTEX_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyOptions {
    pub search: SearchOptions,
    /// Finite stand-in for `x̄ = ∞` in the initial-set formula.
    pub region_cap: f64,
    /// Use `f̄²` instead of `f̄` in the disturbance terms.
    pub strict_energy: bool,
    /// Pin `χ = τ` in the ultimate-bound problem instead of `0 < χ ≤ τ`.
    pub literal_chi_eq_tau: bool,
    pub verify_tol: f64,
    /// Re-optimize each interval for the initial-set objective once `x̄` is known.
    pub refine: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            search: SearchOptions::default(),
            region_cap: 1e3,
            strict_energy: false,
            literal_chi_eq_tau: false,
            verify_tol: DEFAULT_VERIFY_TOL,
            refine: true,
        }
    }
}

impl CertifyOptions {
    fn solve_options(&self) -> SolveOptions {
        SolveOptions { verify_tol: self.verify_tol, ..SolveOptions::default() }
    }

    fn chi_policy(&self, tau: f64) -> ChiPolicy {
        if self.literal_chi_eq_tau {
            ChiPolicy::Fixed(tau)
        } else {
            ChiPolicy::Free { max: tau }
        }
    }

    /// Disturbance term entering the initial-set and settling-time formulas.
    pub fn energy_term(&self, f_bar: f64) -> f64 {
        if self.strict_energy {
            f_bar * f_bar
        } else {
            f_bar
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalCertificate {
    pub rho_prev: f64,
    pub rho_cur: f64,
    pub tau: f64,
    pub solution: LmiSolution,
    /// Vertex LMIs enforced by the accepted solve.
    pub vertex_count: usize,
}

/// Solver instrumentation for one search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    /// Solves over a full interval polytope.
    pub interval_solves: usize,
    /// Vertex LMIs summed over those solves.
    pub vertex_solves: usize,
    /// Single-slope probes used to locate the first interval.
    pub point_solves: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub tau_min: f64,
    pub gamma_min: f64,
    pub chi_max: f64,
    pub p_norm_max: f64,
}

impl Aggregates {
    pub fn from_intervals(intervals: &[IntervalCertificate]) -> Self {
        let mut agg = Aggregates {
            tau_min: f64::INFINITY,
            gamma_min: f64::INFINITY,
            chi_max: f64::NEG_INFINITY,
            p_norm_max: f64::NEG_INFINITY,
        };
        for iv in intervals {
            agg.tau_min = agg.tau_min.min(iv.tau);
            agg.gamma_min = agg.gamma_min.min(iv.solution.gamma);
            agg.chi_max = agg.chi_max.max(iv.solution.chi);
            agg.p_norm_max = agg.p_norm_max.max(iv.solution.p_norm());
        }
        agg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CertifyWarning {
    /// `x̄ = ∞` replaced by the configured cap in the initial-set formula.
    RegionCapped { cap: f64 },
    /// `τ̲γ̲x̄² − 2χ̄f̄ ≤ 0`: the initial ball is empty.
    DegenerateInitialSet { radicand: f64 },
    /// Initial radius reduced so that the ball fits inside `|xᵢ| ≤ x̄`.
    InitialRadiusClamped { computed: f64, clamped: f64 },
    /// `x̲ > 0`: the region excludes a neighbourhood of the origin.
    AnnularRegion { x_lo: f64 },
    /// The initial ball uses only the intervals from `rho_lo` upward.
    InitialSetUsesSubrange { rho_lo: f64, x_bar: f64 },
    /// Search stopped at the configured cap rather than at infeasibility.
    SearchCapReached { rho_cap: f64 },
    /// Scalar-law region evaluated along `x₁ = … = xₙ = s`, `|s| ∈ [x̲, x̄]`.
    ScalarRegionAlongDiagonal,
    UltimateBoundUnavailable { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub mode: VertexMode,
    pub n: usize,
    pub f_bar: f64,
    pub strict_energy: bool,
    pub intervals: Vec<IntervalCertificate>,
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub region: SectorRegion,
    /// First interval used for the initial ball; the ball lives in the
    /// region of `[intervals[ball_from].rho_prev, rho_hi]`.
    pub ball_from: usize,
    /// Finite `x̄` of that region (the bound itself, or the cap when infinite).
    pub x_bar_used: f64,
    pub x0_radius: f64,
    /// `τ̲, γ̲, χ̄, ‖P̄‖` over the intervals from `ball_from` on, with every
    /// solution scaled to `γ = 1`.
    pub aggregates: Aggregates,
    pub gamma_star: Option<f64>,
    pub delta: Option<f64>,
    pub stats: SearchStats,
    pub warnings: Vec<CertifyWarning>,
}

impl Certificate {
    pub fn x_lo(&self) -> f64 {
        self.region.x_lo
    }

    pub fn x_hi(&self) -> ExtReal {
        self.region.x_hi
    }

    /// Total certified slope length `Σ (ρᵢ − ρᵢ₋₁)`.
    pub fn certified_length(&self) -> f64 {
        self.intervals.iter().map(|iv| iv.rho_cur - iv.rho_prev).sum()
    }

    /// Index of an interval whose slope box contains every entry of `slopes`.
    pub fn interval_for_slopes(&self, slopes: &[f64]) -> Option<usize> {
        self.intervals.iter().position(|iv| {
            slopes.iter().all(|&r| r >= iv.rho_prev * (1.0 - 1e-12) && r <= iv.rho_cur * (1.0 + 1e-12))
        })
    }

    fn energy(&self) -> f64 {
        if self.strict_energy {
            self.f_bar * self.f_bar
        } else {
            self.f_bar
        }
    }

    /// `τ̲γ̲x̄² − 2χ̄f̄`.
    pub fn radicand(&self) -> f64 {
        let a = &self.aggregates;
        a.tau_min * a.gamma_min * self.x_bar_used * self.x_bar_used - 2.0 * a.chi_max * self.energy()
    }
}

/// Origin-slope cap on `ρ̄` over all functions in the law.
fn origin_cap(funcs: &[OddFunction], opts: &SearchOptions) -> (f64, bool) {
    let mut cap = opts.rho_cap;
    let mut from_function = false;
    for f in funcs {
        if let ExtReal::Finite(r) = f.slope_at_origin() {
            if r < cap {
                cap = r;
                from_function = true;
            }
        }
    }
    (cap, from_function)
}

struct IntervalSolver<'a> {
    plant: &'a Plant,
    gain: &'a Gain,
    taus: &'a TauSchedule,
    mode: VertexMode,
    vertex_cap: usize,
    solve: SolveOptions,
    stats: SearchStats,
}

impl IntervalSolver<'_> {
    fn vertices(&self, lo: f64, hi: f64, index: usize) -> Result<Vec<VertexLmi>> {
        let tau = self.taus.tau(index);
        let psis = if lo == hi {
            vec![SlopeAssignment::Scalar(lo)]
        } else {
            vertex_set_capped(lo, hi, self.plant.n(), self.mode, self.vertex_cap)?
        };
        psis.iter().map(|psi| assemble(self.plant, self.gain, psi, tau)).collect()
    }

    fn solve(&mut self, lo: f64, hi: f64, index: usize) -> Result<(LmiSolution, usize)> {
        let vertices = self.vertices(lo, hi, index)?;
        if lo == hi {
            self.stats.point_solves += 1;
        } else {
            self.stats.interval_solves += 1;
            self.stats.vertex_solves += vertices.len();
        }
        let sol = lmi::solve_feasibility(&vertices, &self.solve)?;
        Ok((sol, vertices.len()))
    }

    fn point_feasible(&mut self, rho: f64) -> Result<bool> {
        match self.solve(rho, rho, 0) {
            Ok(_) => Ok(true),
            Err(Error::Infeasible(_)) | Err(Error::NumericalFailure(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Largest `e ∈ (lo, hi]` with `[lo, e]` feasible, to relative `rtol`.
    fn extend(&mut self, lo: f64, hi: f64, index: usize, rtol: f64) -> Result<Option<(f64, LmiSolution, usize)>> {
        match self.solve(lo, hi, index) {
            Ok((sol, nv)) => return Ok(Some((hi, sol, nv))),
            Err(Error::Infeasible(_)) | Err(Error::NumericalFailure(_)) => {}
            Err(e) => return Err(e),
        }
        let (mut good, mut bad) = (lo, hi);
        let mut best = None;
        while bad - good > rtol * bad {
            let mid = 0.5 * (good + bad);
            match self.solve(lo, mid, index) {
                Ok((sol, nv)) => {
                    good = mid;
                    best = Some((mid, sol, nv));
                }
                Err(Error::Infeasible(_)) | Err(Error::NumericalFailure(_)) => bad = mid,
                Err(e) => return Err(e),
            }
        }
        Ok(best)
    }

    /// Lower end for the first interval.
    fn anchors(&mut self, opts: &SearchOptions, cap: f64) -> Result<Vec<f64>> {
        if let Some(r) = opts.rho_start {
            if !(r >= 0.0) || r >= cap {
                return Err(Error::InvalidParameter(format!("rho_start {r} must lie in [0, {cap})")));
            }
            return Ok(vec![r]);
        }
        if self.point_feasible(0.0)? {
            return Ok(vec![0.0]);
        }
        let mut prev = 0.0;
        let mut r = opts.scan_start;
        while r < cap && !self.point_feasible(r)? {
            prev = r;
            r *= 2.0;
        }
        if r >= cap {
            if !self.point_feasible(cap)? {
                return Ok(Vec::new());
            }
            r = cap;
        }
        // tighten the lower feasibility boundary between the last failing scan point and r
        let (mut bad, mut good) = (prev, r);
        while good - bad > opts.refine_rtol * good {
            let mid = 0.5 * (bad + good);
            if self.point_feasible(mid)? {
                good = mid;
            } else {
                bad = mid;
            }
        }
        // points just above the boundary have little margin, so a few offsets are tried
        let mut out: Vec<f64> = [1.01, 1.1, 1.5, 2.0, 4.0].iter().map(|f| good * f).filter(|a| *a < cap).collect();
        if out.is_empty() {
            out.push(good);
        }
        Ok(out)
    }
}

fn check_inputs(plant: &Plant, gain: &Gain, taus: &TauSchedule) -> Result<()> {
    gain.check_dim(plant.n())?;
    taus.validate()
}

fn min_step(cur: f64, opts: &SearchOptions) -> f64 {
    opts.refine_rtol * cur.max(1e-3)
}

/// Chains adjacent slope intervals `(ρ₀, ρ₁), (ρ₁, ρ₂), …`, each with its own
/// verified LMI solution, until no further step is feasible or the cap on
/// `ρ̄` is reached.
pub fn multistep_search(
    plant: &Plant,
    gain: &Gain,
    funcs: &[OddFunction],
    taus: &TauSchedule,
    mode: VertexMode,
    opts: &SearchOptions,
    verify_tol: f64,
) -> Result<(Vec<IntervalCertificate>, SearchStats)> {
    check_inputs(plant, gain, taus)?;
    let (cap, _) = origin_cap(funcs, opts);
    let mut solver = IntervalSolver {
        plant,
        gain,
        taus,
        mode,
        vertex_cap: opts.vertex_cap,
        solve: SolveOptions { verify_tol, ..SolveOptions::default() },
        stats: SearchStats::default(),
    };

    let mut intervals: Vec<IntervalCertificate> = Vec::new();
    for anchor in solver.anchors(opts, cap)? {
        let mut cur = anchor;
        let mut step = opts.initial_step.unwrap_or(0.1 * anchor.max(1.0));
        while intervals.len() < opts.max_intervals && cur < cap {
            let index = intervals.len();
            let next = (cur + step).min(cap);
            let Some((end, sol, nv)) = solver.extend(cur, next, index, opts.refine_rtol)? else { break };
            if end - cur < min_step(cur, opts) && end < cap {
                break;
            }
            intervals.push(IntervalCertificate { rho_prev: cur, rho_cur: end, tau: taus.tau(index), solution: sol, vertex_count: nv });
            if end == next {
                step *= opts.growth;
            } else {
                step = end - cur;
            }
            cur = end;
        }
        if !intervals.is_empty() {
            break;
        }
    }
    if intervals.is_empty() {
        return Err(Error::NoFeasibleInterval);
    }
    Ok((intervals, solver.stats))
}

/// One interval `(ρ̲, ρ̄)` with a single common solution, `ρ̄` as large as
/// possible. Used as the baseline the multistep search is compared against.
pub fn single_interval_search(
    plant: &Plant,
    gain: &Gain,
    funcs: &[OddFunction],
    taus: &TauSchedule,
    mode: VertexMode,
    opts: &SearchOptions,
    verify_tol: f64,
) -> Result<IntervalCertificate> {
    check_inputs(plant, gain, taus)?;
    let (cap, _) = origin_cap(funcs, opts);
    let mut solver = IntervalSolver {
        plant,
        gain,
        taus,
        mode,
        vertex_cap: opts.vertex_cap,
        solve: SolveOptions { verify_tol, ..SolveOptions::default() },
        stats: SearchStats::default(),
    };
    for anchor in solver.anchors(opts, cap)? {
        if let Some((end, sol, nv)) = solver.extend(anchor, cap, 0, opts.refine_rtol)? {
            if end - anchor >= min_step(anchor, opts) || end == cap {
                return Ok(IntervalCertificate { rho_prev: anchor, rho_cur: end, tau: taus.tau(0), solution: sol, vertex_count: nv });
            }
        }
    }
    Err(Error::NoFeasibleInterval)
}

/// Certificate for `u = Σ kᵢ φᵢ(xᵢ)`; pass one function to use it on every
/// component.
pub fn certify_componentwise(
    plant: &Plant,
    gain: &Gain,
    funcs: &[OddFunction],
    taus: &TauSchedule,
    opts: &CertifyOptions,
) -> Result<Certificate> {
    let funcs = broadcast(funcs, plant.n())?;
    let (intervals, stats) =
        multistep_search(plant, gain, &funcs, taus, VertexMode::Componentwise, &opts.search, opts.verify_tol)?;
    let shape = RegionShape::Componentwise(&funcs);
    finish(plant, gain, &funcs, taus, opts, VertexMode::Componentwise, intervals, stats, shape)
}

/// Certificate for `u = φ(Kx)`: two vertices per interval, region measured on
/// `φ(κs)/(κs)` with `κ = Σ kᵢ`.
pub fn certify_scalar(
    plant: &Plant,
    gain: &Gain,
    func: &OddFunction,
    taus: &TauSchedule,
    opts: &CertifyOptions,
) -> Result<Certificate> {
    gain.check_dim(plant.n())?;
    if gain.sum() == 0.0 {
        return Err(Error::ZeroGainSum);
    }
    let funcs = [func.clone()];
    let (intervals, stats) =
        multistep_search(plant, gain, &funcs, taus, VertexMode::Scalar, &opts.search, opts.verify_tol)?;
    let shape = RegionShape::Scalar(func, gain);
    finish(plant, gain, &funcs, taus, opts, VertexMode::Scalar, intervals, stats, shape)
}

fn broadcast(funcs: &[OddFunction], n: usize) -> Result<Vec<OddFunction>> {
    match funcs.len() {
        1 => Ok(vec![funcs[0].clone(); n]),
        k if k == n => Ok(funcs.to_vec()),
        k => Err(Error::DimensionMismatch(format!("expected 1 or {n} functions, got {k}"))),
    }
}

fn span(intervals: &[IntervalCertificate]) -> (f64, f64) {
    (intervals[0].rho_prev, intervals[intervals.len() - 1].rho_cur)
}

enum RegionShape<'a> {
    Componentwise(&'a [OddFunction]),
    Scalar(&'a OddFunction, &'a Gain),
}

impl RegionShape<'_> {
    fn region(&self, rho_lo: f64, rho_hi: f64) -> Result<SectorRegion> {
        match self {
            RegionShape::Scalar(f, g) => sector_region_scalar(&SlopeProfile::new((*f).clone()), g, rho_lo, rho_hi),
            RegionShape::Componentwise(funcs) => {
                let mut region = SectorRegion { x_lo: 0.0, x_hi: ExtReal::Infinite };
                for f in funcs.iter() {
                    let r = sector_region(&SlopeProfile::new(f.clone()), rho_lo, rho_hi)?;
                    region.x_lo = region.x_lo.max(r.x_lo);
                    if r.x_hi.to_f64() < region.x_hi.to_f64() {
                        region.x_hi = r.x_hi;
                    }
                }
                if region.x_hi.to_f64() < region.x_lo {
                    return Err(Error::EmptyRegion { rho_lo, rho_hi });
                }
                Ok(region)
            }
        }
    }
}

/// Rescales every interval solution to `γ = 1`. Each solution is only defined
/// up to a positive factor, and this choice maximizes the initial-ball radius
/// computed from the cross-interval aggregates.
fn normalize(intervals: &mut [IntervalCertificate]) {
    for iv in intervals {
        iv.solution = iv.solution.scaled(1.0 / iv.solution.gamma);
    }
}

/// `(radicand, radius)` of the initial ball for the aggregates `agg`.
fn ball(n: usize, agg: &Aggregates, x_bar: f64, energy: f64) -> (f64, f64) {
    let radicand = agg.tau_min * agg.gamma_min * x_bar * x_bar - 2.0 * agg.chi_max * energy;
    let radius = if radicand > 0.0 {
        (radicand / ((n * n) as f64 * agg.tau_min * agg.p_norm_max)).sqrt()
    } else {
        0.0
    };
    (radicand, radius)
}

fn finite_bar(region: &SectorRegion, cap: f64) -> (f64, bool) {
    match region.x_hi {
        ExtReal::Finite(v) => (v, false),
        ExtReal::Infinite => (cap, true),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    plant: &Plant,
    gain: &Gain,
    funcs: &[OddFunction],
    taus: &TauSchedule,
    opts: &CertifyOptions,
    mode: VertexMode,
    mut intervals: Vec<IntervalCertificate>,
    mut stats: SearchStats,
    shape: RegionShape<'_>,
) -> Result<Certificate> {
    let n = plant.n();
    let energy = opts.energy_term(plant.f_bar);
    let mut warnings = Vec::new();
    let (rho_lo, rho_hi) = span(&intervals);
    let region = shape.region(rho_lo, rho_hi)?;
    let (cap, cap_from_function) = origin_cap(funcs, &opts.search);
    if rho_hi >= cap && !cap_from_function {
        warnings.push(CertifyWarning::SearchCapReached { rho_cap: cap });
    }
    if mode == VertexMode::Scalar {
        warnings.push(CertifyWarning::ScalarRegionAlongDiagonal);
    }
    if region.x_lo > 0.0 {
        warnings.push(CertifyWarning::AnnularRegion { x_lo: region.x_lo });
    }

    let mut refine = |intervals: &mut [IntervalCertificate], from: usize, x_bar: f64| -> Result<()> {
        if !opts.refine {
            return Ok(());
        }
        let solve = opts.solve_options();
        for (i, iv) in intervals.iter_mut().enumerate().skip(from) {
            let weight = 2.0 * energy / (iv.tau * x_bar * x_bar);
            let psis = vertex_set_capped(iv.rho_prev, iv.rho_cur, n, mode, opts.search.vertex_cap)?;
            let vertices: Vec<VertexLmi> =
                psis.iter().map(|psi| assemble(plant, gain, psi, taus.tau(i))).collect::<Result<_>>()?;
            stats.interval_solves += 1;
            stats.vertex_solves += vertices.len();
            let refined = lmi::solve_feasibility(&vertices, &SolveOptions { refine_chi_weight: Some(weight), ..solve.clone() });
            if let Ok(sol) = refined {
                iv.solution = sol.scaled(1.0 / sol.gamma);
            }
        }
        Ok(())
    };

    // Intervals next to the feasibility boundary carry large χ/γ, so the ball
    // is computed from the chained suffix that gives the largest radius.
    let (x_full, _) = finite_bar(&region, opts.region_cap);
    refine(&mut intervals, 0, x_full)?;
    normalize(&mut intervals);
    let radius_from = |intervals: &[IntervalCertificate], k: usize| -> Result<(f64, f64, f64, bool)> {
        let sub = shape.region(intervals[k].rho_prev, rho_hi)?;
        let (x_bar, capped) = finite_bar(&sub, opts.region_cap);
        let (rad, r) = ball(n, &Aggregates::from_intervals(&intervals[k..]), x_bar, energy);
        Ok((r, rad, x_bar, capped))
    };
    let mut best = (0usize, radius_from(&intervals, 0)?);
    for k in 1..intervals.len() {
        let cand = radius_from(&intervals, k)?;
        if cand.0 > best.1 .0 {
            best = (k, cand);
        }
    }
    let (ball_from, (_, _, x_bar, _)) = best;
    if ball_from > 0 {
        let before = intervals.clone();
        refine(&mut intervals, ball_from, x_bar)?;
        if radius_from(&intervals, ball_from)?.0 < best.1 .0 {
            intervals = before;
        }
    }
    let (computed, radicand, x_bar_used, capped) = radius_from(&intervals, ball_from)?;
    if capped {
        warnings.push(CertifyWarning::RegionCapped { cap: opts.region_cap });
    }
    if ball_from > 0 {
        warnings.push(CertifyWarning::InitialSetUsesSubrange { rho_lo: intervals[ball_from].rho_prev, x_bar: x_bar_used });
    }
    let mut x0_radius = computed;
    if radicand <= 0.0 {
        warnings.push(CertifyWarning::DegenerateInitialSet { radicand });
    } else if computed > x_bar_used {
        x0_radius = x_bar_used;
        warnings.push(CertifyWarning::InitialRadiusClamped { computed, clamped: x_bar_used });
    }

    let tau_all = Aggregates::from_intervals(&intervals).tau_min;
    let aggregates = Aggregates::from_intervals(&intervals[ball_from..]);
    let mut cert = Certificate {
        mode,
        n,
        f_bar: plant.f_bar,
        strict_energy: opts.strict_energy,
        intervals,
        rho_lo,
        rho_hi,
        region,
        ball_from,
        x_bar_used,
        x0_radius,
        aggregates,
        gamma_star: None,
        delta: None,
        stats,
        warnings,
    };

    match ultimate_bound(plant, gain, &Theta::Scalar(rho_hi), tau_all, opts) {
        Ok(ub) => {
            cert.gamma_star = Some(ub.gamma_star);
            cert.delta = Some(ub.delta);
        }
        Err(e) => cert.warnings.push(CertifyWarning::UltimateBoundUnavailable { reason: e.to_string() }),
    }
    Ok(cert)
}

/// Upper bound on the time to enter `|x| < ε` from `|x(0)| = x0_norm`.
///
/// Infinite when `τ̲γ̲ε² ≤ χ̄f̄`; clamped at 0 when the start is already
/// inside the ball's level set.
pub fn settling_time(cert: &Certificate, x0_norm: f64, eps: f64, f_bar: f64) -> ExtReal {
    let a = &cert.aggregates;
    let energy = if cert.strict_energy { f_bar * f_bar } else { f_bar };
    let numerator = a.tau_min * x0_norm * x0_norm * a.p_norm_max + a.chi_max * energy;
    let denominator = a.tau_min * a.gamma_min * eps * eps - a.chi_max * energy;
    if !(denominator > 0.0) {
        return ExtReal::Infinite;
    }
    if numerator <= 0.0 {
        return ExtReal::Finite(0.0);
    }
    ExtReal::Finite(((numerator / denominator).ln() / a.tau_min).max(0.0))
}

/// Steady-state slope matrix in the ultimate-bound problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theta {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Matrix(DMatrix<f64>),
}

impl Theta {
    fn closed_loop(&self, plant: &Plant, gain: &Gain) -> Result<DMatrix<f64>> {
        let n = plant.n();
        gain.check_dim(n)?;
        let theta = match self {
            Theta::Scalar(r) => DMatrix::identity(n, n) * *r,
            Theta::Diagonal(d) if d.len() == n => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)),
            Theta::Matrix(m) if m.nrows() == n && m.ncols() == n => m.clone(),
            _ => return Err(Error::DimensionMismatch(format!("theta must be {n}x{n}"))),
        };
        Ok(&plant.a + &plant.b * (&gain.k * theta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UltimateBound {
    pub gamma_star: f64,
    pub delta: f64,
    pub solution: LmiSolution,
    pub bisection_steps: usize,
}

/// Relative bracket width at which the `γ` bisection stops.
pub const GAMMA_BISECTION_RTOL: f64 = 1e-4;
const GAMMA_SEARCH_MAX: f64 = 1e12;

pub(crate) fn theta_vertex(plant: &Plant, gain: &Gain, theta: &Theta, tau: f64) -> Result<VertexLmi> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    Ok(VertexLmi { closed_loop: theta.closed_loop(plant, gain)?, disturbance: plant.d.clone(), tau })
}

/// Largest `γ` (by bisection on verified feasibility) for the steady-state
/// loop `A + BKΘ`, and `δ = √(f̄/γ)`.
pub fn ultimate_bound(plant: &Plant, gain: &Gain, theta: &Theta, tau: f64, opts: &CertifyOptions) -> Result<UltimateBound> {
    let vertex = theta_vertex(plant, gain, theta, tau)?;
    let vs = std::slice::from_ref(&vertex);
    let policy = opts.chi_policy(tau);
    let solve = opts.solve_options();
    let mut steps = 0;
    let probe = |g: f64, steps: &mut usize| -> Result<Option<LmiSolution>> {
        *steps += 1;
        match feasible_at_gamma(vs, g, policy, &solve) {
            Ok(sol) => Ok(Some(sol)),
            Err(Error::Infeasible(_)) | Err(Error::NumericalFailure(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };

    let (mut lo, mut best, mut hi) = match probe(1.0, &mut steps)? {
        Some(sol) => {
            let (mut lo, mut best) = (1.0, sol);
            let mut hi = 2.0;
            loop {
                if hi > GAMMA_SEARCH_MAX {
                    break (lo, best, f64::INFINITY);
                }
                match probe(hi, &mut steps)? {
                    Some(sol) => {
                        lo = hi;
                        best = sol;
                        hi *= 2.0;
                    }
                    None => break (lo, best, hi),
                }
            }
        }
        None => {
            let mut g = 0.5;
            loop {
                if g < 1e-12 {
                    return Err(Error::Infeasible("no gamma > 1e-12 is feasible for this steady-state loop".into()));
                }
                if let Some(sol) = probe(g, &mut steps)? {
                    break (g, sol, 2.0 * g);
                }
                g *= 0.5;
            }
        }
    };
    if hi.is_finite() {
        while hi - lo > GAMMA_BISECTION_RTOL * hi {
            let mid = 0.5 * (lo + hi);
            match probe(mid, &mut steps)? {
                Some(sol) => {
                    lo = mid;
                    best = sol;
                }
                None => hi = mid,
            }
        }
    }
    let energy = opts.energy_term(plant.f_bar);
    Ok(UltimateBound { gamma_star: lo, delta: (energy / lo).sqrt(), solution: best, bisection_steps: steps })
}

/// `γ` maximized in a single barrier solve; independent of the bisection in
/// [`ultimate_bound`] and used to cross-check it.
pub fn ultimate_bound_direct(plant: &Plant, gain: &Gain, theta: &Theta, tau: f64, opts: &CertifyOptions) -> Result<(f64, f64)> {
    let vertex = theta_vertex(plant, gain, theta, tau)?;
    let sol = lmi::maximize_gamma(std::slice::from_ref(&vertex), opts.chi_policy(tau), &opts.solve_options())?;
    Ok((sol.gamma, (opts.energy_term(plant.f_bar) / sol.gamma).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub x_lo: f64,
    pub x_hi: ExtReal,
    pub x0_radius: f64,
    pub intervals: usize,
}

impl From<&Certificate> for RegionSummary {
    fn from(c: &Certificate) -> Self {
        Self {
            rho_lo: c.rho_lo,
            rho_hi: c.rho_hi,
            x_lo: c.region.x_lo,
            x_hi: c.region.x_hi,
            x0_radius: c.x0_radius,
            intervals: c.intervals.len(),
        }
    }
}

/// Linear versus nonlinear ultimate bounds (`Θ = I` against `Θ = ρ̄I`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rho_bar: f64,
    pub gamma_lin: f64,
    pub delta_lin: f64,
    pub gamma_nl: f64,
    pub delta_nl: f64,
    pub nonlinear_not_worse: bool,
    pub componentwise: Option<RegionSummary>,
    pub scalar: Option<RegionSummary>,
    pub notes: Vec<String>,
}

pub fn compare_report(
    plant: &Plant,
    gain: &Gain,
    func: &OddFunction,
    taus: &TauSchedule,
    opts: &CertifyOptions,
) -> Result<Comparison> {
    let mut notes = Vec::new();
    let comp = certify_componentwise(plant, gain, std::slice::from_ref(func), taus, opts);
    let scal = certify_scalar(plant, gain, func, taus, opts);
    let reference = match (&comp, &scal) {
        (Ok(c), _) => c,
        (Err(_), Ok(s)) => s,
        (Err(e), Err(_)) => return Err(e.clone()),
    };
    if let Err(e) = &comp {
        notes.push(format!("componentwise certificate unavailable: {e}"));
    }
    if let Err(e) = &scal {
        notes.push(format!("scalar certificate unavailable: {e}"));
    }
    let rho_bar = reference.rho_hi;
    let tau = reference.aggregates.tau_min;
    let lin = ultimate_bound(plant, gain, &Theta::Scalar(1.0), tau, opts)?;
    let nl = ultimate_bound(plant, gain, &Theta::Scalar(rho_bar), tau, opts)?;
    Ok(Comparison {
        rho_bar,
        gamma_lin: lin.gamma_star,
        delta_lin: lin.delta,
        gamma_nl: nl.gamma_star,
        delta_nl: nl.delta,
        nonlinear_not_worse: nl.delta <= lin.delta * (1.0 + GAMMA_BISECTION_RTOL),
        componentwise: comp.as_ref().ok().map(RegionSummary::from),
        scalar: scal.as_ref().ok().map(RegionSummary::from),
        notes,
    })
}
