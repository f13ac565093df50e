//! Plant, gain and control-law definitions.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sector::OddFunction;

/// Relative singular-value threshold for the controllability rank test.
pub const CONTROLLABILITY_RTOL: f64 = 1e-9;

/// Linear plant `ẋ = Ax + Bu + Df` with `|f(t)| ≤ f_bar` (Euclidean norm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub d: DMatrix<f64>,
    pub f_bar: f64,
}

impl Plant {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, d: DMatrix<f64>, f_bar: f64) -> Self {
        Self { a, b, d, f_bar }
    }

    /// Builds a plant from row-major nested slices.
    pub fn from_rows(a: &[Vec<f64>], b: &[f64], d: &[Vec<f64>], f_bar: f64) -> Result<Self> {
        let a = matrix_from_rows(a, "A")?;
        let d = matrix_from_rows(d, "D")?;
        validate_plant(Self::new(a, DVector::from_column_slice(b), d, f_bar))
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn l(&self) -> usize {
        self.d.ncols()
    }
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!("{name}: ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Row gain `K = [k₁ … kₙ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gain {
    pub k: RowDVector<f64>,
}

impl Gain {
    pub fn new(k: &[f64]) -> Self {
        Self { k: RowDVector::from_row_slice(k) }
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    /// `κ = Σ kᵢ`.
    pub fn sum(&self) -> f64 {
        self.k.iter().sum()
    }

    /// `Kx`, summed left to right.
    pub fn apply(&self, x: &DVector<f64>) -> f64 {
        let mut u = 0.0;
        for (ki, xi) in self.k.iter().zip(x.iter()) {
            u += ki * xi;
        }
        u
    }

    pub(crate) fn check_dim(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "gain has {} entries, plant has n = {n}",
                self.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LawVariant {
    /// `u = Kx`.
    Linear,
    /// `u = Σ kᵢ φᵢ(xᵢ)`; one function per state component.
    Componentwise { functions: Vec<OddFunction> },
    /// `u = φ(Kx)`.
    ScalarWrapped { function: OddFunction },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlLaw {
    pub variant: LawVariant,
    pub gain: Gain,
}

impl ControlLaw {
    pub fn linear(gain: Gain) -> Self {
        Self { variant: LawVariant::Linear, gain }
    }

    /// Componentwise law with the same function on every component.
    pub fn componentwise_uniform(gain: Gain, function: OddFunction) -> Self {
        let functions = vec![function; gain.len()];
        Self { variant: LawVariant::Componentwise { functions }, gain }
    }

    pub fn componentwise(gain: Gain, functions: Vec<OddFunction>) -> Result<Self> {
        if functions.len() != gain.len() {
            return Err(Error::DimensionMismatch(format!(
                "componentwise law needs {} functions, got {}",
                gain.len(),
                functions.len()
            )));
        }
        Ok(Self { variant: LawVariant::Componentwise { functions }, gain })
    }

    pub fn scalar_wrapped(gain: Gain, function: OddFunction) -> Self {
        Self { variant: LawVariant::ScalarWrapped { function }, gain }
    }

    /// Control signal for state `x`.
    pub fn control(&self, x: &DVector<f64>) -> f64 {
        match &self.variant {
            LawVariant::Linear => self.gain.apply(x),
            LawVariant::Componentwise { functions } => {
                let mut u = 0.0;
                for ((ki, xi), phi) in self.gain.k.iter().zip(x.iter()).zip(functions) {
                    u += ki * phi.eval(*xi);
                }
                u
            }
            LawVariant::ScalarWrapped { function } => function.eval(self.gain.apply(x)),
        }
    }
}

/// Checks shapes, `f_bar ≥ 0` and controllability of `(A, B)`.
pub fn validate_plant(plant: Plant) -> Result<Plant> {
    let n = plant.a.nrows();
    if n == 0 {
        return Err(Error::DimensionMismatch("A is empty".into()));
    }
    if plant.a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "A must be square, got {}x{}",
            n,
            plant.a.ncols()
        )));
    }
    if plant.b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "B must have {n} rows, got {}",
            plant.b.len()
        )));
    }
    if plant.d.nrows() != n || plant.d.ncols() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "D must be {n}xl with l >= 1, got {}x{}",
            plant.d.nrows(),
            plant.d.ncols()
        )));
    }
    let finite = plant.a.iter().chain(plant.b.iter()).chain(plant.d.iter()).all(|v| v.is_finite());
    if !finite {
        return Err(Error::InvalidParameter("plant matrices contain non-finite entries".into()));
    }
    if !(plant.f_bar >= 0.0 && plant.f_bar.is_finite()) {
        return Err(Error::InvalidParameter(format!("f_bar must be >= 0, got {}", plant.f_bar)));
    }

    let rank = controllability_rank(&plant.a, &plant.b);
    if rank < n {
        return Err(Error::Uncontrollable { rank, n });
    }
    Ok(plant)
}

/// Numerical rank of `[B, AB, …, Aⁿ⁻¹B]`.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DVector<f64>) -> usize {
    let n = a.nrows();
    let mut ctrb = DMatrix::<f64>::zeros(n, n);
    let mut col = b.clone();
    for j in 0..n {
        ctrb.set_column(j, &col);
        col = a * &col;
    }
    let sv = ctrb.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > CONTROLLABILITY_RTOL * smax).count()
}

/// `A + B·K·Ψ` for a diagonal slope matrix `Ψ = diag(psi)`.
pub fn closed_loop_matrix(plant: &Plant, gain: &Gain, psi: &[f64]) -> Result<DMatrix<f64>> {
    let n = plant.n();
    gain.check_dim(n)?;
    if psi.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "slope assignment has {} entries, plant has n = {n}",
            psi.len()
        )));
    }
    if psi.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidParameter("slope entries must be finite".into()));
    }
    let mut m = plant.a.clone();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] += plant.b[i] * gain.k[j] * psi[j];
        }
    }
    Ok(m)
}
