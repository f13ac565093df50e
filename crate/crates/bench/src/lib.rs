//! Shared fixtures for the benchmarks.

use nalgebra::{DMatrix, DVector};
use oddlaw::{validate_plant, Gain, Plant};

/// Double integrator with a matched scalar disturbance, `f̄ = 0.1`.
pub fn double_integrator() -> (Plant, Gain) {
    let plant = Plant::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        DVector::from_column_slice(&[0.0, 1.0]),
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        0.1,
    );
    (validate_plant(plant).expect("valid plant"), Gain::new(&[-2.0, -3.0]))
}

/// Chain of `n` integrators stabilized by a gain placing every pole at `-1`.
pub fn integrator_chain(n: usize) -> (Plant, Gain) {
    let a = DMatrix::from_fn(n, n, |i, j| if j == i + 1 { 1.0 } else { 0.0 });
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let d = DMatrix::from_fn(n, 1, |i, _| if i == n - 1 { 1.0 } else { 0.0 });
    // (s + 1)^n expanded; u = -Σ c_i x_{i+1}
    let mut coeffs = vec![1.0];
    for _ in 0..n {
        let mut next = vec![0.0; coeffs.len() + 1];
        for (i, c) in coeffs.iter().enumerate() {
            next[i] += c;
            next[i + 1] += c;
        }
        coeffs = next;
    }
    let k: Vec<f64> = (0..n).map(|i| -coeffs[n - i]).collect();
    (validate_plant(Plant::new(a, b, d, 0.1)).expect("valid plant"), Gain::new(&k))
}
