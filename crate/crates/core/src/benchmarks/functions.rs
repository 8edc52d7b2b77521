//! Closed-form sources and constraints of the built-in problems.
//!
//! Every function takes the continuous block in the problem's own
//! coordinates. Constraints are feasible where they are `<= 0`.

use std::f64::consts::PI;

// Branin on [0, 1]^2 via x1 = 15 u1 - 5, x2 = 15 u2.

fn branin_raw(x1: f64, x2: f64) -> f64 {
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

fn branin_map(u: &[f64]) -> (f64, f64) {
    (15.0 * u[0] - 5.0, 15.0 * u[1])
}

pub fn branin_hf(u: &[f64]) -> f64 {
    let (x1, x2) = branin_map(u);
    branin_raw(x1, x2)
}

pub fn branin_lf(u: &[f64]) -> f64 {
    let (x1, x2) = branin_map(u);
    10.0 * branin_raw(x1 - 2.0, x2 - 2.0).sqrt() + 2.0 * (x1 - 0.5) - 3.0 * (3.0 * x2 - 1.0) - 1.0
}

pub fn branin_hf_g1(u: &[f64]) -> f64 {
    (u[0] - 0.5).powi(2) + (u[1] - 0.6).powi(2) - 0.09
}

pub fn branin_hf_g2(u: &[f64]) -> f64 {
    u[0] + 0.5 * u[1] - 0.95
}

pub fn branin_lf_g1(u: &[f64]) -> f64 {
    (u[0] - 0.45).powi(2) + (u[1] - 0.62).powi(2) - 0.1
}

pub fn branin_lf_g2(u: &[f64]) -> f64 {
    u[0] + 0.6 * u[1] - 1.0
}

// Hartmann-6 on [0, 1]^6.

const HART_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];

const HART_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

fn hartmann(x: &[f64], alpha: [f64; 4]) -> f64 {
    -(0..4)
        .map(|i| {
            let s: f64 = (0..6).map(|j| HART_A[i][j] * (x[j] - HART_P[i][j]).powi(2)).sum();
            alpha[i] * (-s).exp()
        })
        .sum::<f64>()
}

pub fn hartmann_hf(x: &[f64]) -> f64 {
    hartmann(x, [1.0, 1.2, 3.0, 3.2])
}

/// Perturbed mixing weights.
pub fn hartmann_lf(x: &[f64]) -> f64 {
    hartmann(x, [1.1, 0.9, 3.2, 2.5])
}

pub fn hartmann_hf_g1(x: &[f64]) -> f64 {
    x[0] + x[1] + x[3] - 0.5
}

pub fn hartmann_hf_g2(x: &[f64]) -> f64 {
    0.25 - x[2] - x[5]
}

pub fn hartmann_lf_g1(x: &[f64]) -> f64 {
    1.1 * (x[0] + x[1] + x[3]) + 0.05 * x[4] - 0.55
}

pub fn hartmann_lf_g2(x: &[f64]) -> f64 {
    0.3 - x[2] - 0.9 * x[5]
}

// Wing weight; inputs (Sw, Wfw, A, sweep in degrees, q, taper, t/c, Nz,
// Wdg, Wp).

fn wing_core(x: &[f64], sw_exp: f64) -> f64 {
    let sweep = x[3].to_radians();
    let c = sweep.cos();
    0.036
        * x[0].powf(sw_exp)
        * x[1].powf(0.0035)
        * (x[2] / (c * c)).powf(0.6)
        * x[4].powf(0.006)
        * x[5].powf(0.04)
        * (100.0 * x[6] / c).powf(-0.3)
        * (x[7] * x[8]).powf(0.49)
}

pub fn wing_hf(x: &[f64]) -> f64 {
    wing_core(x, 0.758) + x[0] * x[9]
}

/// Paint term with a unit coefficient on the paint weight.
pub fn wing_lf1(x: &[f64]) -> f64 {
    wing_core(x, 0.758) + x[9]
}

/// Area exponent rounded to 0.8.
pub fn wing_lf2(x: &[f64]) -> f64 {
    wing_core(x, 0.8) + x[9]
}

/// Area exponent 0.9 and no paint term.
pub fn wing_lf3(x: &[f64]) -> f64 {
    wing_core(x, 0.9)
}

/// Required maneuver capability: `Nz Wdg >= 6000`.
pub fn wing_hf_g(x: &[f64]) -> f64 {
    1.0 - x[7] * x[8] / 6000.0
}

pub fn wing_lf_g(x: &[f64]) -> f64 {
    1.0 - x[7] * x[8] / 5800.0
}

pub fn wing_sep_lf1_g(x: &[f64]) -> f64 {
    1.0 - x[7] * x[8] / 5900.0 + 0.02 * (x[2] - 8.0) / 4.0
}

pub fn wing_sep_lf2_g(x: &[f64]) -> f64 {
    1.0 - x[7] * x[8] / 6300.0 - 0.05 * (x[5] - 0.75)
}

pub fn wing_sep_lf3_g(x: &[f64]) -> f64 {
    1.05 - x[7] * x[8] / 5500.0 + 0.1 * (x[6] - 0.13)
}

// PolyMix on [-0.5, 0.5]^20.

fn alternating(i: usize) -> f64 {
    if i % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn poly(x: &[f64], shift: f64, cubic: f64, coupling: f64) -> f64 {
    let n = x.len() as f64;
    let mut s = 0.0;
    for (i, v) in x.iter().enumerate() {
        let w = 1.0 + (i + 1) as f64 / n;
        s += w * (v - shift * alternating(i)).powi(2) + cubic * v.powi(3);
    }
    for w in x.windows(2) {
        s += coupling * w[0] * w[1];
    }
    s
}

pub fn polymix_hf(x: &[f64]) -> f64 {
    poly(x, 0.2, 0.5, 0.3)
}

pub fn polymix_lf1(x: &[f64]) -> f64 {
    0.9 * polymix_hf(x) + 0.1 * x.iter().sum::<f64>()
}

/// Cubic term dropped, shifted centers.
pub fn polymix_lf2(x: &[f64]) -> f64 {
    poly(x, 0.15, 0.0, 0.3)
}

pub fn polymix_lf3(x: &[f64]) -> f64 {
    polymix_hf(x) + 0.2 * x.iter().map(|v| (3.0 * v).sin()).sum::<f64>()
}

pub fn polymix_lf4(x: &[f64]) -> f64 {
    1.1 * polymix_hf(x) - 0.5
}

fn poly_constraint(x: &[f64], head: usize, quad: f64, offset: f64) -> f64 {
    x[..head].iter().sum::<f64>() + quad * x.iter().map(|v| v * v).sum::<f64>() + offset
}

pub fn polymix_hf_g(x: &[f64]) -> f64 {
    poly_constraint(x, 10, 0.3, 0.5)
}

pub fn polymix_lf1_g(x: &[f64]) -> f64 {
    poly_constraint(x, 10, 0.25, 0.55)
}

pub fn polymix_lf2_g(x: &[f64]) -> f64 {
    poly_constraint(x, 9, 0.3, 0.45)
}

pub fn polymix_lf3_g(x: &[f64]) -> f64 {
    poly_constraint(x, 11, 0.35, 0.5)
}

pub fn polymix_lf4_g(x: &[f64]) -> f64 {
    poly_constraint(x, 10, 0.3, 0.6)
}
