#![allow(clippy::needless_range_loop, dead_code)]

use bqp::problems::SeededRng;
use bqp::{BqpProblem, SymMatrix};

/// Solves a dense system by Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let m = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= m * a[c][k];
            }
            b[r] -= m * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Global minimizer of a strictly convex box QP by trying every lower/free/upper assignment:
/// each assignment fixes the active components and minimizes over the rest; the best feasible
/// candidate is the optimum.
pub fn enumerate_oracle(p: &BqpProblem) -> (Vec<f64>, f64) {
    let n = p.dim();
    let (l, u) = (p.lower(), p.upper());
    let mut best: Option<(Vec<f64>, f64)> = None;
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let mut x = vec![0.0; n];
        let mut free = Vec::new();
        let mut ok = true;
        for j in 0..n {
            match c % 3 {
                0 if l[j].is_finite() => x[j] = l[j],
                1 if u[j].is_finite() => x[j] = u[j],
                2 => free.push(j),
                _ => ok = false,
            }
            c /= 3;
        }
        if !ok {
            continue;
        }
        if !free.is_empty() {
            let a = free.iter().map(|&i| free.iter().map(|&k| p.h().get(i, k)).collect()).collect();
            let rhs = free
                .iter()
                .map(|&i| {
                    -(p.f()[i] + (0..n).filter(|k| !free.contains(k)).map(|k| p.h().get(i, k) * x[k]).sum::<f64>())
                })
                .collect();
            let Some(xf) = dense_solve(a, rhs) else { continue };
            for (&i, v) in free.iter().zip(xf) {
                x[i] = v;
            }
        }
        if (0..n).any(|j| x[j] < l[j] - 1e-12 || x[j] > u[j] + 1e-12) {
            continue;
        }
        let obj = p.objective(&x);
        if best.as_ref().is_none_or(|b| obj < b.1) {
            best = Some((x, obj));
        }
    }
    best.expect("the all-free or an all-bound assignment is feasible")
}

/// `MᵀM + shift·I` with normal `M`.
pub fn random_spd(rng: &mut SeededRng, n: usize, shift: f64) -> SymMatrix {
    let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.normal()).collect()).collect();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] = (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { shift } else { 0.0 };
        }
    }
    for i in 0..n {
        for j in 0..i {
            data[i * n + j] = data[j * n + i];
        }
    }
    SymMatrix::from_dense(n, data).unwrap()
}

/// Strictly convex QP with finite bounds `l ∈ [−2, 0]`, `u = l + [0.5, 2.5]`.
pub fn random_box_qp(seed: u64, n: usize) -> BqpProblem {
    let mut rng = SeededRng::new(seed);
    let h = random_spd(&mut rng, n, 0.1);
    let f = (0..n).map(|_| 3.0 * rng.normal()).collect();
    let l: Vec<f64> = (0..n).map(|_| -2.0 * rng.uniform()).collect();
    let u = l.iter().map(|v| v + 0.5 + 2.0 * rng.uniform()).collect();
    BqpProblem::new(h, f, l, u).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
