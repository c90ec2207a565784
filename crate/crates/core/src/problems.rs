//! Seeded generators for the benchmark families and their manifests.
//!
//! Random draws come from `ChaCha8Rng::seed_from_u64(seed)`. A uniform variate is
//! `(next_u64 >> 11)·2⁻⁵³`; a standard normal is the cosine branch of Box–Muller on two
//! consecutive uniforms, `sqrt(−2 ln(1 − u₁))·cos(2π u₂)`. Sparse matrices draw, entry by entry
//! in column-major order, one uniform for the density test (skipped when `density ≥ 1`) and then
//! a normal for kept entries.

use std::f64::consts::PI;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::apg::BqpProblem;
use crate::error::{BqpError, Result};
use crate::linalg::{dot, SymMatrix};

/// Deterministic uniform and normal streams.
#[derive(Debug, Clone)]
pub struct SeededRng(ChaCha8Rng);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    /// `m × n` matrix stored by columns with normal entries kept at the given density.
    pub fn sparse_normal_columns(&mut self, m: usize, n: usize, density: f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..m).map(|_| if density >= 1.0 || self.uniform() < density { self.normal() } else { 0.0 }).collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Nnls,
    Deblur,
    Ncbqp,
    ObstacleA,
    ObstacleB,
    Torsion,
    Journal,
    /// Two-variable indefinite problem with an unstable interior KKT point.
    Saddle,
}

impl ProblemKind {
    pub fn is_pde(self) -> bool {
        matches!(self, ProblemKind::ObstacleA | ProblemKind::ObstacleB | ProblemKind::Torsion | ProblemKind::Journal)
    }
}

/// Separable Gaussian blur; `sigma = 0` is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub sigma: f64,
    pub radius: usize,
}

/// Everything needed to regenerate a problem, plus a checksum of its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemManifest {
    pub kind: ProblemKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ny: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_shift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eccentricity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_height: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    /// Hex SHA-256 of the problem data, see [`checksum`].
    pub checksum: String,
}

impl ProblemManifest {
    fn new(kind: ProblemKind, n: usize) -> Self {
        ProblemManifest {
            kind,
            n,
            m: None,
            nx: None,
            ny: None,
            seed: None,
            density: None,
            lambda_shift: None,
            beta: None,
            c: None,
            eccentricity: None,
            half_height: None,
            kernel: None,
            noise_sigma: None,
            checksum: String::new(),
        }
    }

    fn sealed(mut self, p: &BqpProblem) -> Self {
        self.checksum = checksum(p);
        self
    }
}

/// SHA-256 over `n` (u64 LE) followed by the little-endian bytes of the lower triangle of `H`
/// (row by row), `f`, `l` and `u`.
pub fn checksum(p: &BqpProblem) -> String {
    let n = p.dim();
    let mut hasher = Sha256::new();
    hasher.update((n as u64).to_le_bytes());
    for i in 0..n {
        for &v in &p.h().row(i)[..=i] {
            hasher.update(v.to_le_bytes());
        }
    }
    for v in p.f().iter().chain(p.lower()).chain(p.upper()) {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn require(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(BqpError::InvalidInput(msg.into()))
    }
}

/// `AᵀA + βI` for `A` given by columns.
fn gram(cols: &[Vec<f64>], beta: f64) -> SymMatrix {
    let n = cols.len();
    let rows: Vec<Vec<f64>> =
        (0..n).into_par_iter().map(|i| (0..=i).map(|j| dot(&cols[i], &cols[j])).collect()).collect();
    let mut h = SymMatrix::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            h.add_sym(i, j, if i == j { v + beta } else { v });
        }
    }
    h
}

fn mat_vec_cols(cols: &[Vec<f64>], x: &[f64], m: usize) -> Vec<f64> {
    let mut y = vec![0.0; m];
    for (col, &xj) in cols.iter().zip(x) {
        if xj != 0.0 {
            for (yi, a) in y.iter_mut().zip(col) {
                *yi += a * xj;
            }
        }
    }
    y
}

/// Random least-squares instance with a nonnegative planted solution.
#[derive(Debug, Clone)]
pub struct NnlsInstance {
    pub problem: BqpProblem,
    pub manifest: ProblemManifest,
    /// `A` by columns.
    pub a_cols: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub x_true: Vec<f64>,
}

impl NnlsInstance {
    /// `‖Ax − b‖₂`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let ax = mat_vec_cols(&self.a_cols, x, self.b.len());
        ax.iter().zip(&self.b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

/// `A` is `m × n` sparse normal, `x̄` is normal clipped at zero, `b = A·x̄`. The problem is
/// `H = AᵀA + βI`, `f = −Aᵀb`, `l = 0`, `u = +∞`.
pub fn gen_random_nnls(m: usize, n: usize, density: f64, seed: u64, beta: f64) -> Result<NnlsInstance> {
    require(m > n && n >= 1, format!("need m > n ≥ 1, got m={m}, n={n}"))?;
    require(density > 0.0 && density <= 1.0, format!("density must be in (0, 1], got {density}"))?;
    require(beta >= 0.0 && beta.is_finite(), format!("beta must be ≥ 0, got {beta}"))?;
    let mut rng = SeededRng::new(seed);
    let a_cols = rng.sparse_normal_columns(m, n, density);
    let x_true: Vec<f64> = (0..n).map(|_| rng.normal().max(0.0)).collect();
    let b = mat_vec_cols(&a_cols, &x_true, m);
    let h = gram(&a_cols, beta);
    let f = a_cols.iter().map(|c| -dot(c, &b)).collect();
    let problem = BqpProblem::new(h, f, vec![0.0; n], vec![f64::INFINITY; n])?;
    let manifest = ProblemManifest {
        m: Some(m),
        seed: Some(seed),
        density: Some(density),
        beta: Some(beta),
        ..ProblemManifest::new(ProblemKind::Nnls, n)
    }
    .sealed(&problem);
    Ok(NnlsInstance { problem, manifest, a_cols, b, x_true })
}

/// `Q = B + Bᵀ + λI` with `B` sparse normal, `r` normal, `l = 0`, `u = 10`.
pub fn gen_random_ncbqp(n: usize, density: f64, lambda_shift: f64, seed: u64) -> Result<(BqpProblem, ProblemManifest)> {
    require(n >= 1, "n must be at least 1")?;
    require(density > 0.0 && density <= 1.0, format!("density must be in (0, 1], got {density}"))?;
    let mut rng = SeededRng::new(seed);
    let b = rng.sparse_normal_columns(n, n, density);
    let r = (0..n).map(|_| rng.normal()).collect();
    let mut q = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let v = b[j][i] + b[i][j] + if i == j { lambda_shift } else { 0.0 };
            q.add_sym(i, j, v);
        }
    }
    let problem = BqpProblem::new(q, r, vec![0.0; n], vec![10.0; n])?;
    let manifest = ProblemManifest {
        seed: Some(seed),
        density: Some(density),
        lambda_shift: Some(lambda_shift),
        ..ProblemManifest::new(ProblemKind::Ncbqp, n)
    }
    .sealed(&problem);
    Ok((problem, manifest))
}

/// Tikhonov-regularized deblurring of a synthetic image.
#[derive(Debug, Clone)]
pub struct DeblurInstance {
    pub problem: BqpProblem,
    pub manifest: ProblemManifest,
    /// One-dimensional blur `A₁`, row-major `N × N`; the image blur is `A₁ ⊗ A₁`.
    pub a1: Vec<f64>,
    pub x_true: Vec<f64>,
    /// Observed image `A·x_true + noise`.
    pub y: Vec<f64>,
}

impl DeblurInstance {
    pub fn side(&self) -> usize {
        (self.a1.len() as f64).sqrt().round() as usize
    }

    /// Applies `A₁ ⊗ A₁` to an image stored row by row.
    pub fn blur(&self, x: &[f64]) -> Vec<f64> {
        kron_apply(&self.a1, self.side(), x, false)
    }
}

/// `(A ⊗ A)·x` or, with `transpose`, `(Aᵀ ⊗ Aᵀ)·x`, for an `N × N` image `x` stored row by row.
fn kron_apply(a: &[f64], n: usize, x: &[f64], transpose: bool) -> Vec<f64> {
    let at = |i: usize, k: usize| if transpose { a[k * n + i] } else { a[i * n + k] };
    // rows: t = X·Aᵀ, then A·t
    let mut t = vec![0.0; n * n];
    for p in 0..n {
        for q in 0..n {
            t[p * n + q] = (0..n).map(|k| at(q, k) * x[p * n + k]).sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for p in 0..n {
        for q in 0..n {
            out[p * n + q] = (0..n).map(|k| at(p, k) * t[k * n + q]).sum();
        }
    }
    out
}

/// One-dimensional Gaussian blur with reflexive boundary (`x₋₁ = x₀`, `x_N = x_{N−1}`).
pub fn blur_matrix_1d(n: usize, kernel: KernelSpec) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    if kernel.sigma <= 0.0 {
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        return a;
    }
    let r = kernel.radius as isize;
    let weights: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * kernel.sigma * kernel.sigma)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let reflect = |k: isize| -> usize {
        let n = n as isize;
        let mut k = k;
        loop {
            if k < 0 {
                k = -k - 1;
            } else if k >= n {
                k = 2 * n - k - 1;
            } else {
                return k as usize;
            }
        }
    };
    for i in 0..n {
        for (w, d) in weights.iter().zip(-r..=r) {
            a[i * n + reflect(i as isize + d)] += w / total;
        }
    }
    a
}

/// Checkerboard of 0/1 blocks with side `max(N/8, 1)`.
pub fn checkerboard(n: usize) -> Vec<f64> {
    let block = (n / 8).max(1);
    (0..n * n).map(|k| if ((k / n) / block + (k % n) / block).is_multiple_of(2) { 1.0 } else { 0.0 }).collect()
}

/// Deblurring an `N × N` checkerboard: `H = AᵀA + βI`, `f = −Aᵀy`, `l = 0`, `u = +∞`, with
/// `A = A₁ ⊗ A₁` and `y = A·x + noise_sigma·ξ`.
pub fn gen_deblur(side: usize, kernel: KernelSpec, noise_sigma: f64, beta: f64, seed: u64) -> Result<DeblurInstance> {
    require((1..=64).contains(&side), format!("image side must be in 1..=64, got {side}"))?;
    require(beta > 0.0, format!("beta must be positive, got {beta}"))?;
    require(noise_sigma >= 0.0, "noise_sigma must be nonnegative")?;
    let a1 = blur_matrix_1d(side, kernel);
    let x_true = checkerboard(side);
    let mut rng = SeededRng::new(seed);
    let mut y = kron_apply(&a1, side, &x_true, false);
    for v in y.iter_mut() {
        *v += noise_sigma * rng.normal();
    }
    // K = A₁ᵀA₁, H = K ⊗ K + βI
    let mut k = vec![0.0; side * side];
    for i in 0..side {
        for j in 0..side {
            k[i * side + j] = (0..side).map(|t| a1[t * side + i] * a1[t * side + j]).sum();
        }
    }
    let n = side * side;
    let mut h = SymMatrix::zeros(n);
    for r in 0..n {
        let (p, q) = (r / side, r % side);
        for c in 0..=r {
            let (s, t) = (c / side, c % side);
            let v = k[p * side + s] * k[q * side + t] + if r == c { beta } else { 0.0 };
            h.add_sym(r, c, v);
        }
    }
    let f = kron_apply(&a1, side, &y, true).into_iter().map(|v| -v).collect();
    let problem = BqpProblem::new(h, f, vec![0.0; n], vec![f64::INFINITY; n])?;
    let manifest = ProblemManifest {
        nx: Some(side),
        ny: Some(side),
        seed: Some(seed),
        beta: Some(beta),
        kernel: Some(kernel),
        noise_sigma: Some(noise_sigma),
        ..ProblemManifest::new(ProblemKind::Deblur, n)
    }
    .sealed(&problem);
    Ok(DeblurInstance { problem, manifest, a1, x_true, y })
}

/// Peak signal-to-noise ratio in dB for images with peak value 1.
pub fn psnr(x: &[f64], reference: &[f64]) -> f64 {
    let mse = x.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    10.0 * (1.0 / mse).log10()
}

/// Family parameters of the grid problems; `None` picks the family default.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PdeParams {
    /// Constant load (obstacle A: 1, obstacle B: 5, torsion: 10).
    pub c: Option<f64>,
    /// Journal bearing eccentricity (default 0.8).
    pub eccentricity: Option<f64>,
    /// Journal bearing half-height `b` of the domain `(0, 2π) × (0, 2b)` (default 10).
    pub half_height: Option<f64>,
}

/// Finite-difference grid problem `min ½∫w‖∇v‖² − ∫f·v` over interior grid values.
///
/// With grid points `z_{i,j} = (d₁ + i·h_x, d₃ + j·h_y)`, `0 ≤ i ≤ nx+1`, `0 ≤ j ≤ ny+1`, and
/// zero boundary values, the gradient term is
///
/// ```text
/// (h_x h_y / 4) Σ μ_{i,j}[((v_{i+1,j} − v_{i,j})/h_x)² + ((v_{i,j+1} − v_{i,j})/h_y)²]     0 ≤ i ≤ nx, 0 ≤ j ≤ ny
///             + Σ λ_{i,j}[((v_{i−1,j} − v_{i,j})/h_x)² + ((v_{i,j−1} − v_{i,j})/h_y)²]     1 ≤ i ≤ nx+1, 1 ≤ j ≤ ny+1
/// μ_{i,j} = (h_x h_y / 6)(w_{i+1,j} + w_{i,j} + w_{i,j+1})
/// λ_{i,j} = (h_x h_y / 6)(w_{i−1,j} + w_{i,j} + w_{i,j−1})
/// ```
///
/// and the load term is `h_x h_y Σ f_{i,j} v_{i,j}`. Unknown `v_{i,j}` has index
/// `(j − 1)·nx + (i − 1)`.
pub fn gen_pde(kind: ProblemKind, nx: usize, ny: usize, params: PdeParams) -> Result<(BqpProblem, ProblemManifest)> {
    require(kind.is_pde(), format!("{kind:?} is not a grid problem"))?;
    require(nx >= 2 && ny >= 2, format!("need nx, ny ≥ 2, got {nx}×{ny}"))?;
    let eps = params.eccentricity.unwrap_or(0.8);
    let b = params.half_height.unwrap_or(10.0);
    let c = params.c.unwrap_or(match kind {
        ProblemKind::ObstacleA => 1.0,
        ProblemKind::ObstacleB => 5.0,
        _ => 10.0,
    });
    let (d2, d4) = match kind {
        ProblemKind::Journal => {
            require(eps > 0.0 && eps < 1.0, format!("eccentricity must be in (0, 1), got {eps}"))?;
            require(b > 0.0, format!("half-height must be positive, got {b}"))?;
            (2.0 * PI, 2.0 * b)
        }
        _ => (1.0, 1.0),
    };
    let hx = d2 / (nx + 1) as f64;
    let hy = d4 / (ny + 1) as f64;
    let area = hx * hy;
    let coord = |i: usize, j: usize| (i as f64 * hx, j as f64 * hy);
    let weight = |i: usize, j: usize| match kind {
        ProblemKind::Journal => (1.0 + eps * coord(i, j).0.cos()).powi(3),
        _ => 1.0,
    };
    let load = |i: usize, j: usize| match kind {
        ProblemKind::Journal => eps * coord(i, j).0.sin(),
        _ => c,
    };
    let n = nx * ny;
    let index = |i: usize, j: usize| (i >= 1 && i <= nx && j >= 1 && j <= ny).then(|| (j - 1) * nx + (i - 1));

    let mut h = SymMatrix::zeros(n);
    // ½·α·(v_a − v_b)² contributes α to H_aa, H_bb and −α to H_ab
    let mut edge = |a: (usize, usize), b: (usize, usize), alpha: f64| {
        let (ia, ib) = (index(a.0, a.1), index(b.0, b.1));
        if let Some(p) = ia {
            h.add_sym(p, p, alpha);
        }
        if let Some(q) = ib {
            h.add_sym(q, q, alpha);
        }
        if let (Some(p), Some(q)) = (ia, ib) {
            h.add_sym(p.max(q), p.min(q), -alpha);
        }
    };
    let outer = area / 4.0;
    for j in 0..=ny {
        for i in 0..=nx {
            let mu = area / 6.0 * (weight(i + 1, j) + weight(i, j) + weight(i, j + 1));
            edge((i, j), (i + 1, j), outer * mu / (hx * hx));
            edge((i, j), (i, j + 1), outer * mu / (hy * hy));
        }
    }
    for j in 1..=ny + 1 {
        for i in 1..=nx + 1 {
            let lambda = area / 6.0 * (weight(i - 1, j) + weight(i, j) + weight(i, j - 1));
            edge((i, j), (i - 1, j), outer * lambda / (hx * hx));
            edge((i, j), (i, j - 1), outer * lambda / (hy * hy));
        }
    }

    let mut f = vec![0.0; n];
    let mut l = vec![0.0; n];
    let mut u = vec![0.0; n];
    for j in 1..=ny {
        for i in 1..=nx {
            let k = (j - 1) * nx + (i - 1);
            let (x, y) = coord(i, j);
            f[k] = -area * load(i, j);
            (l[k], u[k]) = match kind {
                ProblemKind::ObstacleA => ((3.2 * x).sin() * (3.2 * y).sin(), 2000.0),
                ProblemKind::ObstacleB => {
                    let s = (9.3 * x).sin() * (9.3 * y).sin();
                    (s * s * s, s * s + 0.02)
                }
                ProblemKind::Torsion => {
                    let d = x.min(1.0 - x).min(y).min(1.0 - y);
                    (-d, d)
                }
                _ => (0.0, f64::INFINITY),
            };
        }
    }
    let problem = BqpProblem::new(h, f, l, u)?;
    let mut manifest = ProblemManifest { nx: Some(nx), ny: Some(ny), ..ProblemManifest::new(kind, n) };
    if kind == ProblemKind::Journal {
        manifest.eccentricity = Some(eps);
        manifest.half_height = Some(b);
    } else {
        manifest.c = Some(c);
    }
    Ok((problem.clone(), manifest.sealed(&problem)))
}

/// `Q = diag(1, −1)`, `r = (−½, ½)` on `[0, 1]²`: every point with `x₁ = ½` and `x₂ ∈ {0, ½, 1}`
/// is a KKT point, and the interior one is a saddle.
pub fn gen_saddle() -> (BqpProblem, ProblemManifest) {
    let p = BqpProblem::new(SymMatrix::from_diagonal(&[1.0, -1.0]), vec![-0.5, 0.5], vec![0.0; 2], vec![1.0; 2])
        .expect("fixed data is valid");
    let m = ProblemManifest::new(ProblemKind::Saddle, 2).sealed(&p);
    (p, m)
}

/// Rebuilds the problem a manifest describes and checks its checksum.
pub fn regenerate(manifest: &ProblemManifest) -> Result<BqpProblem> {
    let missing = |what: &str| BqpError::InvalidInput(format!("manifest lacks {what}"));
    let seed = || manifest.seed.ok_or_else(|| missing("seed"));
    let p = match manifest.kind {
        ProblemKind::Nnls => {
            let m = manifest.m.ok_or_else(|| missing("m"))?;
            gen_random_nnls(m, manifest.n, manifest.density.unwrap_or(1.0), seed()?, manifest.beta.unwrap_or(0.0))?
                .problem
        }
        ProblemKind::Ncbqp => {
            let lambda = manifest.lambda_shift.ok_or_else(|| missing("lambda_shift"))?;
            gen_random_ncbqp(manifest.n, manifest.density.unwrap_or(1.0), lambda, seed()?)?.0
        }
        ProblemKind::Deblur => {
            let side = manifest.nx.ok_or_else(|| missing("nx"))?;
            let kernel = manifest.kernel.ok_or_else(|| missing("kernel"))?;
            let beta = manifest.beta.ok_or_else(|| missing("beta"))?;
            gen_deblur(side, kernel, manifest.noise_sigma.unwrap_or(0.0), beta, seed()?)?.problem
        }
        ProblemKind::Saddle => gen_saddle().0,
        kind => {
            let nx = manifest.nx.ok_or_else(|| missing("nx"))?;
            let ny = manifest.ny.ok_or_else(|| missing("ny"))?;
            let params =
                PdeParams { c: manifest.c, eccentricity: manifest.eccentricity, half_height: manifest.half_height };
            gen_pde(kind, nx, ny, params)?.0
        }
    };
    let sum = checksum(&p);
    if sum != manifest.checksum {
        return Err(BqpError::InvalidInput(format!(
            "checksum mismatch: manifest {}, regenerated {sum}",
            manifest.checksum
        )));
    }
    Ok(p)
}
