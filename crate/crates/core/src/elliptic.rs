//! Uniformly elliptic operators on symmetric matrices.
//!
//! Convention: `F` is `K`-elliptic when
//! `K^{-1} |N| <= F(M + N) - F(M) <= K |N|` for every `N >= 0`, with `|N|`
//! the trace norm. The Pucci operators are then the extremal members:
//! `M^-_K(N) <= F(M + N) - F(M) <= M^+_K(N)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Which operator an [`EllipticOperatorSpec`] evaluates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorKind {
    Trace,
    PucciPlus,
    PucciMinus,
    /// `min_i tr(A_i M)`, matrices given as rows.
    BellmanMin {
        matrices: Vec<Vec<Vec<f64>>>,
    },
    /// `max_i tr(A_i M)`.
    BellmanMax {
        matrices: Vec<Vec<Vec<f64>>>,
    },
}

/// An operator together with its ellipticity constant `K >= 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipticOperatorSpec {
    #[serde(flatten)]
    pub kind: OperatorKind,
    #[serde(rename = "K")]
    pub k: f64,
}

impl EllipticOperatorSpec {
    pub fn trace() -> Self {
        Self {
            kind: OperatorKind::Trace,
            k: 1.0,
        }
    }

    pub fn pucci_plus(k: f64) -> Self {
        Self {
            kind: OperatorKind::PucciPlus,
            k,
        }
    }

    pub fn pucci_minus(k: f64) -> Self {
        Self {
            kind: OperatorKind::PucciMinus,
            k,
        }
    }

    pub fn bellman_min(matrices: Vec<DMatrix<f64>>, k: f64) -> Self {
        Self {
            kind: OperatorKind::BellmanMin {
                matrices: to_rows(&matrices),
            },
            k,
        }
    }

    pub fn bellman_max(matrices: Vec<DMatrix<f64>>, k: f64) -> Self {
        Self {
            kind: OperatorKind::BellmanMax {
                matrices: to_rows(&matrices),
            },
            k,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            OperatorKind::Trace => "trace",
            OperatorKind::PucciPlus => "pucci_plus",
            OperatorKind::PucciMinus => "pucci_minus",
            OperatorKind::BellmanMin { .. } => "bellman_min",
            OperatorKind::BellmanMax { .. } => "bellman_max",
        }
    }

    /// Checks `K >= 1` and, for Bellman families, that every matrix is
    /// symmetric of dimension `n` with spectrum in `[K^{-1}, K]`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.k >= 1.0) || !self.k.is_finite() {
            return Err(invalid(format!(
                "ellipticity constant K must be >= 1, got {}",
                self.k
            )));
        }
        if let OperatorKind::BellmanMin { matrices } | OperatorKind::BellmanMax { matrices } =
            &self.kind
        {
            if matrices.is_empty() {
                return Err(invalid("Bellman family is empty"));
            }
            for a in from_rows(matrices)? {
                if a.nrows() != n {
                    return Err(invalid(format!(
                        "Bellman matrix has dimension {}, expected {n}",
                        a.nrows()
                    )));
                }
                check_symmetric(&a)?;
                let eig = sym_eigenvalues(&a);
                let tol = 1e-12 * self.k;
                if eig
                    .iter()
                    .any(|&l| l < 1.0 / self.k - tol || l > self.k + tol)
                {
                    return Err(invalid(format!(
                        "Bellman matrix spectrum {eig:?} leaves [1/K, K] for K = {}",
                        self.k
                    )));
                }
            }
        }
        Ok(())
    }

    /// Compiles the spec into an evaluator for dimension `n`.
    pub fn compile(&self, n: usize) -> Result<CompiledOperator> {
        self.validate(n)?;
        let family = match &self.kind {
            OperatorKind::BellmanMin { matrices } | OperatorKind::BellmanMax { matrices } => {
                from_rows(matrices)?
                    .iter()
                    .map(|a| a.as_slice().to_vec())
                    .collect()
            }
            _ => Vec::new(),
        };
        Ok(CompiledOperator {
            kind: self.kind.clone(),
            k: self.k,
            n,
            family,
        })
    }
}

fn to_rows(ms: &[DMatrix<f64>]) -> Vec<Vec<Vec<f64>>> {
    ms.iter()
        .map(|m| {
            (0..m.nrows())
                .map(|i| m.row(i).iter().copied().collect())
                .collect()
        })
        .collect()
}

fn from_rows(rows: &[Vec<Vec<f64>>]) -> Result<Vec<DMatrix<f64>>> {
    rows.iter()
        .map(|m| {
            let n = m.len();
            if n == 0 || m.iter().any(|r| r.len() != n) {
                return Err(invalid("Bellman matrix must be square"));
            }
            Ok(DMatrix::from_fn(n, n, |i, j| m[i][j]))
        })
        .collect()
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(invalid("matrix is not square"));
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(invalid(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix, closed form for `n <= 2`.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    match m.nrows() {
        1 => vec![m[(0, 0)]],
        2 => {
            let e = eig2(m[(0, 0)], m[(0, 1)], m[(1, 1)]);
            vec![e.0, e.1]
        }
        _ => m.clone().symmetric_eigenvalues().iter().copied().collect(),
    }
}

#[inline]
fn eig2(a: f64, b: f64, c: f64) -> (f64, f64) {
    let mean = 0.5 * (a + c);
    let r = (0.5 * (a - c)).hypot(b);
    (mean - r, mean + r)
}

#[inline]
fn pucci_plus_eigs(eigs: impl Iterator<Item = f64>, k: f64) -> f64 {
    eigs.map(|l| if l > 0.0 { k * l } else { l / k }).sum()
}

#[inline]
fn pucci_minus_eigs(eigs: impl Iterator<Item = f64>, k: f64) -> f64 {
    eigs.map(|l| if l > 0.0 { l / k } else { k * l }).sum()
}

/// Maximal Pucci operator `K sum(l+) + K^{-1} sum(l-)` over the eigenvalues.
pub fn pucci_plus(m: &DMatrix<f64>, k: f64) -> f64 {
    pucci_plus_eigs(sym_eigenvalues(m).into_iter(), k)
}

/// Minimal Pucci operator `K^{-1} sum(l+) + K sum(l-)`.
pub fn pucci_minus(m: &DMatrix<f64>, k: f64) -> f64 {
    pucci_minus_eigs(sym_eigenvalues(m).into_iter(), k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PucciSign {
    Plus,
    Minus,
}

/// `M^+_K(M)` or `M^-_K(M)`, rejecting non-symmetric input and `K < 1`.
pub fn pucci_eval(sign: PucciSign, m: &DMatrix<f64>, k: f64) -> Result<f64> {
    check_symmetric(m)?;
    if !(k >= 1.0) {
        return Err(invalid(format!(
            "ellipticity constant must be >= 1, got {k}"
        )));
    }
    Ok(match sign {
        PucciSign::Plus => pucci_plus(m, k),
        PucciSign::Minus => pucci_minus(m, k),
    })
}

/// Brute-force `(inf, sup)` of `tr(A M)` over sampled admissible
/// `K^{-1} I <= A <= K I`, without eigenvalues of `M`.
///
/// Each sample draws a random orthonormal basis `q_i` (Gram-Schmidt on
/// Gaussian vectors) and takes the best `A = sum d_i q_i q_i^T` with
/// `d_i in {K^{-1}, K}`; the extreme points of the admissible set have this form.
pub fn sampled_pucci_bounds<R: Rng>(
    m: &DMatrix<f64>,
    k: f64,
    samples: usize,
    rng: &mut R,
) -> (f64, f64) {
    let n = m.nrows();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..samples {
        basis.clear();
        while basis.len() < n {
            let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            for q in &basis {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-8 {
                v.iter_mut().for_each(|a| *a /= norm);
                basis.push(v);
            }
        }
        let (mut up, mut down) = (0.0, 0.0);
        for q in &basis {
            let mut quad = 0.0;
            for i in 0..n {
                for j in 0..n {
                    quad += q[i] * m[(i, j)] * q[j];
                }
            }
            up += if quad > 0.0 { k * quad } else { quad / k };
            down += if quad > 0.0 { quad / k } else { k * quad };
        }
        hi = hi.max(up);
        lo = lo.min(down);
    }
    (lo, hi)
}

/// Evaluates `F(M)` after checking that `M` is symmetric.
pub fn operator_eval(spec: &EllipticOperatorSpec, m: &DMatrix<f64>) -> Result<f64> {
    check_symmetric(m)?;
    Ok(spec.compile(m.nrows())?.eval(m.as_slice()))
}

/// Operator ready for repeated evaluation on column-major `n x n` slices.
#[derive(Clone, Debug)]
pub struct CompiledOperator {
    kind: OperatorKind,
    k: f64,
    n: usize,
    family: Vec<Vec<f64>>,
}

impl CompiledOperator {
    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn is_trace(&self) -> bool {
        matches!(self.kind, OperatorKind::Trace)
    }

    /// `F(M)` for a symmetric column-major matrix; no validation.
    pub fn eval(&self, m: &[f64]) -> f64 {
        let n = self.n;
        match &self.kind {
            OperatorKind::Trace => (0..n).map(|i| m[i * n + i]).sum(),
            OperatorKind::PucciPlus | OperatorKind::PucciMinus => {
                let plus = matches!(self.kind, OperatorKind::PucciPlus);
                match n {
                    1 => {
                        let l = m[0];
                        if plus {
                            pucci_plus_eigs(std::iter::once(l), self.k)
                        } else {
                            pucci_minus_eigs(std::iter::once(l), self.k)
                        }
                    }
                    2 => {
                        let (a, b) = eig2(m[0], 0.5 * (m[1] + m[2]), m[3]);
                        if plus {
                            pucci_plus_eigs([a, b].into_iter(), self.k)
                        } else {
                            pucci_minus_eigs([a, b].into_iter(), self.k)
                        }
                    }
                    _ => {
                        let mat = DMatrix::from_column_slice(n, n, m);
                        if plus {
                            pucci_plus(&mat, self.k)
                        } else {
                            pucci_minus(&mat, self.k)
                        }
                    }
                }
            }
            OperatorKind::BellmanMin { .. } => self
                .family
                .iter()
                .map(|a| a.iter().zip(m).map(|(x, y)| x * y).sum::<f64>())
                .fold(f64::INFINITY, f64::min),
            OperatorKind::BellmanMax { .. } => self
                .family
                .iter()
                .map(|a| a.iter().zip(m).map(|(x, y)| x * y).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Sampled ellipticity ratios `(F(M+N) - F(M)) / tr(N)` over `N >= 0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EllipticityMargin {
    pub lower: f64,
    pub upper: f64,
    pub k: f64,
    pub passes: bool,
}

/// Samples random symmetric `M` and random `N >= 0` (full rank and rank
/// one) and reports the extreme ratios. Passes when both lie in `[K^{-1}, K]`.
pub fn ellipticity_margin(
    spec: &EllipticOperatorSpec,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<EllipticityMargin> {
    let op = spec.compile(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lower = f64::INFINITY;
    let mut upper = f64::NEG_INFINITY;
    for s in 0..samples {
        let m = random_symmetric(&mut rng, n, 3.0);
        let b = if s % 2 == 0 {
            DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0))
        } else {
            DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0))
        };
        let nmat = &b * b.transpose();
        let norm = nmat.trace();
        if norm < 1e-8 {
            continue;
        }
        let sum = &m + &nmat;
        let ratio = (op.eval(sum.as_slice()) - op.eval(m.as_slice())) / norm;
        lower = lower.min(ratio);
        upper = upper.max(ratio);
    }
    let tol = 1e-12 * spec.k;
    let passes = lower >= 1.0 / spec.k - tol && upper <= spec.k + tol;
    Ok(EllipticityMargin {
        lower,
        upper,
        k: spec.k,
        passes,
    })
}

/// Symmetric matrix with entries uniform in `[-scale, scale]`.
pub fn random_symmetric<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = rng.gen_range(-scale..scale);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}
