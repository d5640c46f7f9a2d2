//! Closed-form barrier candidates and their sampled certification.
//!
//! A candidate supplies a smooth function together with analytic
//! derivatives. [`certify`] samples a space-time region, evaluates the
//! interior defect `d_t phi - F(D^2 phi) -/+ lambda * bound` on the positivity
//! set and the front defect `d_t phi - lambda |grad phi|^2` on the zero level
//! set, and reports the worst signed margins.
//!
//! Values are carried as `exp(log_scale) * (value, gradient, ...)` so that
//! barriers with Gaussian factors keep meaningful margins far below the
//! smallest positive `f64`.

use std::cmp::Ordering;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elliptic::{CompiledOperator, EllipticOperatorSpec};
use crate::error::{invalid, Error, Result};
use crate::grid::{ParabolicCylinder, SpaceTimeField};
use crate::stefan::TravelingWave;

/// A real number stored as `sign * exp(ln)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignedLog {
    pub sign: i8,
    pub ln: f64,
}

impl SignedLog {
    pub const ZERO: Self = Self {
        sign: 0,
        ln: f64::NEG_INFINITY,
    };

    pub fn from_f64(x: f64) -> Self {
        Self::scaled(0.0, x)
    }

    /// `exp(log_scale) * x`.
    pub fn scaled(log_scale: f64, x: f64) -> Self {
        if x == 0.0 || x.is_nan() {
            Self::ZERO
        } else {
            Self {
                sign: if x > 0.0 { 1 } else { -1 },
                ln: x.abs().ln() + log_scale,
            }
        }
    }

    pub fn to_f64(self) -> f64 {
        if self.sign == 0 {
            0.0
        } else {
            self.sign as f64 * self.ln.exp()
        }
    }

    pub fn log10_abs(self) -> f64 {
        self.ln / std::f64::consts::LN_10
    }

    pub fn neg(self) -> Self {
        Self {
            sign: -self.sign,
            ln: self.ln,
        }
    }

    pub fn add(self, other: Self) -> Self {
        if self.sign == 0 {
            return other;
        }
        if other.sign == 0 {
            return self;
        }
        let (big, small) = if self.ln >= other.ln {
            (self, other)
        } else {
            (other, self)
        };
        let r = (small.ln - big.ln).exp();
        if big.sign == small.sign {
            Self {
                sign: big.sign,
                ln: big.ln + r.ln_1p(),
            }
        } else if r == 1.0 {
            Self::ZERO
        } else {
            Self {
                sign: big.sign,
                ln: big.ln + (-r).ln_1p(),
            }
        }
    }

    pub fn total_cmp(&self, other: &Self) -> Ordering {
        match self.sign.cmp(&other.sign) {
            Ordering::Equal => match self.sign {
                0 => Ordering::Equal,
                1 => self.ln.total_cmp(&other.ln),
                _ => other.ln.total_cmp(&self.ln),
            },
            o => o,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    Subsolution,
    Supersolution,
}

/// Where the interior inequality is required.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positivity {
    /// The whole region; the candidate has no free boundary.
    Everywhere,
    /// `{phi > 0}`, with free boundary `{phi = 0}`.
    LevelSet,
}

/// `phi = exp(log_scale) * value - offset`; derivatives carry the same scale.
#[derive(Clone, Debug)]
pub struct Jet {
    pub log_scale: f64,
    pub value: f64,
    pub offset: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
    pub time_derivative: f64,
}

impl Jet {
    fn actual(&self) -> f64 {
        self.log_scale.exp() * self.value - self.offset
    }
}

pub trait ClosedFormCandidate: Send + Sync {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn kind(&self) -> CandidateKind;
    fn positivity(&self) -> Positivity;
    /// Smooth extension with its derivatives.
    fn jet(&self, x: &[f64], t: f64) -> Jet;
    /// Point of the free boundary associated with `(x, t)`, if any.
    fn front_point(&self, _x: &[f64], _t: f64) -> Option<Vec<f64>> {
        None
    }
    /// Center of comoving regions.
    fn anchor(&self, _t: f64) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
    /// Finite-difference steps `(space, time)` used by the self-test near `(x, t)`.
    fn fd_steps(&self, _x: &[f64], _t: f64) -> (f64, f64) {
        (1e-3, 1e-3)
    }
    fn constants(&self) -> serde_json::Value;

    fn positive(&self, x: &[f64], t: f64) -> bool {
        match self.positivity() {
            Positivity::Everywhere => true,
            Positivity::LevelSet => self.jet(x, t).actual() > 0.0,
        }
    }

    /// The candidate as a function: `phi^+` for level-set candidates.
    fn eval(&self, x: &[f64], t: f64) -> f64 {
        let v = self.jet(x, t).actual();
        match self.positivity() {
            Positivity::Everywhere => v,
            Positivity::LevelSet => v.max(0.0),
        }
    }
}

/// Ball `B_radius(center) x (t0, t1]`, optionally moving with the candidate's anchor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: Vec<f64>,
    pub radius: f64,
    pub t0: f64,
    pub t1: f64,
    pub comoving: bool,
}

impl Region {
    pub fn ball(center: Vec<f64>, radius: f64, t0: f64, t1: f64) -> Self {
        Self {
            center,
            radius,
            t0,
            t1,
            comoving: false,
        }
    }

    pub fn comoving(radius: f64, n: usize, t0: f64, t1: f64) -> Self {
        Self {
            center: vec![0.0; n],
            radius,
            t0,
            t1,
            comoving: true,
        }
    }

    fn center_at(&self, cand: &dyn ClosedFormCandidate, t: f64) -> Vec<f64> {
        if self.comoving {
            cand.anchor(t)
                .iter()
                .zip(&self.center)
                .map(|(a, b)| a + b)
                .collect()
        } else {
            self.center.clone()
        }
    }

    fn contains(&self, cand: &dyn ClosedFormCandidate, x: &[f64], t: f64) -> bool {
        let c = self.center_at(cand, t);
        t >= self.t0
            && t <= self.t1
            && x.iter()
                .zip(&c)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                <= self.radius * self.radius
    }

    /// Maps the unit cube `[0,1]^{n+1}` onto the region.
    fn map(&self, cand: &dyn ClosedFormCandidate, u: &[f64]) -> (Vec<f64>, f64) {
        use std::f64::consts::PI;
        let n = self.center.len();
        let t = self.t0 + u[n] * (self.t1 - self.t0);
        let r = self.radius;
        let off: Vec<f64> = match n {
            1 => vec![r * (2.0 * u[0] - 1.0)],
            2 => {
                let rho = r * u[0].sqrt();
                let th = 2.0 * PI * u[1];
                vec![rho * th.cos(), rho * th.sin()]
            }
            _ => {
                let rho = r * u[0].cbrt();
                let ct = 1.0 - 2.0 * u[1];
                let st = (1.0 - ct * ct).max(0.0).sqrt();
                let ph = 2.0 * PI * u[2];
                vec![rho * st * ph.cos(), rho * st * ph.sin(), rho * ct]
            }
        };
        let c = self.center_at(cand, t);
        (c.iter().zip(off).map(|(a, b)| a + b).collect(), t)
    }
}

/// How sample points are placed in the unit cube.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampling {
    /// Cell midpoints of a tensor grid with `per_axis` points per axis.
    Grid { per_axis: usize },
    /// Halton points with a seeded random shift; prefixes are nested.
    Halton { count: usize },
}

impl Sampling {
    pub fn count(&self, dims: usize) -> usize {
        match *self {
            Sampling::Grid { per_axis } => per_axis.pow(dims as u32),
            Sampling::Halton { count } => count,
        }
    }

    fn point(&self, i: usize, dims: usize, shift: &[f64]) -> Vec<f64> {
        match *self {
            Sampling::Grid { per_axis } => {
                let mut rem = i;
                let mut u = vec![0.0; dims];
                for d in (0..dims).rev() {
                    u[d] = ((rem % per_axis) as f64 + 0.5) / per_axis as f64;
                    rem /= per_axis;
                }
                u
            }
            Sampling::Halton { .. } => (0..dims)
                .map(|d| (radical_inverse(i + 1, PRIMES[d]) + shift[d]).fract())
                .collect(),
        }
    }
}

const PRIMES: [usize; 6] = [2, 3, 5, 7, 11, 13];

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Outcome of certifying one candidate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BarrierCertificate {
    pub candidate: String,
    pub kind: CandidateKind,
    pub constants: serde_json::Value,
    pub operator: EllipticOperatorSpec,
    pub source_bound: f64,
    pub lambda: f64,
    pub region: Region,
    pub sampling: Sampling,
    pub seed: u64,
    pub interior_samples: usize,
    pub front_samples: usize,
    /// Worst interior defect: the minimum for supersolutions, the maximum for subsolutions.
    pub interior_margin: f64,
    pub interior_margin_log: SignedLog,
    pub front_margin: Option<f64>,
    pub self_test_error: f64,
    /// Lipschitz estimate of the interior defect times the sample spacing.
    pub resolution_bound: f64,
    pub verdict: bool,
}

impl BarrierCertificate {
    /// Whether the margins clear the resolution bound as well.
    pub fn robust(&self) -> bool {
        self.verdict && self.interior_margin.abs() > self.resolution_bound
    }
}

/// Largest normwise relative error of the analytic derivatives against
/// fourth-order central differences (gradient and time derivative from the
/// value, Hessian from the gradient), at the given points.
pub fn derivative_self_test(cand: &dyn ClosedFormCandidate, points: &[(Vec<f64>, f64)]) -> f64 {
    let n = cand.dim();
    let mut worst: f64 = 0.0;
    for (x, t) in points {
        let base = cand.jet(x, *t);
        let (hs, ht) = cand.fd_steps(x, *t);
        let rel = |shifted: &Jet| (shifted.log_scale - base.log_scale).exp();
        let val = |y: &[f64], s: f64| {
            let j = cand.jet(y, s);
            rel(&j) * j.value
        };
        let five = |f: &dyn Fn(f64) -> f64, h: f64| {
            (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
        };
        let mut g_fd = vec![0.0; n];
        let mut h_fd = DMatrix::zeros(n, n);
        for d in 0..n {
            let shift = |s: f64| {
                let mut y = x.clone();
                y[d] += s;
                y
            };
            g_fd[d] = five(&|s| val(&shift(s), *t), hs);
            for e in 0..n {
                h_fd[(e, d)] = five(
                    &|s| {
                        let j = cand.jet(&shift(s), *t);
                        rel(&j) * j.gradient[e]
                    },
                    hs,
                );
            }
        }
        let dt_fd = five(&|s| val(x, *t + s), ht);
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let relerr =
            |a: f64, b: f64, scale: f64| if scale < 1e-14 { 0.0 } else { a / scale.max(b) };
        let gd: Vec<f64> = base
            .gradient
            .iter()
            .zip(&g_fd)
            .map(|(a, b)| a - b)
            .collect();
        let eg = relerr(norm(&gd), norm(&g_fd), norm(&base.gradient));
        let eh = relerr(
            (&base.hessian - &h_fd).norm(),
            h_fd.norm(),
            base.hessian.norm(),
        );
        let et = relerr(
            (base.time_derivative - dt_fd).abs(),
            dt_fd.abs(),
            base.time_derivative.abs(),
        );
        worst = worst.max(eg).max(eh).max(et);
    }
    worst
}

/// Tolerance of the derivative self-test.
pub const SELF_TEST_TOLERANCE: f64 = 1e-6;

struct Defects {
    interior: Option<SignedLog>,
    front: Option<f64>,
}

fn point_defects(
    cand: &dyn ClosedFormCandidate,
    op: &CompiledOperator,
    region: &Region,
    x: &[f64],
    t: f64,
    source: f64,
    lambda: f64,
) -> Defects {
    let sign = match cand.kind() {
        CandidateKind::Supersolution => -1.0,
        CandidateKind::Subsolution => 1.0,
    };
    let interior = cand.positive(x, t).then(|| {
        let j = cand.jet(x, t);
        let f = op.eval(j.hessian.as_slice());
        let raw = j.time_derivative - f;
        let d =
            SignedLog::scaled(j.log_scale, raw).add(SignedLog::from_f64(sign * lambda * source));
        let size = SignedLog::scaled(j.log_scale, j.time_derivative.abs() + f.abs())
            .add(SignedLog::from_f64(lambda * source.abs()));
        round_to_zero(d, size)
    });
    let front = match cand.positivity() {
        Positivity::Everywhere => None,
        Positivity::LevelSet => cand
            .front_point(x, t)
            .filter(|p| region.contains(cand, p, t))
            .map(|p| {
                let j = cand.jet(&p, t);
                let scale = j.log_scale.exp();
                let g2: f64 = j.gradient.iter().map(|v| v * v).sum();
                let (a, b) = (scale * j.time_derivative, lambda * scale * scale * g2);
                round_to_zero(
                    SignedLog::from_f64(a - b),
                    SignedLog::from_f64(a.abs() + b.abs()),
                )
                .to_f64()
            }),
    };
    Defects { interior, front }
}

/// Defects within a few ulps of the size of their terms are exact ties.
fn round_to_zero(d: SignedLog, size: SignedLog) -> SignedLog {
    if d.sign != 0 && d.ln <= size.ln + (64.0 * f64::EPSILON).ln() {
        SignedLog::ZERO
    } else {
        d
    }
}

/// Certifies `cand` on `region` against `operator` with source bound and `lambda`.
///
/// For supersolutions the source bound is the supremum of `f`; for
/// subsolutions it is the supremum of `f^-`.
pub fn certify(
    cand: &dyn ClosedFormCandidate,
    operator: &EllipticOperatorSpec,
    source_bound: f64,
    lambda: f64,
    region: &Region,
    sampling: Sampling,
    seed: u64,
) -> Result<BarrierCertificate> {
    let n = cand.dim();
    if region.center.len() != n || !(region.radius > 0.0) || !(region.t1 > region.t0) {
        return Err(invalid("region does not match the candidate"));
    }
    let op = operator.compile(n)?;
    let dims = n + 1;
    let total = sampling.count(dims);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dims).map(|_| rng.gen::<f64>()).collect();
    let points: Vec<(Vec<f64>, f64)> = (0..total)
        .map(|i| region.map(cand, &sampling.point(i, dims, &shift)))
        .collect();
    let defects: Vec<Defects> = crate::parallel::install(|| {
        points
            .par_iter()
            .map(|(x, t)| point_defects(cand, &op, region, x, *t, source_bound, lambda))
            .collect()
    });
    let interior: Vec<(usize, SignedLog)> = defects
        .iter()
        .enumerate()
        .filter_map(|(i, d)| d.interior.map(|v| (i, v)))
        .collect();
    let fronts: Vec<f64> = defects.iter().filter_map(|d| d.front).collect();
    if interior.is_empty() {
        return Err(Error::RegionTooSmall(format!(
            "no sample of the region lies in the positivity set of {}",
            cand.id()
        )));
    }
    if cand.positivity() == Positivity::LevelSet && fronts.is_empty() {
        return Err(Error::RegionTooSmall(format!(
            "no free-boundary sample of {} lies in the region",
            cand.id()
        )));
    }
    let kind = cand.kind();
    let pick = |a: &(usize, SignedLog), b: &(usize, SignedLog)| match kind {
        CandidateKind::Supersolution => a.1.total_cmp(&b.1),
        CandidateKind::Subsolution => b.1.total_cmp(&a.1),
    };
    let worst = interior
        .iter()
        .copied()
        .reduce(|a, b| if pick(&b, &a) == Ordering::Less { b } else { a })
        .expect("nonempty");
    let front_margin = (!fronts.is_empty()).then(|| match kind {
        CandidateKind::Supersolution => fronts.iter().copied().fold(f64::INFINITY, f64::min),
        CandidateKind::Subsolution => fronts.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    });
    let test_points: Vec<(Vec<f64>, f64)> = interior
        .iter()
        .take(1000)
        .map(|&(i, _)| points[i].clone())
        .collect();
    let self_test_error = derivative_self_test(cand, &test_points);
    if !(self_test_error <= SELF_TEST_TOLERANCE) {
        return Err(Error::Numerical(format!(
            "derivative self-test of {} failed: relative error {self_test_error:e}",
            cand.id()
        )));
    }
    let resolution_bound = resolution_bound(
        cand,
        &op,
        region,
        &points,
        &interior,
        source_bound,
        lambda,
        total,
    );
    let interior_margin = worst.1.to_f64();
    let ok = |v: f64| match kind {
        CandidateKind::Supersolution => v > 0.0,
        CandidateKind::Subsolution => v < 0.0,
    };
    let interior_ok = match kind {
        CandidateKind::Supersolution => worst.1.sign > 0,
        CandidateKind::Subsolution => worst.1.sign < 0,
    };
    let verdict = interior_ok && front_margin.map_or(true, ok);
    Ok(BarrierCertificate {
        candidate: cand.id(),
        kind,
        constants: cand.constants(),
        operator: operator.clone(),
        source_bound,
        lambda,
        region: region.clone(),
        sampling,
        seed,
        interior_samples: interior.len(),
        front_samples: fronts.len(),
        interior_margin,
        interior_margin_log: worst.1,
        front_margin,
        self_test_error,
        resolution_bound,
        verdict,
    })
}

#[allow(clippy::too_many_arguments)]
fn resolution_bound(
    cand: &dyn ClosedFormCandidate,
    op: &CompiledOperator,
    region: &Region,
    points: &[(Vec<f64>, f64)],
    interior: &[(usize, SignedLog)],
    source: f64,
    lambda: f64,
    total: usize,
) -> f64 {
    let n = cand.dim();
    let step = interior.len().div_ceil(64).max(1);
    let defect = |x: &[f64], t: f64| -> Option<f64> {
        point_defects(cand, op, region, x, t, source, lambda)
            .interior
            .map(|d| d.to_f64())
    };
    let mut lip: f64 = 0.0;
    for &(i, _) in interior.iter().step_by(step) {
        let (x, t) = &points[i];
        let (hs, ht) = cand.fd_steps(x, *t);
        let mut g2 = 0.0;
        for d in 0..=n {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            let (mut tp, mut tm) = (*t, *t);
            let h = if d < n {
                xp[d] += hs;
                xm[d] -= hs;
                hs
            } else {
                tp += ht;
                tm -= ht;
                ht
            };
            if let (Some(a), Some(b)) = (defect(&xp, tp), defect(&xm, tm)) {
                g2 += ((a - b) / (2.0 * h)).powi(2);
            }
        }
        lip = lip.max(g2.sqrt());
    }
    let extent = (2.0 * region.radius).max(region.t1 - region.t0);
    0.5 * lip * extent / (total as f64).powf(1.0 / (n + 1) as f64)
}

/// Grid points where `field` and `phi` agree within `tol` while
/// `field - phi` keeps one sign on the inspected nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub level: usize,
    pub node: usize,
    pub x: Vec<f64>,
    pub t: f64,
    pub gap: f64,
    pub on_front: bool,
    pub from_below: bool,
}

/// One-sided contact points of a candidate with a field.
///
/// Nodes where the smooth extension of a level-set candidate is below
/// `-tol` are not inspected.
pub fn detect_touching(
    field: &SpaceTimeField,
    cand: &dyn ClosedFormCandidate,
    region: Option<&ParabolicCylinder>,
    tol: f64,
) -> Vec<Contact> {
    let n = field.dim();
    let ns = field.nodes();
    let mut x = vec![0.0; n];
    let mut rows = Vec::new();
    for k in 0..field.time.levels {
        let t = field.time.time(k);
        for node in 0..ns {
            field.fill_position(node, &mut x);
            if let Some(c) = region {
                if !c.contains(&x, t) {
                    continue;
                }
            }
            let j = cand.jet(&x, t);
            let smooth = j.actual();
            if cand.positivity() == Positivity::LevelSet && smooth < -tol {
                continue;
            }
            let phi = if cand.positivity() == Positivity::LevelSet {
                smooth.max(0.0)
            } else {
                smooth
            };
            rows.push((k, node, x.clone(), t, field.value(k, node) - phi, smooth));
        }
    }
    let below = rows.iter().all(|r| r.4 >= -tol);
    let above = rows.iter().all(|r| r.4 <= tol);
    if !below && !above {
        return Vec::new();
    }
    rows.into_iter()
        .filter(|r| r.4.abs() <= tol)
        .map(|(level, node, x, t, gap, smooth)| Contact {
            level,
            node,
            x,
            t,
            gap,
            on_front: smooth <= tol,
            from_below: below,
        })
        .collect()
}

/// Parameters of the Hopf barrier `h = (E - F) / D` on `B_1 x (0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopfBarrierParams {
    pub n: usize,
    #[serde(rename = "K")]
    pub k: f64,
    pub delta: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub a: f64,
    pub b_exp: f64,
    pub ln_f: f64,
    pub ln_d: f64,
    /// Whether `2 n K^2 - b_exp < 0`, which makes the interior bracket negative.
    pub interior_condition: bool,
}

impl HopfBarrierParams {
    pub fn ln_e(&self, x: &[f64], t: f64) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        -self.b_exp * (t + self.a).ln() - self.k * r2 / (t + self.a)
    }

    pub fn f_const(&self) -> f64 {
        self.ln_f.exp()
    }

    pub fn d(&self) -> f64 {
        self.ln_d.exp()
    }

    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        (self.ln_e(x, t) - self.ln_d).exp() - (self.ln_f - self.ln_d).exp()
    }

    /// The bracket `-3K|x|^2 + (t+a)(2nK^2 - b)` bounding the interior defect.
    pub fn bracket(&self, x: &[f64], t: f64) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        -3.0 * self.k * r2 + (t + self.a) * (2.0 * self.n as f64 * self.k * self.k - self.b_exp)
    }
}

/// Solves `(T + a) / (4a) = 2 / delta^2` and `b = K / ((T + a) log(1 + T / a))`.
pub fn hopf_params(n: usize, k: f64, delta: f64, t: f64) -> Result<HopfBarrierParams> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1], got {delta}")));
    }
    if !(t > 0.0) || !(k >= 1.0) || n == 0 {
        return Err(invalid("need T > 0, K >= 1 and n >= 1"));
    }
    let a = t * delta * delta / (8.0 - delta * delta);
    let b_exp = k / ((t + a) * (t / a).ln_1p());
    if !(b_exp * (t + a) < k) {
        return Err(Error::Numerical(format!(
            "monotonicity condition fails: b (T + a) = {} >= K; split the time interval",
            b_exp * (t + a)
        )));
    }
    let ln_f = -b_exp * (t + a).ln() - k / (t + a);
    let ln_a = -b_exp * a.ln();
    let ln_d = ln_a + (-(ln_f - ln_a).exp()).ln_1p();
    if !ln_d.is_finite() {
        return Err(Error::Numerical("D = a^{-b} - F is not positive".into()));
    }
    let interior_condition = 2.0 * n as f64 * k * k - b_exp < 0.0;
    Ok(HopfBarrierParams {
        n,
        k,
        delta,
        t,
        a,
        b_exp,
        ln_f,
        ln_d,
        interior_condition,
    })
}

/// Largest `T` (to relative `1e-12`) with `2 n K^2 - b_exp(T) < 0`, by bisection.
/// Returns the lower end of the final bracket, where the condition holds.
pub fn hopf_t_tilde(n: usize, k: f64, delta: f64) -> Result<f64> {
    let holds = |t: f64| {
        hopf_params(n, k, delta, t)
            .map(|p| p.interior_condition)
            .unwrap_or(false)
    };
    let mut lo = 1.0;
    let mut guard = 0;
    while !holds(lo) {
        lo *= 0.5;
        guard += 1;
        if guard > 200 {
            return Err(Error::Numerical("no admissible T found".into()));
        }
    }
    let mut hi = 2.0 * lo;
    while holds(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Numerical(
                "interior condition holds for every T".into(),
            ));
        }
    }
    while (hi - lo) > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if holds(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Hopf barrier as a subsolution candidate with no free boundary.
#[derive(Clone, Debug)]
pub struct HopfBarrier {
    pub params: HopfBarrierParams,
}

impl HopfBarrier {
    pub fn new(params: HopfBarrierParams) -> Self {
        Self { params }
    }

    /// `min_{|x| < 1} h(x, T) / (1 - |x|)` along a radius, sampled.
    pub fn mu(&self, samples: usize) -> f64 {
        let p = &self.params;
        let mut x = vec![0.0; p.n];
        (0..samples)
            .map(|i| {
                let r = i as f64 / samples as f64;
                x[0] = r;
                p.value(&x, p.t) / (1.0 - r)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

impl ClosedFormCandidate for HopfBarrier {
    fn id(&self) -> String {
        "hopf".into()
    }

    fn dim(&self) -> usize {
        self.params.n
    }

    fn kind(&self) -> CandidateKind {
        CandidateKind::Subsolution
    }

    fn positivity(&self) -> Positivity {
        Positivity::Everywhere
    }

    fn jet(&self, x: &[f64], t: f64) -> Jet {
        let p = &self.params;
        let n = p.n;
        let s = t + p.a;
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let gradient = x.iter().map(|v| -2.0 * p.k * v / s).collect();
        let mut hessian = DMatrix::from_fn(n, n, |i, j| 4.0 * p.k * p.k * x[i] * x[j] / (s * s));
        for i in 0..n {
            hessian[(i, i)] -= 2.0 * p.k / s;
        }
        Jet {
            log_scale: p.ln_e(x, t) - p.ln_d,
            value: 1.0,
            offset: (p.ln_f - p.ln_d).exp(),
            gradient,
            hessian,
            time_derivative: (p.k * r2 - p.b_exp * s) / (s * s),
        }
    }

    fn fd_steps(&self, x: &[f64], t: f64) -> (f64, f64) {
        let p = &self.params;
        let s = t + p.a;
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        (
            1e-2 * s / (2.0 * p.k * r + (p.k * s).sqrt()),
            1e-2 * s * s / (p.k * r * r + p.b_exp * s),
        )
    }

    fn constants(&self) -> serde_json::Value {
        serde_json::to_value(&self.params).unwrap_or_default()
    }
}

/// Hopf certification summary: `kappa = -(max interior defect)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HopfReport {
    /// Horizon asked for.
    pub requested_t: f64,
    /// Number of equal time pieces; `params.t = requested_t / pieces <= t_tilde`.
    pub pieces: usize,
    pub params: HopfBarrierParams,
    pub t_tilde: f64,
    pub kappa: f64,
    pub kappa_log10: f64,
    pub mu: f64,
    /// Largest `defect - (E/D)/(t+a)^2 * bracket` over samples, which should be `<= 0`.
    pub bracket_excess: f64,
    /// Smallest `d_t h` on the lateral boundary `|x| = 1`.
    pub lateral_min_dt: f64,
    pub certificate: BarrierCertificate,
}

/// Builds the barrier for `T`, certifies it against `M^-_K` on `B_1 x (0, T]`.
///
/// When `T > T~` the horizon is cut into `ceil(T / T~)` equal pieces and the
/// barrier of one piece is certified; every piece uses the same barrier up to
/// a time shift.
pub fn certify_hopf(
    n: usize,
    k: f64,
    delta: f64,
    t: f64,
    sampling: Sampling,
    seed: u64,
) -> Result<HopfReport> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!("T must be positive, got {t}")));
    }
    let t_tilde = hopf_t_tilde(n, k, delta)?;
    let pieces = (t / t_tilde).ceil().max(1.0) as usize;
    let requested_t = t;
    let t = t / pieces as f64;
    let params = hopf_params(n, k, delta, t)?;
    let barrier = HopfBarrier::new(params.clone());
    let op = EllipticOperatorSpec::pucci_minus(k);
    let region = Region::ball(vec![0.0; n], 1.0, 0.0, t);
    let certificate = certify(&barrier, &op, 0.0, 1.0, &region, sampling, seed)?;
    let kappa_log = certificate.interior_margin_log.neg();
    let compiled = op.compile(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut bracket_excess = f64::NEG_INFINITY;
    let mut lateral_min_dt = f64::INFINITY;
    for _ in 0..4096 {
        let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tt = rng.gen_range(0.0..t) + f64::MIN_POSITIVE;
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r < 1.0 {
            let j = barrier.jet(&x, tt);
            let raw = j.time_derivative - compiled.eval(j.hessian.as_slice());
            let s = tt + params.a;
            bracket_excess = bracket_excess.max(raw - params.bracket(&x, tt) / (s * s));
        }
        if r > 0.0 {
            x.iter_mut().for_each(|v| *v /= r);
            lateral_min_dt = lateral_min_dt.min(barrier.jet(&x, tt).time_derivative);
        }
    }
    Ok(HopfReport {
        mu: barrier.mu(10_000),
        requested_t,
        pieces,
        t_tilde,
        kappa: kappa_log.to_f64(),
        kappa_log10: kappa_log.log10_abs(),
        params,
        bracket_excess,
        lateral_min_dt,
        certificate,
    })
}

/// `g(s) = (1 - exp(-2 n s)) / (2n)`, extended smoothly to `s < 0`.
pub fn lemma31_g(n: usize, s: f64) -> (f64, f64, f64) {
    let m = 2.0 * n as f64;
    let e = (-m * s).exp();
    (-(-m * s).exp_m1() / m, e, -m * e)
}

/// `w = C0 g(|x| - r(t))` with `r(t) = 1 - (1 + sigma) C0 lambda t`.
///
/// `sigma = 0` is the equality case on the front; a positive `sigma` makes
/// the free-boundary inequality strict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma31W {
    pub c0: f64,
    pub lambda: f64,
    pub n: usize,
    pub sigma: f64,
}

pub fn lemma31_w(c0: f64, lambda: f64, n: usize, sigma: f64) -> Result<Lemma31W> {
    if !(c0 > 0.0) || !(lambda > 0.0 && lambda <= 1.0) || n == 0 || !(sigma >= 0.0) {
        return Err(invalid(
            "need C0 > 0, lambda in (0, 1], n >= 1 and sigma >= 0",
        ));
    }
    Ok(Lemma31W {
        c0,
        lambda,
        n,
        sigma,
    })
}

impl Lemma31W {
    pub fn speed(&self) -> f64 {
        (1.0 + self.sigma) * self.c0 * self.lambda
    }

    pub fn radius(&self, t: f64) -> f64 {
        1.0 - self.speed() * t
    }
}

impl ClosedFormCandidate for Lemma31W {
    fn id(&self) -> String {
        "lemma31_w".into()
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn kind(&self) -> CandidateKind {
        CandidateKind::Supersolution
    }

    fn positivity(&self) -> Positivity {
        Positivity::LevelSet
    }

    fn jet(&self, x: &[f64], t: f64) -> Jet {
        let n = self.n;
        let rho = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        let (g, g1, g2) = lemma31_g(n, rho - self.radius(t));
        let dir: Vec<f64> = x.iter().map(|v| v / rho).collect();
        let hessian = DMatrix::from_fn(n, n, |i, j| {
            let p = dir[i] * dir[j];
            let id = if i == j { 1.0 } else { 0.0 };
            self.c0 * (g2 * p + g1 / rho * (id - p))
        });
        Jet {
            log_scale: 0.0,
            value: self.c0 * g,
            offset: 0.0,
            gradient: dir.iter().map(|d| self.c0 * g1 * d).collect(),
            hessian,
            time_derivative: self.c0 * g1 * self.speed(),
        }
    }

    fn front_point(&self, x: &[f64], t: f64) -> Option<Vec<f64>> {
        let rho = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r = self.radius(t);
        (rho > 0.0 && r > 0.0).then(|| x.iter().map(|v| v / rho * r).collect())
    }

    fn fd_steps(&self, _x: &[f64], _t: f64) -> (f64, f64) {
        (1e-3 / self.n as f64, 1e-3 / self.speed().max(1.0))
    }

    fn constants(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or_default()
    }
}

/// One tried tuple of the `w` search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Lemma31Attempt {
    pub c0: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub interior_margin: f64,
    pub front_margin: Option<f64>,
    pub verdict: bool,
}

/// Search for a certified `w` and the status of the printed inequality.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Lemma31Search {
    pub n: usize,
    #[serde(rename = "K")]
    pub k: f64,
    pub source_bound: f64,
    pub operator: EllipticOperatorSpec,
    /// Smallest `C0` with `C0 g(1) >= K`, so that `w >= K (|x| - 1)^+` initially.
    pub c0_min: f64,
    pub c0_factors: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub attempts: Vec<Lemma31Attempt>,
    pub certified: Option<BarrierCertificate>,
    /// Whether `C0 lambda - 4nK > sup f` can hold together with `r(t) >= 1/2` on `[0, 1]`.
    pub printed_inequality_satisfiable: bool,
    pub printed_inequality_note: String,
}

/// Searches `(C0, sigma)` per `lambda` for a certified supersolution `w`
/// on `B_2 x (0, 1]`, keeping `C0 lambda (1 + sigma) <= 1/2`.
pub fn lemma31_search(
    n: usize,
    k: f64,
    lambdas: &[f64],
    source_bound: f64,
    operator: &EllipticOperatorSpec,
    sampling: Sampling,
    seed: u64,
) -> Result<Lemma31Search> {
    let c0_min = k / lemma31_g(n, 1.0).0;
    let c0_factors = vec![1.0, 1.25, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0];
    let sigmas = vec![0.0, 0.05, 0.25, 1.0];
    let region = Region::ball(vec![0.0; n], 2.0, 0.0, 1.0);
    let mut attempts = Vec::new();
    let mut certified = None;
    'outer: for &lambda in lambdas {
        for &f in &c0_factors {
            for &sigma in &sigmas {
                let w = lemma31_w(c0_min * f, lambda, n, sigma)?;
                if w.speed() > 0.5 {
                    continue;
                }
                let cert = certify(&w, operator, source_bound, lambda, &region, sampling, seed)?;
                attempts.push(Lemma31Attempt {
                    c0: w.c0,
                    lambda,
                    sigma,
                    interior_margin: cert.interior_margin,
                    front_margin: cert.front_margin,
                    verdict: cert.verdict,
                });
                if cert.verdict {
                    certified = Some(cert);
                    break 'outer;
                }
            }
        }
    }
    let needed = 4.0 * n as f64 * k + source_bound.max(0.0);
    let printed_inequality_satisfiable = needed < 0.5;
    let printed_inequality_note = format!(
        "the printed chain needs C0 lambda > 4nK + sup f = {needed}, while r(t) >= 1/2 on [0, 1] needs C0 lambda <= 1/2"
    );
    Ok(Lemma31Search {
        n,
        k,
        source_bound,
        operator: operator.clone(),
        c0_min,
        c0_factors,
        sigmas,
        attempts,
        certified,
        printed_inequality_satisfiable,
        printed_inequality_note,
    })
}

/// Natural cubic spline through uniformly spaced samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubicSpline {
    pub t0: f64,
    pub dt: f64,
    pub y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(t0: f64, dt: f64, y: Vec<f64>) -> Result<Self> {
        let len = y.len();
        if len < 2 || !(dt > 0.0) {
            return Err(invalid("spline needs two samples and positive spacing"));
        }
        let mut m = vec![0.0; len];
        if len > 2 {
            let k = len - 2;
            let mut c = vec![0.0; k];
            let mut d = vec![0.0; k];
            for i in 0..k {
                let rhs = 6.0 * (y[i + 2] - 2.0 * y[i + 1] + y[i]) / (dt * dt);
                let (sub, diag) = (1.0, 4.0);
                if i == 0 {
                    c[i] = 1.0 / diag;
                    d[i] = rhs / diag;
                } else {
                    let den = diag - sub * c[i - 1];
                    c[i] = 1.0 / den;
                    d[i] = (rhs - sub * d[i - 1]) / den;
                }
            }
            for i in (0..k).rev() {
                let next = if i + 1 < k { m[i + 2] } else { 0.0 };
                m[i + 1] = d[i] - c[i] * next;
            }
        }
        Ok(Self { t0, dt, y, m })
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + (self.y.len() - 1) as f64 * self.dt
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let r = (t - self.t0) / self.dt;
        let i = (r.floor().max(0.0) as usize).min(self.y.len() - 2);
        (i, t - (self.t0 + i as f64 * self.dt))
    }

    /// Value and first derivative.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let (i, s) = self.locate(t);
        let h = self.dt;
        let (y0, y1, m0, m1) = (self.y[i], self.y[i + 1], self.m[i], self.m[i + 1]);
        let b = (y1 - y0) / h - h * (2.0 * m0 + m1) / 6.0;
        let v = y0 + s * (b + s * (m0 / 2.0 + s * (m1 - m0) / (6.0 * h)));
        let dv = b + s * (m0 + s * (m1 - m0) / (2.0 * h));
        (v, dv)
    }

    fn antiderivative_on(&self, i: usize, s: f64) -> f64 {
        let h = self.dt;
        let (y0, y1, m0, m1) = (self.y[i], self.y[i + 1], self.m[i], self.m[i + 1]);
        let b = (y1 - y0) / h - h * (2.0 * m0 + m1) / 6.0;
        s * (y0 + s * (b / 2.0 + s * (m0 / 6.0 + s * (m1 - m0) / (24.0 * h))))
    }

    /// `int_a^b` of the spline, exact piecewise.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if a > b {
            return -self.integral(b, a);
        }
        let (ia, sa) = self.locate(a);
        let (ib, sb) = self.locate(b);
        if ia == ib {
            return self.antiderivative_on(ia, sb) - self.antiderivative_on(ia, sa);
        }
        let mut total = self.antiderivative_on(ia, self.dt) - self.antiderivative_on(ia, sa);
        for i in ia + 1..ib {
            total += self.antiderivative_on(i, self.dt);
        }
        total + self.antiderivative_on(ib, sb)
    }
}

/// The perturbed-plane subsolution `v = (1 - C2 mu) a(t) h(x - d(t) e_n)^+`
/// with `mu = eta^{gamma/2}`, `h(y) = y_n - (mu/eta)(|y'|^2 - C3 y_n^2)` and
/// `d(t) = b_tilde(t) + C1 mu lambda (t - t_end)`.
///
/// `a` is a spline of the mollified slope; `b_tilde = lambda int_t^{t_end} a`.
#[derive(Clone, Debug)]
pub struct Section3V {
    pub n: usize,
    pub eta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub a_bar: Arc<CubicSpline>,
}

#[allow(clippy::too_many_arguments)]
pub fn section3_v(
    n: usize,
    eta: f64,
    gamma: f64,
    lambda: f64,
    a_bar: Arc<CubicSpline>,
    c1: f64,
    c2: f64,
    c3: f64,
) -> Result<Section3V> {
    if !(eta > 0.0 && eta < 1.0) || !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid("need eta and gamma in (0, 1)"));
    }
    if !(1.0 - c2 * eta.powf(gamma / 2.0) > 0.0) {
        return Err(invalid(format!(
            "eta = {eta} too large for C2 = {c2}: 1 - C2 eta^(gamma/2) <= 0"
        )));
    }
    if !(c3 > 0.0) || n == 0 {
        return Err(invalid("need C3 > 0 and n >= 1"));
    }
    Ok(Section3V {
        n,
        eta,
        gamma,
        lambda,
        c1,
        c2,
        c3,
        a_bar,
    })
}

impl Section3V {
    pub fn mu(&self) -> f64 {
        self.eta.powf(self.gamma / 2.0)
    }

    fn q(&self) -> f64 {
        self.mu() / self.eta
    }

    pub fn a(&self, t: f64) -> (f64, f64) {
        self.a_bar.eval(t)
    }

    pub fn b_tilde(&self, t: f64) -> f64 {
        self.lambda * self.a_bar.integral(t, self.a_bar.t_end())
    }

    pub fn d(&self, t: f64) -> f64 {
        self.b_tilde(t) + self.c1 * self.mu() * self.lambda * (t - self.a_bar.t_end())
    }

    fn d_prime(&self, t: f64) -> f64 {
        self.lambda * (self.c1 * self.mu() - self.a(t).0)
    }

    fn h(&self, y: &[f64]) -> f64 {
        let n = self.n;
        let yp: f64 = y[..n - 1].iter().map(|v| v * v).sum();
        y[n - 1] - self.q() * (yp - self.c3 * y[n - 1] * y[n - 1])
    }

    fn shifted(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut y = x.to_vec();
        y[self.n - 1] -= self.d(t);
        y
    }

    /// `a(t) (x_n - d(t))^+ - v`, the ordering gap.
    pub fn plane_gap(&self, x: &[f64], t: f64) -> f64 {
        let y = self.shifted(x, t);
        self.a(t).0 * y[self.n - 1].max(0.0) - self.eval(x, t)
    }
}

impl ClosedFormCandidate for Section3V {
    fn id(&self) -> String {
        "section3_v".into()
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn kind(&self) -> CandidateKind {
        CandidateKind::Subsolution
    }

    fn positivity(&self) -> Positivity {
        Positivity::LevelSet
    }

    fn jet(&self, x: &[f64], t: f64) -> Jet {
        let n = self.n;
        let q = self.q();
        let y = self.shifted(x, t);
        let (a, da) = self.a(t);
        let scale = 1.0 - self.c2 * self.mu();
        let big_a = scale * a;
        let h = self.h(&y);
        let hn = 1.0 + 2.0 * self.c3 * q * y[n - 1];
        let mut gradient: Vec<f64> = y[..n - 1].iter().map(|v| -2.0 * q * v * big_a).collect();
        gradient.push(big_a * hn);
        let hessian = DMatrix::from_fn(n, n, |i, j| match (i == j, i + 1 == n) {
            (false, _) => 0.0,
            (true, false) => -2.0 * q * big_a,
            (true, true) => 2.0 * self.c3 * q * big_a,
        });
        Jet {
            log_scale: 0.0,
            value: big_a * h,
            offset: 0.0,
            gradient,
            hessian,
            time_derivative: scale * (da * h - a * hn * self.d_prime(t)),
        }
    }

    fn front_point(&self, x: &[f64], t: f64) -> Option<Vec<f64>> {
        let n = self.n;
        let y = self.shifted(x, t);
        let q = self.q();
        let yp: f64 = y[..n - 1].iter().map(|v| v * v).sum();
        let (qa, qb, qc) = (q * self.c3, 1.0, -q * yp);
        let disc = (qb * qb - 4.0 * qa * qc).sqrt();
        let upper = -2.0 * qc / (qb + disc);
        let lower = (-qb - disc) / (2.0 * qa);
        let yn = if (y[n - 1] - upper).abs() <= (y[n - 1] - lower).abs() {
            upper
        } else {
            lower
        };
        let mut p = x.to_vec();
        p[n - 1] = yn + self.d(t);
        Some(p)
    }

    fn anchor(&self, t: f64) -> Vec<f64> {
        let mut c = vec![0.0; self.n];
        c[self.n - 1] = self.d(t);
        c
    }

    fn fd_steps(&self, _x: &[f64], _t: f64) -> (f64, f64) {
        (1e-3 * self.eta, 1e-3 * self.a_bar.dt)
    }

    fn constants(&self) -> serde_json::Value {
        serde_json::json!({
            "eta": self.eta, "gamma": self.gamma, "lambda": self.lambda,
            "C1": self.c1, "C2": self.c2, "C3": self.c3, "mu": self.mu(),
        })
    }
}

/// Sampled ordering and separation gaps of `v` on `B_{2 eta}(d(t) e_n)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Section3Geometry {
    /// `min (a (x_n - d)^+ - v)` over the ball; must be `>= 0`.
    pub ordering_gap: f64,
    /// `min (a (x_n - d)^+ - v) - eta^{1 + gamma/2}` over the sphere where `v > 0`.
    pub separation_gap: f64,
    pub samples: usize,
}

pub fn section3_geometry(
    v: &Section3V,
    t0: f64,
    t1: f64,
    samples: usize,
    seed: u64,
) -> Section3Geometry {
    use std::f64::consts::PI;
    let n = v.n;
    let r = 2.0 * v.eta;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = v.eta * v.mu();
    let mut ordering_gap = f64::INFINITY;
    let mut separation_gap = f64::INFINITY;
    let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        match n {
            1 => vec![if rng.gen::<bool>() { 1.0 } else { -1.0 }],
            2 => {
                let th = 2.0 * PI * rng.gen::<f64>();
                vec![th.cos(), th.sin()]
            }
            _ => {
                let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let s = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
                g.iter().map(|a| a / s).collect()
            }
        }
    };
    for _ in 0..samples {
        let t = rng.gen_range(t0..=t1);
        let c = v.anchor(t);
        let dir = unit(&mut rng);
        let rho = r * rng.gen::<f64>().powf(1.0 / n as f64);
        let x: Vec<f64> = c.iter().zip(&dir).map(|(a, b)| a + rho * b).collect();
        ordering_gap = ordering_gap.min(v.plane_gap(&x, t));
        let xs: Vec<f64> = c.iter().zip(&dir).map(|(a, b)| a + r * b).collect();
        if v.eval(&xs, t) > 0.0 {
            separation_gap = separation_gap.min(v.plane_gap(&xs, t) - target);
        }
    }
    Section3Geometry {
        ordering_gap,
        separation_gap,
        samples,
    }
}

/// One tried tuple of the `v` search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Section3Attempt {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub geometry: Section3Geometry,
    pub interior_margin: Option<f64>,
    pub front_margin: Option<f64>,
    pub verdict: bool,
    pub note: Option<String>,
}

/// Constant search for the `v` subsolution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Section3Search {
    pub eta: f64,
    pub gamma: f64,
    pub operator: EllipticOperatorSpec,
    pub c3_box: Vec<f64>,
    pub attempts: Vec<Section3Attempt>,
    pub chosen: Option<(f64, f64, f64)>,
    pub certificate: Option<BarrierCertificate>,
}

/// Tries `C3` over a fixed box; `C2` and `C1` follow from the ordering,
/// separation and front requirements with a 5% margin. Each tuple is
/// checked geometrically and certified on the comoving ball `B_{2 eta}`
/// over `[t_end - eta / lambda, t_end]`.
#[allow(clippy::too_many_arguments)]
pub fn section3_search(
    n: usize,
    eta: f64,
    gamma: f64,
    lambda: f64,
    a_bar: Arc<CubicSpline>,
    operator: &EllipticOperatorSpec,
    f_neg: f64,
    sampling: Sampling,
    seed: u64,
) -> Result<Section3Search> {
    let mu = eta.powf(gamma / 2.0);
    let t1 = a_bar.t_end();
    let t0 = (t1 - eta / lambda).max(a_bar.t0);
    let i0 = (((t0 - a_bar.t0) / a_bar.dt).floor().max(0.0)) as usize;
    let window = &a_bar.y[i0.min(a_bar.y.len() - 1)..];
    let a_max = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let a_min = window.iter().copied().fold(f64::INFINITY, f64::min);
    if !(a_min > 0.0) {
        return Err(Error::Numerical(
            "slope coefficient is not positive on the window".into(),
        ));
    }
    let c3_box = vec![
        0.25, 0.5, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0,
    ];
    let region = Region::comoving(2.0 * eta, n, t0, t1);
    let mut attempts = Vec::new();
    let mut chosen = None;
    let mut certificate = None;
    for &c3 in &c3_box {
        let ordering = 2.0 * c3 / (1.0 + 2.0 * c3 * mu);
        let separation = (4.0 * c3 + 1.0 / a_min) / (2.0 + 4.0 * c3 * mu);
        let c2 = 1.05 * ordering.max(separation);
        if c2 * mu >= 0.999 {
            attempts.push(Section3Attempt {
                c1: f64::NAN,
                c2,
                c3,
                geometry: Section3Geometry {
                    ordering_gap: f64::NAN,
                    separation_gap: f64::NAN,
                    samples: 0,
                },
                interior_margin: None,
                front_margin: None,
                verdict: false,
                note: Some("1 - C2 mu <= 0".into()),
            });
            continue;
        }
        let c1 = 1.05 * c2 * a_max;
        let v = section3_v(n, eta, gamma, lambda, a_bar.clone(), c1, c2, c3)?;
        let geometry = section3_geometry(&v, t0, t1, 10_000, seed);
        let geometric = geometry.ordering_gap >= -1e-12 && geometry.separation_gap >= 0.0;
        let (interior_margin, front_margin, verdict, note, cert) =
            match certify(&v, operator, f_neg, lambda, &region, sampling, seed) {
                Ok(c) => (
                    Some(c.interior_margin),
                    c.front_margin,
                    c.verdict && geometric,
                    None,
                    Some(c),
                ),
                Err(e) => (None, None, false, Some(e.to_string()), None),
            };
        attempts.push(Section3Attempt {
            c1,
            c2,
            c3,
            geometry,
            interior_margin,
            front_margin,
            verdict,
            note,
        });
        if verdict {
            chosen = Some((c1, c2, c3));
            certificate = cert;
            break;
        }
    }
    Ok(Section3Search {
        eta,
        gamma,
        operator: operator.clone(),
        c3_box,
        attempts,
        chosen,
        certificate,
    })
}

/// The traveling wave as a candidate; both defects vanish identically.
#[derive(Clone, Debug)]
pub struct TravelingWaveCandidate {
    pub wave: TravelingWave,
    pub n: usize,
}

impl ClosedFormCandidate for TravelingWaveCandidate {
    fn id(&self) -> String {
        "traveling_wave".into()
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn kind(&self) -> CandidateKind {
        CandidateKind::Supersolution
    }

    fn positivity(&self) -> Positivity {
        Positivity::LevelSet
    }

    fn jet(&self, x: &[f64], t: f64) -> Jet {
        let n = self.n;
        let mut hessian = DMatrix::zeros(n, n);
        hessian[(n - 1, n - 1)] = self.wave.second_derivative(x, t);
        Jet {
            log_scale: 0.0,
            value: self.wave.smooth(x, t),
            offset: 0.0,
            gradient: self.wave.gradient(x, t),
            hessian,
            time_derivative: self.wave.time_derivative(x, t),
        }
    }

    fn front_point(&self, x: &[f64], t: f64) -> Option<Vec<f64>> {
        let mut p = x.to_vec();
        p[self.n - 1] = self.wave.front(t);
        Some(p)
    }

    fn constants(&self) -> serde_json::Value {
        serde_json::to_value(self.wave).unwrap_or_default()
    }
}

/// `a0 (x_n - b(t))^+` with `b(t) = b0 - lambda a0 t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovingPlane {
    pub a0: f64,
    pub b0: f64,
    pub lambda: f64,
    pub n: usize,
}

impl MovingPlane {
    pub fn b(&self, t: f64) -> f64 {
        self.b0 - self.lambda * self.a0 * t
    }
}

impl ClosedFormCandidate for MovingPlane {
    fn id(&self) -> String {
        "moving_plane".into()
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn kind(&self) -> CandidateKind {
        CandidateKind::Supersolution
    }

    fn positivity(&self) -> Positivity {
        Positivity::LevelSet
    }

    fn jet(&self, x: &[f64], t: f64) -> Jet {
        let n = self.n;
        let mut gradient = vec![0.0; n];
        gradient[n - 1] = self.a0;
        Jet {
            log_scale: 0.0,
            value: self.a0 * (x[n - 1] - self.b(t)),
            offset: 0.0,
            gradient,
            hessian: DMatrix::zeros(n, n),
            time_derivative: self.lambda * self.a0 * self.a0,
        }
    }

    fn front_point(&self, x: &[f64], t: f64) -> Option<Vec<f64>> {
        let mut p = x.to_vec();
        p[self.n - 1] = self.b(t);
        Some(p)
    }

    fn constants(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, TimeAxis};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    #[test]
    fn signed_log_arithmetic() {
        let a = SignedLog::from_f64(3.0);
        let b = SignedLog::from_f64(-5.0);
        assert!((a.add(b).to_f64() + 2.0).abs() < 1e-14);
        assert_eq!(a.add(a.neg()), SignedLog::ZERO);
        let tiny = SignedLog::scaled(-2000.0, 1.0);
        assert_eq!(tiny.to_f64(), 0.0);
        assert!(tiny.total_cmp(&SignedLog::ZERO).is_gt());
        assert!(tiny.neg().total_cmp(&SignedLog::from_f64(-1e-300)).is_gt());
        assert!((tiny.log10_abs() + 2000.0 / std::f64::consts::LN_10).abs() < 1e-9);
    }

    #[test]
    fn hopf_params_examples() {
        let p = hopf_params(1, 1.0, 1.0, 1.0).unwrap();
        assert!((p.a - 1.0 / 7.0).abs() < 1e-15);
        assert!((p.b_exp - 7.0 / (8.0 * 8f64.ln())).abs() < 1e-12);
        assert!(((p.t + p.a) / (4.0 * p.a) - 2.0).abs() < 1e-12);
        let mut last = f64::INFINITY;
        for d in [0.9, 0.5, 0.2, 0.05] {
            let p = hopf_params(2, 2.0, d, 0.1).unwrap();
            assert!(((p.t + p.a) / (4.0 * p.a) - 2.0 / (d * d)).abs() < 1e-12 * 2.0 / (d * d));
            assert!(p.a < last);
            last = p.a;
            assert!(p.b_exp * (p.t + p.a) < p.k);
        }
    }

    #[test]
    fn hopf_boundary_values() {
        let t_tilde = hopf_t_tilde(2, 2.0, 0.5).unwrap();
        let p = hopf_params(2, 2.0, 0.5, t_tilde).unwrap();
        assert!((p.value(&[0.0, 0.0], 0.0) - 1.0).abs() < 1e-12);
        assert!(p.value(&[0.25, 0.0], 0.0).abs() < 1e-12);
        for r in [0.0, 0.1, 0.3, 0.6, 1.0] {
            assert!(p.value(&[r, 0.0], 0.0) <= 1.0 + 1e-12);
            if r >= 0.25 {
                assert!(p.value(&[0.0, r], 0.0) <= 1e-12);
            }
        }
        assert!(p.value(&[0.6, 0.8], p.t).abs() < 1e-12);
    }

    #[test]
    fn t_tilde_is_the_sign_change() {
        let t = hopf_t_tilde(2, 2.0, 0.5).unwrap();
        let expected = 2.0 * (8.0 - 0.25) / (8.0 * (32f64).ln() * 16.0);
        assert!((t - expected).abs() < 1e-9 * expected, "{t} vs {expected}");
        assert!(hopf_params(2, 2.0, 0.5, t).unwrap().interior_condition);
        assert!(
            !hopf_params(2, 2.0, 0.5, t * (1.0 + 1e-9))
                .unwrap()
                .interior_condition
        );
    }

    #[test]
    fn hopf_certificate_is_negative_and_bounded_by_the_bracket() {
        let t = hopf_t_tilde(2, 2.0, 0.5).unwrap();
        let rep = certify_hopf(2, 2.0, 0.5, t, Sampling::Grid { per_axis: 24 }, 1).unwrap();
        assert!(rep.certificate.verdict);
        assert!(rep.kappa_log10.is_finite() && rep.certificate.interior_margin_log.sign < 0);
        assert!(rep.bracket_excess <= 1e-9, "{}", rep.bracket_excess);
        assert!(rep.lateral_min_dt > 0.0);
        assert!(rep.mu > 0.0);
        assert!(rep.certificate.self_test_error <= SELF_TEST_TOLERANCE);
        assert_eq!(rep.pieces, 1);
    }

    #[test]
    fn long_horizon_is_split_into_pieces() {
        let tt = hopf_t_tilde(2, 2.0, 0.5).unwrap();
        let rep = certify_hopf(2, 2.0, 0.5, 0.05, Sampling::Grid { per_axis: 12 }, 1).unwrap();
        assert_eq!(rep.pieces, 2);
        assert_eq!(rep.params.t, 0.025);
        assert!(rep.params.t <= tt && rep.params.interior_condition);
        assert!(rep.certificate.verdict);
        assert!(certify_hopf(2, 2.0, 0.5, 0.0, Sampling::Grid { per_axis: 4 }, 1).is_err());
    }

    #[test]
    fn g_examples() {
        let (g, g1, g2) = lemma31_g(1, 0.0);
        assert_eq!((g, g1), (0.0, 1.0));
        assert_eq!(g2, -2.0);
        assert!((lemma31_g(1, 1.0).0 - 0.432332358).abs() < 1e-9);
        assert!((lemma31_g(3, 40.0).0 - 1.0 / 6.0).abs() < 1e-15);
        for s in [0.1, 0.7, 2.0] {
            let (_, g1, g2) = lemma31_g(2, s);
            assert!((g2 + 4.0 * g1).abs() < 1e-15);
        }
    }

    #[test]
    fn w_front_is_equality_case() {
        let w = lemma31_w(3.0, 0.1, 2, 0.0).unwrap();
        let x = [0.0, w.radius(0.5)];
        let j = w.jet(&x, 0.5);
        let g2: f64 = j.gradient.iter().map(|v| v * v).sum();
        assert!((j.time_derivative - 0.1 * 9.0).abs() < 1e-14);
        assert!((j.time_derivative - 0.1 * g2).abs() < 1e-14);
    }

    #[test]
    fn moving_plane_front_margin_is_zero() {
        let plane = MovingPlane {
            a0: 1.5,
            b0: 0.0,
            lambda: 0.5,
            n: 2,
        };
        let region = Region::ball(vec![0.0, 0.0], 1.0, -0.5, 0.0);
        let c = certify(
            &plane,
            &EllipticOperatorSpec::trace(),
            0.0,
            0.5,
            &region,
            Sampling::Halton { count: 4000 },
            3,
        )
        .unwrap();
        assert!((c.interior_margin - 0.5 * 2.25).abs() < 1e-12);
        assert_eq!(c.front_margin, Some(0.0));
        assert!(!c.verdict);
    }

    #[test]
    fn traveling_wave_defects_vanish() {
        let wave = crate::stefan::traveling_wave(0.5, 0.5).unwrap();
        let cand = TravelingWaveCandidate { wave, n: 2 };
        let region = Region::ball(vec![0.0, 0.0], 1.0, -1.0, 0.0);
        let c = certify(
            &cand,
            &EllipticOperatorSpec::trace(),
            0.0,
            0.5,
            &region,
            Sampling::Halton { count: 4000 },
            3,
        )
        .unwrap();
        assert!(c.interior_margin.abs() < 1e-12);
        assert!(c.front_margin.unwrap().abs() < 1e-12);
    }

    #[test]
    fn certify_is_reproducible_and_monotone() {
        let w = lemma31_w(4.0, 0.1, 2, 0.05).unwrap();
        let region = Region::ball(vec![0.0, 0.0], 2.0, 0.0, 1.0);
        let op = EllipticOperatorSpec::pucci_plus(2.0);
        let a = certify(
            &w,
            &op,
            0.0,
            0.1,
            &region,
            Sampling::Halton { count: 2000 },
            9,
        )
        .unwrap();
        let b = certify(
            &w,
            &op,
            0.0,
            0.1,
            &region,
            Sampling::Halton { count: 2000 },
            9,
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = certify(
            &w,
            &op,
            0.0,
            0.1,
            &region,
            Sampling::Halton { count: 8000 },
            9,
        )
        .unwrap();
        assert!(c.interior_margin <= a.interior_margin);
        assert!(c.front_margin.unwrap() <= a.front_margin.unwrap());
    }

    #[test]
    fn lemma31_search_in_one_dimension() {
        let s = lemma31_search(
            1,
            2.0,
            &[0.1],
            0.0,
            &EllipticOperatorSpec::pucci_plus(2.0),
            Sampling::Halton { count: 2000 },
            1,
        )
        .unwrap();
        let cert = s.certified.expect("n = 1 admits a certified w");
        assert!(cert.front_margin.unwrap() > 0.0);
        assert!(!s.printed_inequality_satisfiable);
        assert!(s.attempts.iter().any(|a| a.sigma == 0.0 && !a.verdict));
    }

    #[test]
    fn spline_interpolates_and_integrates() {
        let y: Vec<f64> = (0..41).map(|i| (i as f64 * 0.05).sin()).collect();
        let s = CubicSpline::new(0.0, 0.05, y.clone()).unwrap();
        for (i, v) in y.iter().enumerate() {
            assert!((s.eval(i as f64 * 0.05).0 - v).abs() < 1e-14);
        }
        assert!((s.eval(1.0).1 - 1f64.cos()).abs() < 1e-4);
        let exact = 1.0 - 2f64.cos();
        assert!((s.integral(0.0, 2.0) - exact).abs() < 1e-5);
        let m = 20_000;
        let simpson: f64 = (0..m)
            .map(|i| {
                let (a, b) = (i as f64 * 2.0 / m as f64, (i + 1) as f64 * 2.0 / m as f64);
                (b - a) / 6.0 * (s.eval(a).0 + 4.0 * s.eval(0.5 * (a + b)).0 + s.eval(b).0)
            })
            .sum();
        assert!((s.integral(0.0, 2.0) - simpson).abs() < 1e-12);
        assert!((s.integral(0.3, 1.7) + s.integral(1.7, 0.3)).abs() < 1e-15);
        let lin =
            CubicSpline::new(0.0, 0.1, (0..11).map(|i| 2.0 + i as f64 * 0.1).collect()).unwrap();
        assert!(
            (lin.integral(0.25, 0.75) - (2.0 * 0.5 + 0.5 * (0.75f64.powi(2) - 0.25f64.powi(2))))
                .abs()
                < 1e-14
        );
    }

    fn flat_spline(a: f64) -> Arc<CubicSpline> {
        Arc::new(CubicSpline::new(-0.5, 0.01, vec![a; 51]).unwrap())
    }

    #[test]
    fn v_coincides_with_plane_at_anchor() {
        let v = section3_v(2, 0.05, 1.0 / 3.0, 0.5, flat_spline(1.0), 1.5, 1.2, 1.5).unwrap();
        for t in [-0.1, -0.05, 0.0] {
            let c = v.anchor(t);
            assert!(v.eval(&c, t).abs() < 1e-15);
            assert!(v.plane_gap(&c, t).abs() < 1e-15);
        }
        assert!((v.b_tilde(-0.1) - 0.05).abs() < 1e-14);
        assert!(section3_v(2, 0.5, 1.0 / 3.0, 0.5, flat_spline(1.0), 2.0, 1.2, 1.5).is_err());
    }

    #[test]
    fn v_search_certifies_on_constant_slope() {
        let a = flat_spline(1.0);
        let eta = 1e-4;
        let s = section3_search(
            2,
            eta,
            1.0 / 3.0,
            0.5,
            a,
            &EllipticOperatorSpec::trace(),
            0.0,
            Sampling::Halton { count: 4000 },
            2,
        )
        .unwrap();
        let (c1, c2, c3) = s.chosen.expect("certified constants");
        let v = section3_v(2, eta, 1.0 / 3.0, 0.5, flat_spline(1.0), c1, c2, c3).unwrap();
        let g = section3_geometry(&v, -eta / 0.5, 0.0, 10_000, 5);
        assert!(g.ordering_gap >= -1e-12 && g.separation_gap >= 0.0, "{g:?}");
        let cert = s.certificate.unwrap();
        assert!(cert.interior_margin < 0.0 && cert.front_margin.unwrap() < 0.0);
    }

    #[test]
    fn v_lower_branch_breaks_ordering_for_large_eta() {
        let a = flat_spline(1.0);
        let s = section3_search(
            2,
            0.05,
            1.0 / 3.0,
            0.5,
            a,
            &EllipticOperatorSpec::trace(),
            0.0,
            Sampling::Halton { count: 2000 },
            2,
        )
        .unwrap();
        assert!(s.chosen.is_none());
        assert!(s.attempts.iter().any(|a| a.geometry.ordering_gap < 0.0));
    }

    #[test]
    fn touching_examples() {
        let grid = Grid::centered(&[0.0, 0.0], 0.5, 1.0 / 64.0, 0).unwrap();
        let time = TimeAxis::spanning(-0.2, 0.0, 5).unwrap();
        let wave = crate::stefan::traveling_wave(0.5, 0.5).unwrap();
        let field = SpaceTimeField::from_fn(grid, time, move |x, t| wave.value(x, t));
        let cand = TravelingWaveCandidate { wave, n: 2 };
        let all = detect_touching(&field, &cand, None, 1e-12);
        let ns = field.nodes();
        let expected = (0..field.values.len())
            .filter(|&i| {
                let x = field.grid.position_of(i % ns);
                wave.smooth(&x, field.time.time(i / ns)) >= -1e-12
            })
            .count();
        assert_eq!(all.len(), expected);
        assert!(all
            .iter()
            .all(|c| c.from_below && c.on_front == (wave.smooth(&c.x, c.t) <= 1e-12)));
        struct Lifted(TravelingWaveCandidate);
        impl ClosedFormCandidate for Lifted {
            fn id(&self) -> String {
                "lifted".into()
            }
            fn dim(&self) -> usize {
                2
            }
            fn kind(&self) -> CandidateKind {
                CandidateKind::Supersolution
            }
            fn positivity(&self) -> Positivity {
                Positivity::Everywhere
            }
            fn jet(&self, x: &[f64], t: f64) -> Jet {
                let mut j = self.0.jet(x, t);
                j.value = j.value.max(0.0) + 1.0;
                j
            }
            fn constants(&self) -> serde_json::Value {
                serde_json::Value::Null
            }
        }
        assert!(detect_touching(&field, &Lifted(cand.clone()), None, 1e-6).is_empty());
        let slope = wave.c / wave.lambda;
        let h = 1.0 / 64.0;
        let mut contacts = Vec::new();
        for step in 0..400 {
            let shift = -0.1 + step as f64 * 5e-4;
            let plane = MovingPlane {
                a0: slope,
                b0: -shift,
                lambda: wave.c / slope,
                n: 2,
            };
            contacts = detect_touching(&field, &plane, None, 1e-9);
            if !contacts.is_empty() {
                break;
            }
        }
        assert!(!contacts.is_empty());
        for c in &contacts {
            assert!((c.x[1] + wave.c * c.t).abs() <= 2.0 * h, "{c:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn candidates_pass_self_test(c0 in 1.0f64..6.0, lambda in 0.01f64..0.08, sigma in 0.0f64..0.5, seed in 0u64..1000) {
            let w = lemma31_w(c0, lambda, 2, sigma).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<(Vec<f64>, f64)> = (0..50).map(|_| (vec![rng.gen_range(0.6..1.4), rng.gen_range(-1.0..1.0)], rng.gen_range(0.0..1.0))).collect();
            prop_assert!(derivative_self_test(&w, &pts) <= SELF_TEST_TOLERANCE);
            let t_tilde = hopf_t_tilde(2, 2.0, 0.5).unwrap();
            let hop = HopfBarrier::new(hopf_params(2, 2.0, 0.5, t_tilde).unwrap());
            let pts: Vec<(Vec<f64>, f64)> = (0..50).map(|_| (vec![rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7)], rng.gen_range(0.0..t_tilde))).collect();
            prop_assert!(derivative_self_test(&hop, &pts) <= SELF_TEST_TOLERANCE);
        }

        #[test]
        fn hopf_monotone_on_lateral_boundary(theta in 0.0f64..6.283, frac in 0.0f64..1.0) {
            let t_tilde = hopf_t_tilde(2, 2.0, 0.5).unwrap();
            let hop = HopfBarrier::new(hopf_params(2, 2.0, 0.5, t_tilde).unwrap());
            let t = frac * t_tilde + 1e-12;
            prop_assert!(hop.jet(&[theta.cos(), theta.sin()], t).time_derivative > 0.0);
        }
    }
}
