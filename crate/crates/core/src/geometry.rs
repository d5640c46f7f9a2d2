//! Measurable geometry of a computed solution: flatness of the front,
//! nondegeneracy, Lipschitz-to-integral transfer and the trapping-plane fit.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::SpaceTimeField;
use crate::stefan::{FrontGraph, SpaceTimeSolution};

/// `(mean of u^p)^{1/p}` over `B_r(center) x (t_lo, t_hi)`.
///
/// Spatial cells count when their center lies in the ball; each stored
/// level is weighted by the overlap of its time cell with the interval.
pub fn cylinder_p_mean(
    field: &SpaceTimeField,
    center: &[f64],
    r: f64,
    t_lo: f64,
    t_hi: f64,
    p: f64,
) -> Result<f64> {
    if !(p > 0.0) {
        return Err(invalid("exponent must be positive"));
    }
    if !(t_hi > t_lo) {
        return Err(invalid("empty time interval"));
    }
    let time = &field.time;
    let tol = 1e-9 * time.dt.max(1e-300);
    if !field.grid.contains_ball(center, r) || t_lo < time.t0 - tol || t_hi > time.t_end() + tol {
        return Err(Error::RegionTooSmall(format!(
            "cylinder B_{r}({center:?}) x ({t_lo}, {t_hi}) exits the field domain"
        )));
    }
    let nodes = ball_nodes(field, center, r);
    if nodes.is_empty() {
        return Err(Error::RegionTooSmall("ball contains no grid nodes".into()));
    }
    let half = 0.5 * time.dt;
    let mut total = 0.0;
    let mut weight = 0.0;
    for k in 0..time.levels {
        let t = time.time(k);
        let (a, b) = if time.levels == 1 {
            (t_lo, t_hi)
        } else {
            let lo = if k == 0 { t } else { t - half };
            let hi = if k + 1 == time.levels { t } else { t + half };
            (lo.max(t_lo), hi.min(t_hi))
        };
        let w = b - a;
        if w <= 0.0 {
            continue;
        }
        let vals = field.level_values(k);
        let s: f64 = nodes.iter().map(|&i| vals[i].max(0.0).powf(p)).sum();
        total += w * s;
        weight += w * nodes.len() as f64;
    }
    if weight == 0.0 {
        return Err(Error::RegionTooSmall(
            "time interval misses every stored level".into(),
        ));
    }
    Ok((total / weight).powf(1.0 / p))
}

fn ball_nodes(field: &SpaceTimeField, center: &[f64], r: f64) -> Vec<usize> {
    let mut x = vec![0.0; field.dim()];
    (0..field.nodes())
        .filter(|&node| {
            field.fill_position(node, &mut x);
            x.iter()
                .zip(center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                < r * r
        })
        .collect()
}

/// Constants entering the nondegeneracy thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NondegSpec {
    pub p0: f64,
    #[serde(rename = "K")]
    pub k: f64,
    /// Weak Harnack constant when measured.
    pub c_h: Option<f64>,
    pub f_neg_norm: f64,
    pub f_norm: f64,
}

impl NondegSpec {
    pub fn new(p0: f64, k: f64, f_neg_norm: f64, f_norm: f64) -> Result<Self> {
        if !(p0 > 0.0 && p0 < 1.0) {
            return Err(invalid(format!("p0 must lie in (0, 1), got {p0}")));
        }
        if !(k > 1.0) {
            return Err(invalid(format!("K must exceed 1, got {k}")));
        }
        if f_neg_norm < 0.0 || f_norm < f_neg_norm {
            return Err(invalid("need 0 <= |f^-| <= |f|"));
        }
        Ok(Self {
            p0,
            k,
            c_h: None,
            f_neg_norm,
            f_norm,
        })
    }

    /// `K^{-1} (1 + |f^-|) lambda`.
    pub fn integral_threshold(&self, lambda: f64) -> f64 {
        (1.0 + self.f_neg_norm) * lambda / self.k
    }

    /// `K^{-1} (1 + |f|) lambda`.
    pub fn pointwise_threshold(&self, lambda: f64) -> f64 {
        (1.0 + self.f_norm) * lambda / self.k
    }
}

/// `p0`-mean over `B_r(x0) x (t0, t0 + K^{-1} r^2)` and whether it reaches the integral threshold.
pub fn nondeg_integral(
    field: &SpaceTimeField,
    x0: &[f64],
    t0: f64,
    r: f64,
    spec: &NondegSpec,
    lambda: f64,
) -> Result<(f64, bool)> {
    let value = cylinder_p_mean(field, x0, r, t0, t0 + r * r / spec.k, spec.p0)?;
    Ok((value, value >= spec.integral_threshold(lambda)))
}

/// Which source norm enters the pointwise threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointwiseMode {
    FullNorm,
    NegativePart,
}

/// `u(x0, t0) >= K^{-1} (1 + |f|) lambda` (or with `|f^-|`), inclusive.
pub fn nondeg_pointwise(
    field: &SpaceTimeField,
    x0: &[f64],
    t0: f64,
    spec: &NondegSpec,
    lambda: f64,
    mode: PointwiseMode,
) -> Result<bool> {
    let u = field.interpolate(x0, t0)?;
    let threshold = match mode {
        PointwiseMode::FullNorm => spec.pointwise_threshold(lambda),
        PointwiseMode::NegativePart => spec.integral_threshold(lambda),
    };
    Ok(u >= threshold)
}

/// Whether `g(y) = 1 - y^p - (1-y)^p` has nonnegative second differences on `(0, 1)`.
pub fn g_convexity(p0: f64, samples: usize) -> bool {
    let g = |y: f64| 1.0 - y.powf(p0) - (1.0 - y).powf(p0);
    let d = 0.5 / (samples + 1) as f64;
    (1..=samples).all(|i| {
        let y = i as f64 / (samples + 1) as f64;
        let dd = d.min(y / 2.0).min((1.0 - y) / 2.0);
        g(y + dd) - 2.0 * g(y) + g(y - dd) >= 0.0
    })
}

/// Outcome of the Lipschitz-to-integral check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub applicable: bool,
    pub reason: Option<String>,
    /// `p0`-mean over `B_r(x0) x (t0, t0 + r^2)`.
    pub value: f64,
    /// Same mean over the nondegeneracy cylinder `(t0, t0 + K^{-1} r^2)`.
    pub nondeg_value: f64,
    /// `(K^{-1} / 2)(1 + |f^-|) lambda`.
    pub bound: f64,
    pub slack: f64,
    pub passes: bool,
    pub g_convex: bool,
    pub measured_lipschitz: f64,
}

/// Checks that a parabolic-Lipschitz field meeting the pointwise bound at
/// `(x0, t0)` satisfies the integral bound with factor one half.
pub fn lipschitz_equivalence_check(
    field: &SpaceTimeField,
    l: f64,
    spec: &NondegSpec,
    lambda: f64,
    x0: &[f64],
    t0: f64,
    r: f64,
) -> Result<LipschitzReport> {
    let pointwise = spec.integral_threshold(lambda);
    let bound = 0.5 * pointwise;
    let measured = field.holder_seminorm(1.0, 20_000, 7);
    let g_convex = g_convexity(spec.p0, 99);
    let mut reason = None;
    if measured > l * (1.0 + 1e-9) + 1e-12 {
        reason = Some(format!(
            "measured Lipschitz constant {measured} exceeds L = {l}"
        ));
    } else if l > 2.0 * (1.0 + spec.f_neg_norm) / spec.k * (1.0 + 1e-12) {
        reason = Some(format!("L = {l} exceeds 2 K^-1 (1 + |f^-|)"));
    } else if !(r < lambda / 4.0) {
        reason = Some(format!("r = {r} is not below lambda / 4"));
    } else if field.interpolate(x0, t0)? < pointwise * (1.0 - 1e-12) {
        reason = Some("pointwise bound fails at (x0, t0)".into());
    }
    let value = cylinder_p_mean(field, x0, r, t0, t0 + r * r, spec.p0)?;
    let nondeg_value = cylinder_p_mean(field, x0, r, t0, t0 + r * r / spec.k, spec.p0)?;
    let applicable = reason.is_none();
    Ok(LipschitzReport {
        applicable,
        reason,
        value,
        nondeg_value,
        bound,
        slack: value / bound,
        passes: value >= bound && nondeg_value >= bound,
        g_convex,
        measured_lipschitz: measured,
    })
}

/// Per-level flatness measurement.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlatnessLevel {
    pub t: f64,
    pub half_width: f64,
    pub offset: f64,
    pub nu: Vec<f64>,
}

/// Flatness of the front in a ball: `epsilon = half_width / radius`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlatnessReport {
    pub epsilon: f64,
    pub nu: Vec<f64>,
    pub center: Vec<f64>,
    pub radius: f64,
    pub levels: Vec<FlatnessLevel>,
}

/// Unit directions used by the flatness search.
pub fn sample_directions(n: usize, samples: usize) -> Result<Vec<Vec<f64>>> {
    use std::f64::consts::PI;
    match n {
        1 => Ok(vec![vec![1.0], vec![-1.0]]),
        2 => Ok((0..samples)
            .map(|k| {
                let phi = 2.0 * PI * k as f64 / samples as f64;
                vec![phi.cos(), phi.sin()]
            })
            .collect()),
        3 => {
            let polar = ((samples as f64 / 4.0).sqrt().round() as usize).max(2);
            let azimuth = (samples / polar).max(4);
            let mut out = Vec::new();
            for i in 0..polar {
                let th = PI * i as f64 / (polar - 1) as f64;
                let count = if i == 0 || i + 1 == polar { 1 } else { azimuth };
                for j in 0..count {
                    let ph = 2.0 * PI * j as f64 / azimuth as f64;
                    out.push(vec![th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]);
                }
            }
            Ok(out)
        }
        _ => Err(Error::Unsupported(format!(
            "direction sampling in dimension {n}"
        ))),
    }
}

struct LevelData {
    points: Vec<Vec<f64>>,
    zero: Vec<usize>,
    positive: Vec<usize>,
}

impl LevelData {
    fn width(&self, nu: &[f64]) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &self.points {
            let v: f64 = p.iter().zip(nu).map(|(a, b)| a * b).sum();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (0.5 * (hi - lo), 0.5 * (hi + lo))
    }
}

/// Measures the thinnest strip containing the front inside `B_radius(center)`
/// at every stored level, over sampled directions.
///
/// The strip may be offset from the center at each level. A direction is
/// admissible when every masked-out node in the ball lies on the `-nu` side
/// or inside the strip and every masked-in node lies on the `+nu` side or inside.
pub fn measure_flatness(
    front: &FrontGraph,
    field: &SpaceTimeField,
    center: &[f64],
    radius: f64,
    direction_samples: usize,
) -> Result<FlatnessReport> {
    let n = field.dim();
    if center.len() != n || !(radius > 0.0) {
        return Err(invalid(
            "ball center must have n coordinates and positive radius",
        ));
    }
    let dirs = sample_directions(n, direction_samples)?;
    let nodes = ball_nodes(field, center, radius);
    let node_pos: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&i| {
            field
                .grid
                .position_of(i)
                .iter()
                .zip(center)
                .map(|(a, b)| a - b)
                .collect()
        })
        .collect();
    let mut levels = Vec::with_capacity(front.time.levels);
    let tol = 1e-9 * radius;
    for k in 0..front.time.levels {
        let mut points = Vec::new();
        for c in 0..front.ncols() {
            let mut p = front.column_position(c);
            p.push(front.height(k, c));
            let rel: Vec<f64> = p.iter().zip(center).map(|(a, b)| a - b).collect();
            if rel.iter().map(|v| v * v).sum::<f64>() < radius * radius {
                points.push(rel);
            }
        }
        if points.is_empty() {
            return Err(Error::RegionTooSmall(format!(
                "front misses the ball at t = {}",
                front.time.time(k)
            )));
        }
        let mask = field.level_mask(k);
        let mut zero = Vec::new();
        let mut positive = Vec::new();
        for (q, &node) in nodes.iter().enumerate() {
            if mask[node] {
                positive.push(q);
            } else {
                zero.push(q);
            }
        }
        let data = LevelData {
            points,
            zero,
            positive,
        };
        let admissible = |nu: &[f64], half: f64, off: f64| {
            let proj = |q: usize| node_pos[q].iter().zip(nu).map(|(a, b)| a * b).sum::<f64>();
            data.zero.iter().all(|&q| proj(q) <= off + half + tol)
                && data.positive.iter().all(|&q| proj(q) >= off - half - tol)
        };
        let mut ranked: Vec<(f64, f64, usize)> = dirs
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let (w, o) = data.width(d);
                (w, o, i)
            })
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        let found = ranked.iter().find(|&&(w, o, i)| admissible(&dirs[i], w, o));
        let Some(&(mut best_w, mut best_o, i)) = found else {
            return Err(Error::Numerical(format!(
                "no admissible direction at t = {}",
                front.time.time(k)
            )));
        };
        let mut best_nu = dirs[i].clone();
        if n >= 2 {
            let step = if n == 2 {
                2.0 * std::f64::consts::PI / direction_samples as f64
            } else {
                0.2
            };
            if let Some((w, o, nu)) = refine(&data, &best_nu, step, n) {
                if w < best_w && admissible(&nu, w, o) {
                    best_w = w;
                    best_o = o;
                    best_nu = nu;
                }
            }
        }
        levels.push(FlatnessLevel {
            t: front.time.time(k),
            half_width: best_w,
            offset: best_o,
            nu: best_nu,
        });
    }
    let worst = levels
        .iter()
        .enumerate()
        .max_by(|a, b| {
            a.1.half_width
                .total_cmp(&b.1.half_width)
                .then(b.0.cmp(&a.0))
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(FlatnessReport {
        epsilon: levels[worst].half_width / radius,
        nu: levels[worst].nu.clone(),
        center: center.to_vec(),
        radius,
        levels,
    })
}

fn refine(data: &LevelData, nu: &[f64], step: f64, n: usize) -> Option<(f64, f64, Vec<f64>)> {
    if n == 2 {
        let phi0 = nu[1].atan2(nu[0]);
        let dir = |phi: f64| vec![phi.cos(), phi.sin()];
        let (mut a, mut b) = (phi0 - step, phi0 + step);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if data.width(&dir(c)).0 <= data.width(&dir(d)).0 {
                b = d;
            } else {
                a = c;
            }
        }
        let nu = dir(0.5 * (a + b));
        let (w, o) = data.width(&nu);
        return Some((w, o, nu));
    }
    let mut best = nu.to_vec();
    let mut best_w = data.width(&best).0;
    let mut s = step;
    for _ in 0..30 {
        let mut improved = false;
        for axis in 0..n {
            for sign in [-1.0, 1.0] {
                let mut cand = best.clone();
                cand[axis] += sign * s;
                let norm = cand.iter().map(|v| v * v).sum::<f64>().sqrt();
                cand.iter_mut().for_each(|v| *v /= norm);
                let w = data.width(&cand).0;
                if w < best_w {
                    best_w = w;
                    best = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            s *= 0.5;
        }
    }
    let (w, o) = data.width(&best);
    Some((w, o, best))
}

/// Standard bump on `(-1/2, 1/2)` with unit mass, unnormalized shape.
fn bump_shape(r: f64) -> f64 {
    let q = 4.0 * r * r;
    if q >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - q)).exp()
    }
}

fn bump_derivative_shape(r: f64) -> f64 {
    let q = 4.0 * r * r;
    if q >= 1.0 {
        0.0
    } else {
        -bump_shape(r) * 8.0 * r / ((1.0 - q) * (1.0 - q))
    }
}

fn bump_mass() -> f64 {
    let m = 20_000;
    let d = 1.0 / m as f64;
    (0..m)
        .map(|i| bump_shape(-0.5 + (i as f64 + 0.5) * d))
        .sum::<f64>()
        * d
}

/// Derivative mass `c1 = int_{-1/2}^0 k'(r) dr` of the unit-width kernel, by quadrature.
pub fn mollifier_c1() -> f64 {
    let m = 20_000;
    let d = 0.5 / m as f64;
    let s: f64 = (0..m)
        .map(|i| bump_derivative_shape(-0.5 + (i as f64 + 0.5) * d))
        .sum();
    s * d / bump_mass()
}

/// Mollified series and the number of outputs whose window needed reflection.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mollified {
    pub values: Vec<f64>,
    pub edge_levels: usize,
}

/// Convolution with the bump of width `eta^2`, samples spaced `dt`.
///
/// Weights are the kernel sampled at multiples of `dt` and normalized to
/// unit sum. Windows reaching past the ends use even reflection.
pub fn mollify_coefficient(samples: &[f64], dt: f64, eta: f64) -> Result<Mollified> {
    if samples.is_empty() {
        return Err(invalid("no samples to mollify"));
    }
    let width = eta * eta;
    if !(dt > 0.0) || dt > width / 8.0 * (1.0 + 1e-9) {
        return Err(invalid(format!(
            "sample spacing {dt} is not finer than eta^2 / 8 = {}",
            width / 8.0
        )));
    }
    let half = ((0.5 * width / dt) - 1e-9).floor() as isize;
    let mut weights: Vec<f64> = (-half..=half)
        .map(|j| bump_shape(j as f64 * dt / width))
        .collect();
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    let len = samples.len() as isize;
    let reflect = |i: isize| -> usize {
        if len == 1 {
            return 0;
        }
        let period = 2 * (len - 1);
        let mut r = i.rem_euclid(period);
        if r >= len {
            r = period - r;
        }
        r as usize
    };
    let mut edge_levels = 0;
    let values = (0..len)
        .map(|i| {
            if i - half < 0 || i + half >= len {
                edge_levels += 1;
            }
            weights
                .iter()
                .enumerate()
                .map(|(q, w)| w * samples[reflect(i + q as isize - half)])
                .sum()
        })
        .collect();
    Ok(Mollified {
        values,
        edge_levels,
    })
}

/// Trapping-plane fit over the window `[t_end - eta / lambda, t_end]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrappingFit {
    pub times: Vec<f64>,
    pub a_bar: Vec<f64>,
    pub a_bar_smooth: Vec<f64>,
    pub b: Vec<f64>,
    pub b_tilde: Vec<f64>,
    pub alpha0: f64,
    pub gamma: f64,
    pub beta: f64,
    pub eta: f64,
    pub lambda: f64,
    /// Largest defect of the two-sided bound, in units of `eta^{1 + beta}`.
    pub residual: f64,
    /// Largest `|secant of b_tilde + lambda a_bar_smooth(midpoint)|`.
    pub ode_defect: f64,
    pub edge_levels: usize,
}

/// `gamma = alpha0 / (2 + alpha0)` and `beta = gamma / 4`.
pub fn trapping_exponents(alpha0: f64) -> (f64, f64) {
    let gamma = alpha0 / (2.0 + alpha0);
    (gamma, gamma / 4.0)
}

/// Fits `a_bar(t)` on the slab `{|x'| < eta, 0 < x_n - b(t) < eta}`,
/// mollifies it, integrates `b_tilde' = -lambda a_bar_eta` backward from
/// `b_tilde(t_end) = 0`, and measures how well
/// `a_bar (x_n - b_tilde - E)^+ <= u <= a_bar (x_n - b_tilde + E)^+`
/// with `E = eta^{1 + beta}` holds on `B_eta x [t_end - eta / lambda, t_end]`.
pub fn fit_trapping(solution: &SpaceTimeSolution, eta: f64, alpha0: f64) -> Result<TrappingFit> {
    let field = &solution.field;
    let n = field.dim();
    let h = field.grid.h;
    let lambda = solution.scenario.lambda;
    if !(eta >= 4.0 * h * (1.0 - 1e-9)) {
        return Err(invalid(format!("eta = {eta} is below 4h = {}", 4.0 * h)));
    }
    if !(alpha0 > 0.0 && alpha0 <= 1.0) {
        return Err(invalid(format!("alpha0 must lie in (0, 1], got {alpha0}")));
    }
    if !(lambda > 0.0) {
        return Err(invalid("trapping fit needs lambda > 0"));
    }
    let (gamma, beta) = trapping_exponents(alpha0);
    let time = &field.time;
    let b = solution.front.intercepts()?;
    let ns = field.nodes();
    let mut x = vec![0.0; n];
    let positions: Vec<Vec<f64>> = (0..ns)
        .map(|i| {
            field.fill_position(i, &mut x);
            x.clone()
        })
        .collect();
    let lateral: Vec<usize> = (0..ns)
        .filter(|&i| positions[i][..n - 1].iter().map(|v| v * v).sum::<f64>() < eta * eta)
        .collect();
    let mut a_bar = Vec::with_capacity(time.levels);
    for k in 0..time.levels {
        let vals = field.level_values(k);
        let (mut num, mut den, mut count) = (0.0, 0.0, 0usize);
        for &i in &lateral {
            let xi = positions[i][n - 1] - b[k];
            if xi > 0.0 && xi < eta {
                num += vals[i] * xi;
                den += xi * xi;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::RegionTooSmall(format!(
                "empty fitting slab at t = {}",
                time.time(k)
            )));
        }
        if num == 0.0 {
            return Err(Error::Numerical(format!(
                "degenerate fit: slab is identically zero at t = {}",
                time.time(k)
            )));
        }
        a_bar.push(num / den);
    }
    let moll = mollify_coefficient(&a_bar, time.dt, eta)?;
    let smooth = moll.values;
    let last = time.levels - 1;
    let mut b_tilde = vec![0.0; time.levels];
    let dt = time.dt;
    let slope = |k: usize, w: f64| (1.0 - w) * smooth[k] + w * smooth[k + 1];
    for k in (0..last).rev() {
        let k1 = -lambda * slope(k, 1.0);
        let k2 = -lambda * slope(k, 0.5);
        let k3 = k2;
        let k4 = -lambda * slope(k, 0.0);
        b_tilde[k] = b_tilde[k + 1] - dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    let ode_defect = (0..last)
        .map(|k| ((b_tilde[k + 1] - b_tilde[k]) / dt + lambda * slope(k, 0.5)).abs())
        .fold(0.0, f64::max);
    let e = eta.powf(1.0 + beta);
    let t_end = time.t_end();
    let window_start = t_end - eta / lambda;
    let ball: Vec<usize> = (0..ns)
        .filter(|&i| positions[i].iter().map(|v| v * v).sum::<f64>() < eta * eta)
        .collect();
    let mut residual: f64 = 0.0;
    for k in 0..time.levels {
        if time.time(k) < window_start - 1e-12 {
            continue;
        }
        let vals = field.level_values(k);
        let a = smooth[k];
        for &i in &ball {
            let xi = positions[i][n - 1] - b_tilde[k];
            let ratio = vals[i] / a;
            let mut d = (xi - ratio) / e;
            if vals[i] > 0.0 {
                d = d.max((ratio - xi) / e);
            }
            residual = residual.max(d);
        }
    }
    Ok(TrappingFit {
        times: (0..time.levels).map(|k| time.time(k)).collect(),
        a_bar,
        a_bar_smooth: smooth,
        b,
        b_tilde,
        alpha0,
        gamma,
        beta,
        eta,
        lambda,
        residual,
        ode_defect,
        edge_levels: moll.edge_levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::EllipticOperatorSpec;
    use crate::grid::{Grid, TimeAxis};
    use crate::stefan::{RunStats, StefanScenario};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn front_solution(
        n1: usize,
        h: f64,
        levels: usize,
        t0: f64,
        t1: f64,
        s: impl Fn(f64, f64) -> f64,
        u: impl Fn(&[f64], f64) -> f64,
    ) -> SpaceTimeSolution {
        let half = (n1 / 2) as f64 * h;
        let grid = Grid::new(vec![-half, -1.0], vec![n1, (2.0 / h) as usize + 1], h).unwrap();
        let time = TimeAxis::spanning(t0, t1, levels).unwrap();
        let mut field = SpaceTimeField::from_fn(grid.clone(), time.clone(), u);
        for (v, m) in field.values.iter().zip(field.mask.iter_mut()) {
            *m = *v > 0.0;
        }
        let heights = (0..levels)
            .flat_map(|k| {
                (0..n1)
                    .map(|c| s(grid.coord(0, c), time.time(k)))
                    .collect::<Vec<_>>()
            })
            .collect();
        let front = FrontGraph {
            origin: vec![-half],
            shape: vec![n1],
            h,
            time,
            heights,
            orientation: vec![0.0, 1.0],
        };
        let mut scenario = StefanScenario::traveling_wave(2, 0.5, 0.5, 4.0, h);
        scenario.operator = EllipticOperatorSpec::trace();
        SpaceTimeSolution {
            field,
            front,
            scenario,
            stats: RunStats::default(),
        }
    }

    #[test]
    fn constant_mean_and_homogeneity() {
        let grid = Grid::centered(&[0.0, 0.0], 0.5, 1.0 / 32.0, 0).unwrap();
        let time = TimeAxis::spanning(0.0, 0.1, 11).unwrap();
        let f = SpaceTimeField::from_fn(grid.clone(), time.clone(), |_, _| 0.7);
        for p in [0.3, 0.5, 0.9] {
            let v = cylinder_p_mean(&f, &[0.0, 0.0], 0.25, 0.0, 0.05, p).unwrap();
            assert!((v - 0.7).abs() < 1e-12);
        }
        let g = SpaceTimeField::from_fn(grid.clone(), time.clone(), |x, t| 1.0 + x[0] + t);
        let g2 = SpaceTimeField::from_fn(grid, time, |x, t| 2.0 * (1.0 + x[0] + t));
        let a = cylinder_p_mean(&g, &[0.0, 0.0], 0.25, 0.0, 0.05, 0.5).unwrap();
        let b = cylinder_p_mean(&g2, &[0.0, 0.0], 0.25, 0.0, 0.05, 0.5).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn p_mean_matches_monte_carlo() {
        let grid = Grid::centered(&[0.0, 0.5], 0.15, 1.0 / 128.0, 1).unwrap();
        let time = TimeAxis::spanning(0.0, 0.01, 5).unwrap();
        let f = SpaceTimeField::from_fn(grid, time, |x, _| x[1]);
        let v = cylinder_p_mean(&f, &[0.0, 0.5], 0.1, 0.0, 0.01, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut s, mut cnt) = (0.0, 0usize);
        while cnt < 1_000_000 {
            let (a, b): (f64, f64) = (rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
            if a * a + b * b < 0.01 {
                s += (0.5 + b).sqrt();
                cnt += 1;
            }
        }
        let mc = (s / cnt as f64).powi(2);
        println!("grid {v} monte carlo {mc}");
        assert!((v - mc).abs() < 0.005 * mc);
    }

    #[test]
    fn cylinder_outside_domain_is_an_error() {
        let grid = Grid::centered(&[0.0], 0.5, 1.0 / 32.0, 0).unwrap();
        let time = TimeAxis::spanning(0.0, 0.1, 11).unwrap();
        let f = SpaceTimeField::from_fn(grid, time, |_, _| 1.0);
        assert!(cylinder_p_mean(&f, &[0.4], 0.2, 0.0, 0.05, 0.5).is_err());
        assert!(cylinder_p_mean(&f, &[0.0], 0.2, 0.05, 0.2, 0.5).is_err());
    }

    #[test]
    fn pointwise_examples() {
        let spec = NondegSpec::new(0.5, 10.0, 0.0, 0.0).unwrap();
        let grid = Grid::centered(&[0.0, 0.0], 0.5, 1.0 / 16.0, 0).unwrap();
        let time = TimeAxis::spanning(0.0, 0.1, 3).unwrap();
        let thr = spec.pointwise_threshold(1.0);
        let f = SpaceTimeField::from_fn(grid.clone(), time.clone(), move |_, _| thr);
        assert!(
            nondeg_pointwise(&f, &[0.0, 0.0], 0.05, &spec, 1.0, PointwiseMode::FullNorm).unwrap()
        );
        let z = SpaceTimeField::from_fn(grid.clone(), time.clone(), |_, _| 0.0);
        assert!(
            !nondeg_pointwise(&z, &[0.0, 0.0], 0.05, &spec, 1.0, PointwiseMode::FullNorm).unwrap()
        );
        let w = crate::stefan::traveling_wave(0.5, 1.0).unwrap();
        let tw = SpaceTimeField::from_fn(grid, time, move |x, t| w.value(x, t + 1.0));
        assert!(
            nondeg_pointwise(&tw, &[0.0, 0.4], 0.05, &spec, 1.0, PointwiseMode::FullNorm).unwrap()
        );
    }

    #[test]
    fn g_is_convex() {
        for p in [0.3, 0.5, 0.7] {
            assert!(g_convexity(p, 9));
            assert!(g_convexity(p, 999));
        }
    }

    #[test]
    fn lipschitz_constant_field() {
        let spec = NondegSpec::new(0.5, 2.0, 0.0, 0.0).unwrap();
        let lambda = 0.8;
        let c = spec.integral_threshold(lambda);
        let grid = Grid::centered(&[0.0, 0.0], 0.3, 1.0 / 64.0, 1).unwrap();
        let time = TimeAxis::spanning(0.0, 0.05, 6).unwrap();
        let f = SpaceTimeField::from_fn(grid, time, move |_, _| c);
        let rep =
            lipschitz_equivalence_check(&f, 0.0, &spec, lambda, &[0.0, 0.0], 0.0, 0.15).unwrap();
        assert!(rep.applicable && rep.passes);
        assert!((rep.slack - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mollifier_examples() {
        let dt = 1e-4;
        let eta = 0.05;
        let c = mollify_coefficient(&vec![1.7; 200], dt, eta).unwrap();
        assert!(c.values.iter().all(|v| (v - 1.7).abs() < 1e-14));
        let lin: Vec<f64> = (0..200).map(|i| i as f64 * dt).collect();
        let m = mollify_coefficient(&lin, dt, eta).unwrap();
        let half = (0.5 * eta * eta / dt) as usize;
        for i in half..200 - half {
            assert!((m.values[i] - lin[i]).abs() < 1e-10);
        }
        assert!(m.edge_levels > 0);
        let delta = 0.3;
        let fine = 1e-6;
        let step: Vec<f64> = (0..8000)
            .map(|i| if i < 4000 { 0.0 } else { delta })
            .collect();
        let s = mollify_coefficient(&step, fine, eta).unwrap();
        let dmax = s
            .values
            .windows(2)
            .map(|w| (w[1] - w[0]) / fine)
            .fold(0.0, f64::max);
        let expected = mollifier_c1() / (eta * eta) * delta;
        println!("c1 = {}, derivative {dmax} vs {expected}", mollifier_c1());
        assert!((dmax - expected).abs() <= 0.05 * expected);
        assert!(mollify_coefficient(&lin, 1e-3, eta).is_err());
    }

    #[test]
    fn flatness_plane_wavy_tilted() {
        let h = 1.0 / 128.0;
        let plane = front_solution(257, h, 3, 0.0, 0.1, |_, _| 0.0, |x, _| x[1].max(0.0));
        let r = measure_flatness(&plane.front, &plane.field, &[0.0, 0.0], 1.0, 720).unwrap();
        assert!(r.epsilon < 1e-12 && (r.nu[1] - 1.0).abs() < 1e-12, "{r:?}");
        let s = |x: f64| 0.05 * (2.0 * std::f64::consts::PI * x).sin();
        let wavy = front_solution(
            257,
            h,
            2,
            0.0,
            0.1,
            move |x, _| s(x),
            move |x, _| (x[1] - s(x[0])).max(0.0),
        );
        let r = measure_flatness(&wavy.front, &wavy.field, &[0.0, 0.0], 1.0, 720).unwrap();
        println!("wavy eps {} nu {:?}", r.epsilon, r.nu);
        assert!((r.epsilon - 0.05).abs() < 2.0 * h && r.nu[1] > 0.9999);
        let tilted = front_solution(
            257,
            h,
            2,
            0.0,
            0.1,
            |x, _| 0.3 * x,
            |x, _| (x[1] - 0.3 * x[0]).max(0.0),
        );
        let r = measure_flatness(&tilted.front, &tilted.field, &[0.0, 0.0], 1.0, 720).unwrap();
        println!("tilted eps {} nu {:?}", r.epsilon, r.nu);
        assert!(r.epsilon <= 0.01);
        assert!((r.nu[0] + 0.287).abs() < 2e-3 && (r.nu[1] - 0.958).abs() < 2e-3);
    }

    #[test]
    fn trapping_on_moving_plane() {
        let (a0, lambda) = (1.5, 0.5);
        let h = 1.0 / 64.0;
        let b0 = move |t: f64| -lambda * a0 * t;
        let mut sol = front_solution(
            65,
            h,
            401,
            -0.4,
            0.0,
            move |_, t| b0(t),
            move |x, t| a0 * (x[1] - b0(t)).max(0.0),
        );
        sol.scenario.lambda = lambda;
        let fit = fit_trapping(&sol, 0.1, 1.0).unwrap();
        for k in 0..fit.times.len() {
            assert!((fit.a_bar[k] - a0).abs() < 1e-9);
            assert!((fit.b_tilde[k] - b0(fit.times[k])).abs() < 1e-9);
        }
        assert!(fit.residual < 1e-9, "{}", fit.residual);
        assert!(fit.ode_defect < 1e-8);
        let mut shifted = sol.clone();
        shifted.field.time.t0 += 3.0;
        shifted.front.time.t0 += 3.0;
        let g = fit_trapping(&shifted, 0.1, 1.0).unwrap();
        assert_eq!(g.a_bar, fit.a_bar);
        assert_eq!(g.residual.to_bits(), fit.residual.to_bits());
    }
}
