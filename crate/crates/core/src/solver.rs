//! Explicit finite-difference solver for `u_t - F(D^2 u) = f` with Dirichlet data.
//!
//! Balls and annuli are realized as masks over a bounding box. Nodes outside
//! the domain that touch an interior stencil carry the boundary data.

use std::sync::Arc;

use serde::Serialize;

use crate::elliptic::{CompiledOperator, EllipticOperatorSpec};
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, SpaceTimeField, TimeAxis};

pub type SpaceTimeFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
pub type SpaceFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Spatial domain of a Dirichlet problem.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Domain {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Annulus {
        center: Vec<f64>,
        inner: f64,
        outer: f64,
    },
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Ball { center, .. } | Domain::Annulus { center, .. } => center.len(),
        }
    }

    fn center_outer(&self) -> (&[f64], f64) {
        match self {
            Domain::Ball { center, radius } => (center, *radius),
            Domain::Annulus { center, outer, .. } => (center, *outer),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let (c, _) = self.center_outer();
        let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
        match self {
            Domain::Ball { radius, .. } => r2 < radius * radius,
            Domain::Annulus { inner, outer, .. } => r2 > inner * inner && r2 < outer * outer,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Domain::Ball { radius, .. } if !(*radius > 0.0) => {
                Err(invalid("ball radius must be positive"))
            }
            Domain::Annulus { inner, outer, .. } if !(*inner > 0.0 && outer > inner) => {
                Err(invalid("annulus needs 0 < inner < outer"))
            }
            _ => Ok(()),
        }
    }
}

/// Dirichlet problem on `domain x [t_start, t_end]`.
#[derive(Clone)]
pub struct DirichletProblem {
    pub op: EllipticOperatorSpec,
    pub domain: Domain,
    pub t_start: f64,
    pub t_end: f64,
    pub h: f64,
    pub initial: SpaceFn,
    pub boundary: SpaceTimeFn,
    pub source: SpaceTimeFn,
    /// Number of stored time levels, including both ends.
    pub stored_levels: usize,
    /// Reject data whose initial and boundary values disagree at boundary nodes.
    pub check_compatibility: bool,
}

impl DirichletProblem {
    pub fn new(op: EllipticOperatorSpec, domain: Domain, t_start: f64, t_end: f64, h: f64) -> Self {
        Self {
            op,
            domain,
            t_start,
            t_end,
            h,
            initial: Arc::new(|_| 0.0),
            boundary: Arc::new(|_, _| 0.0),
            source: Arc::new(|_, _| 0.0),
            stored_levels: 9,
            check_compatibility: true,
        }
    }

    pub fn with_initial(mut self, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.initial = Arc::new(f);
        self
    }

    pub fn with_boundary(mut self, f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        self.boundary = Arc::new(f);
        self
    }

    pub fn with_source(mut self, f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        self.source = Arc::new(f);
        self
    }

    pub fn with_levels(mut self, levels: usize) -> Self {
        self.stored_levels = levels;
        self
    }

    pub fn allow_corner_mismatch(mut self) -> Self {
        self.check_compatibility = false;
        self
    }

    /// Largest stable step `h^2 / (4 n K)`.
    pub fn max_time_step(&self) -> f64 {
        self.h * self.h / (4.0 * self.domain.dim() as f64 * self.op.k)
    }

    /// Number of steps and the step actually used, aligned with the stored levels.
    pub fn schedule(&self) -> (usize, f64) {
        let span = self.t_end - self.t_start;
        let segments = self.stored_levels.max(2) - 1;
        let raw = (span / self.max_time_step() - 1e-9).ceil().max(1.0) as usize;
        let steps = raw.div_ceil(segments) * segments;
        (steps, span / steps as f64)
    }
}

/// Runs the explicit scheme and returns the stored levels.
///
/// The returned mask marks interior and boundary nodes; values elsewhere are zero.
pub fn solve_dirichlet(problem: &DirichletProblem) -> Result<SpaceTimeField> {
    problem.domain.validate()?;
    let n = problem.domain.dim();
    if !(problem.h > 0.0) {
        return Err(invalid("grid spacing must be positive"));
    }
    if !(problem.t_end > problem.t_start) {
        return Err(invalid("t_end must exceed t_start"));
    }
    let op = problem.op.compile(n)?;
    let (center, outer) = problem.domain.center_outer();
    let grid = Grid::centered(center, outer, problem.h, 1)?;
    let levels = problem.stored_levels.max(2);
    let time = TimeAxis::spanning(problem.t_start, problem.t_end, levels)?;
    let (steps, dt) = problem.schedule();
    let every = steps / (levels - 1);

    let ns = grid.len();
    let strides = grid.strides();
    let mut inside = vec![false; ns];
    let mut x = vec![0.0; n];
    let mut field = SpaceTimeField::zeros(grid, time);
    for node in 0..ns {
        field.fill_position(node, &mut x);
        inside[node] = problem.domain.contains(&x);
    }
    let offsets = neighbor_offsets(&strides);
    let mut is_boundary = vec![false; ns];
    for node in 0..ns {
        if inside[node] {
            for &o in &offsets {
                let nb = (node as isize + o) as usize;
                if !inside[nb] {
                    is_boundary[nb] = true;
                }
            }
        }
    }
    let interior: Vec<usize> = (0..ns).filter(|&i| inside[i]).collect();
    let boundary: Vec<usize> = (0..ns).filter(|&i| is_boundary[i]).collect();
    let positions: Vec<Vec<f64>> = (0..ns).map(|i| field.grid.position_of(i)).collect();

    let mut u = vec![0.0; ns];
    let t0 = problem.t_start;
    for &i in &interior {
        u[i] = (problem.initial)(&positions[i]);
    }
    for &i in &boundary {
        let g = (problem.boundary)(&positions[i], t0);
        if problem.check_compatibility {
            let u0 = (problem.initial)(&positions[i]);
            if (u0 - g).abs() > 1e-8 * (1.0 + g.abs()) {
                return Err(invalid(format!(
                    "incompatible data at the initial corner: initial {u0} vs boundary {g} at {:?}",
                    positions[i]
                )));
            }
        }
        u[i] = g;
    }
    let store = |field: &mut SpaceTimeField, level: usize, u: &[f64]| {
        let base = level * ns;
        for &i in interior.iter().chain(&boundary) {
            field.values[base + i] = u[i];
            field.mask[base + i] = true;
        }
    };
    store(&mut field, 0, &u);

    let h2 = problem.h * problem.h;
    let mut next = u.clone();
    let mut hess = vec![0.0; n * n];
    let blow_up = 1e12 * (1.0 + u.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    for step in 1..=steps {
        let t = t0 + (step - 1) as f64 * dt;
        for &i in &interior {
            let lap = apply_operator(&op, &u, i, &strides, h2, &mut hess);
            next[i] = u[i] + dt * (lap + (problem.source)(&positions[i], t));
        }
        let t_new = t0 + step as f64 * dt;
        for &i in &boundary {
            next[i] = (problem.boundary)(&positions[i], t_new);
        }
        std::mem::swap(&mut u, &mut next);
        if step % every == 0 {
            if interior
                .iter()
                .any(|&i| !u[i].is_finite() || u[i].abs() > blow_up)
            {
                return Err(Error::BlowUp(format!("at t = {t_new}")));
            }
            store(&mut field, step / every, &u);
        }
    }
    Ok(field)
}

/// Outcome of [`comparison_check`].
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    /// `min (u2 - u1)` over every stored level and node of the closed domain.
    pub min_difference: f64,
    /// Level and position of the minimum.
    pub argmin: (usize, Vec<f64>),
    pub tol: f64,
    pub passes: bool,
}

pub const COMPARISON_TOL: f64 = 1e-8;

/// Solves both problems and reports `min (u2 - u1)`; the caller supplies
/// data and sources ordered as `p1 <= p2`.
pub fn comparison_check(p1: &DirichletProblem, p2: &DirichletProblem) -> Result<ComparisonReport> {
    if p1.op != p2.op
        || p1.domain != p2.domain
        || p1.h != p2.h
        || p1.t_start != p2.t_start
        || p1.t_end != p2.t_end
        || p1.stored_levels != p2.stored_levels
    {
        return Err(invalid(
            "comparison needs the same operator, domain, spacing, time span and stored levels",
        ));
    }
    let (u1, u2) = (solve_dirichlet(p1)?, solve_dirichlet(p2)?);
    let ns = u1.nodes();
    let mut min_difference = f64::INFINITY;
    let mut arg = (0, 0);
    for k in 0..u1.time.levels {
        for node in 0..ns {
            if u1.masked(k, node) {
                let d = u2.value(k, node) - u1.value(k, node);
                if d < min_difference {
                    min_difference = d;
                    arg = (k, node);
                }
            }
        }
    }
    Ok(ComparisonReport {
        min_difference,
        argmin: (arg.0, u1.grid.position_of(arg.1)),
        tol: COMPARISON_TOL,
        passes: min_difference >= -COMPARISON_TOL,
    })
}

/// Linear offsets to all `3^n - 1` neighbors.
pub(crate) fn neighbor_offsets(strides: &[usize]) -> Vec<isize> {
    let n = strides.len();
    let mut out = Vec::new();
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let mut off = 0isize;
        for s in strides.iter().rev() {
            off += (c % 3) as isize * *s as isize - *s as isize;
            c /= 3;
        }
        if off != 0 {
            out.push(off);
        }
    }
    out
}

/// `F(D^2 u)` at node `i` from the centered stencil.
#[inline]
pub(crate) fn apply_operator(
    op: &CompiledOperator,
    u: &[f64],
    i: usize,
    strides: &[usize],
    h2: f64,
    hess: &mut [f64],
) -> f64 {
    let n = strides.len();
    let c = u[i];
    if op.is_trace() {
        let mut s = 0.0;
        for &st in strides {
            s += u[i + st] - 2.0 * c + u[i - st];
        }
        return s / h2;
    }
    for a in 0..n {
        let sa = strides[a];
        hess[a * n + a] = (u[i + sa] - 2.0 * c + u[i - sa]) / h2;
        for b in 0..a {
            let sb = strides[b];
            let v =
                (u[i + sa + sb] - u[i + sa - sb] - u[i - sa + sb] + u[i - sa - sb]) / (4.0 * h2);
            hess[a * n + b] = v;
            hess[b * n + a] = v;
        }
    }
    op.eval(hess)
}

/// `min u(x,t) / dist(x, boundary of the ball)` over nodes at distance at
/// least `2h` from the sphere and stored times in `[t_lo, t_hi]`.
pub fn hopf_lower_bound(
    field: &SpaceTimeField,
    center: &[f64],
    radius: f64,
    t_lo: f64,
    t_hi: f64,
) -> Result<f64> {
    let h = field.grid.h;
    let mut best = f64::INFINITY;
    let ns = field.nodes();
    let mut x = vec![0.0; field.dim()];
    for k in 0..field.time.levels {
        let t = field.time.time(k);
        if t < t_lo - 1e-12 || t > t_hi + 1e-12 {
            continue;
        }
        for node in 0..ns {
            if !field.masked(k, node) {
                continue;
            }
            field.fill_position(node, &mut x);
            let r: f64 = x
                .iter()
                .zip(center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let dist = radius - r;
            if dist < 2.0 * h {
                continue;
            }
            best = best.min(field.value(k, node) / dist);
        }
    }
    if best.is_infinite() {
        return Err(Error::RegionTooSmall(
            "no nodes at distance >= 2h inside the ball in the time window".into(),
        ));
    }
    Ok(best)
}

/// Weak Harnack ratio
/// `(mean over B_r x (r^2, 2r^2) of u^p)^{1/p} / (inf over B_r x (3r^2, 4r^2) of u + r^2 f_bound)`
/// with times measured from the start of the field and the ball centered at `center`.
pub fn weak_harnack_check(
    field: &SpaceTimeField,
    center: &[f64],
    r: f64,
    p0: f64,
    f_bound: f64,
) -> Result<f64> {
    let t0 = field.time.t0;
    let lower =
        crate::geometry::cylinder_p_mean(field, center, r, t0 + r * r, t0 + 2.0 * r * r, p0)?;
    let mut inf = f64::INFINITY;
    let ns = field.nodes();
    let mut x = vec![0.0; field.dim()];
    for k in 0..field.time.levels {
        let t = field.time.time(k);
        if t < t0 + 3.0 * r * r - 1e-12 || t > t0 + 4.0 * r * r + 1e-12 {
            continue;
        }
        for node in 0..ns {
            field.fill_position(node, &mut x);
            let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < r * r {
                inf = inf.min(field.value(k, node));
            }
        }
    }
    if inf.is_infinite() {
        return Err(Error::RegionTooSmall(
            "upper cylinder contains no stored nodes".into(),
        ));
    }
    let denom = inf + r * r * f_bound;
    if denom <= 0.0 {
        return Ok(if lower > 0.0 { f64::INFINITY } else { 0.0 });
    }
    Ok(lower / denom)
}

/// Outcome of the annulus growth experiment.
#[derive(Clone, Debug, Serialize)]
pub struct GrowthBound {
    /// Largest slope `u / (|x| - 1)` over the first node layer outside the unit sphere.
    pub slope: f64,
    /// Largest ratio `u / (|x| - 1)` over all interior nodes.
    pub max_ratio: f64,
    /// Whether `u <= slope (|x| - 1)` holds on every node in the window.
    pub certified: bool,
    pub window: (f64, f64),
}

/// Solves on the annulus `B_2 \ B_1` with zero data on the inner sphere and
/// `k_data` on the outer sphere and at the initial time, over
/// `(-1/K, 0]` with `K = max(k_data, op.K, 1)`, and measures the growth off
/// the inner sphere in the second half of the window.
pub fn growth_bound_certify(
    op: &EllipticOperatorSpec,
    n: usize,
    k_data: f64,
    lambda: f64,
    f_bound: f64,
    h: f64,
) -> Result<GrowthBound> {
    if k_data < 0.0 {
        return Err(invalid("data bound must be nonnegative"));
    }
    let kw = k_data.max(op.k).max(1.0);
    let t_start = -1.0 / kw;
    let domain = Domain::Annulus {
        center: vec![0.0; n],
        inner: 1.0,
        outer: 2.0,
    };
    let problem = DirichletProblem::new(op.clone(), domain, t_start, 0.0, h)
        .with_initial(move |_| k_data)
        .with_boundary(move |x, _| {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r < 1.5 {
                0.0
            } else {
                k_data
            }
        })
        .with_source(move |_, _| lambda * f_bound)
        .with_levels(33)
        .allow_corner_mismatch();
    let field = solve_dirichlet(&problem)?;
    let window = (-0.5 / kw, 0.0);
    let ns = field.nodes();
    let mut x = vec![0.0; n];
    let mut slope: f64 = 0.0;
    let mut max_ratio: f64 = 0.0;
    let mut samples = Vec::new();
    for k in 0..field.time.levels {
        let t = field.time.time(k);
        if t < window.0 - 1e-12 {
            continue;
        }
        for node in 0..ns {
            field.fill_position(node, &mut x);
            if !problem.domain.contains(&x) {
                continue;
            }
            let d = x.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0;
            let ratio = field.value(k, node) / d;
            if d <= 1.5 * h {
                slope = slope.max(ratio);
            }
            max_ratio = max_ratio.max(ratio);
            samples.push((d, field.value(k, node)));
        }
    }
    let certified = samples.iter().all(|&(d, v)| v <= slope * d + 1e-12);
    Ok(GrowthBound {
        slope,
        max_ratio,
        certified,
        window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_error(
        field: &SpaceTimeField,
        exact: impl Fn(&[f64], f64) -> f64,
        domain: &Domain,
    ) -> f64 {
        let mut e: f64 = 0.0;
        for k in 0..field.time.levels {
            let t = field.time.time(k);
            for node in 0..field.nodes() {
                let x = field.grid.position_of(node);
                if domain.contains(&x) {
                    e = e.max((field.value(k, node) - exact(&x, t)).abs());
                }
            }
        }
        e
    }

    #[test]
    fn heat_quadratic_is_reproduced() {
        let exact = |x: &[f64], t: f64| x.iter().map(|v| v * v).sum::<f64>() + 4.0 * t;
        let domain = Domain::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        let p = DirichletProblem::new(
            EllipticOperatorSpec::trace(),
            domain.clone(),
            0.0,
            0.1,
            1.0 / 16.0,
        )
        .with_initial(move |x| exact(x, 0.0))
        .with_boundary(exact);
        let f = solve_dirichlet(&p).unwrap();
        let e = max_error(&f, exact, &domain);
        assert!(e < 1e-11, "error {e}");
    }

    #[test]
    fn zero_data_stays_zero() {
        let domain = Domain::Ball {
            center: vec![0.0],
            radius: 1.0,
        };
        let p = DirichletProblem::new(
            EllipticOperatorSpec::pucci_minus(2.0),
            domain,
            0.0,
            0.2,
            1.0 / 32.0,
        );
        let f = solve_dirichlet(&p).unwrap();
        assert_eq!(f.sup_norm(), 0.0);
    }

    #[test]
    fn incompatible_corner_rejected() {
        let domain = Domain::Ball {
            center: vec![0.0],
            radius: 1.0,
        };
        let p = DirichletProblem::new(EllipticOperatorSpec::trace(), domain, 0.0, 0.2, 1.0 / 16.0)
            .with_initial(|_| 1.0);
        assert!(solve_dirichlet(&p).is_err());
    }

    #[test]
    fn step_respects_stability_bound() {
        let domain = Domain::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        let p = DirichletProblem::new(
            EllipticOperatorSpec::pucci_plus(3.0),
            domain,
            0.0,
            0.05,
            1.0 / 32.0,
        );
        let (_, dt) = p.schedule();
        assert!(dt <= p.max_time_step() * (1.0 + 1e-12));
    }

    #[test]
    fn smooth_solution_converges_second_order() {
        let err = |h: f64| {
            let exact = |x: &[f64], t: f64| x[0].sin() * x[1].sin() * (-2.0 * t).exp();
            let domain = Domain::Ball {
                center: vec![0.3, 0.2],
                radius: 1.0,
            };
            let p =
                DirichletProblem::new(EllipticOperatorSpec::trace(), domain.clone(), 0.0, 0.1, h)
                    .with_initial(move |x| exact(x, 0.0))
                    .with_boundary(exact);
            max_error(&solve_dirichlet(&p).unwrap(), exact, &domain)
        };
        let (a, b) = (err(1.0 / 16.0), err(1.0 / 32.0));
        println!("errors {a:e} {b:e} ratio {}", a / b);
        assert!(a / b >= 3.0);
    }

    fn smooth_problem(op: EllipticOperatorSpec, shift: f64, source: f64) -> DirichletProblem {
        let g = move |x: &[f64], t: f64| {
            (2.0 * x[0]).sin() * x[1] + 0.3 * x[1] * x[1] + shift + t * (0.5 + shift)
        };
        let domain = Domain::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        DirichletProblem::new(op, domain, 0.0, 0.1, 1.0 / 16.0)
            .with_initial(move |x| g(x, 0.0))
            .with_boundary(g)
            .with_source(move |_, _| source)
    }

    #[test]
    fn comparison_examples() {
        for op in [
            EllipticOperatorSpec::trace(),
            EllipticOperatorSpec::pucci_plus(2.0),
            EllipticOperatorSpec::pucci_minus(2.0),
        ] {
            let same = comparison_check(
                &smooth_problem(op.clone(), 0.0, 0.0),
                &smooth_problem(op.clone(), 0.0, 0.0),
            )
            .unwrap();
            assert_eq!(same.min_difference, 0.0);
            assert!(same.passes);
            let p1 = smooth_problem(op.clone(), 0.0, 0.0);
            let (init, b) = (p1.initial.clone(), p1.boundary.clone());
            let p2 = p1
                .clone()
                .with_initial(move |x| init(x) + 1.0)
                .with_boundary(move |x, t| b(x, t) + 1.0);
            let shifted = comparison_check(&p1, &p2).unwrap();
            assert!(shifted.min_difference >= 1.0 - 1e-8, "{shifted:?}");
        }
        let a = smooth_problem(EllipticOperatorSpec::trace(), 0.0, 0.0);
        let mut b = a.clone();
        b.h = 1.0 / 32.0;
        assert!(comparison_check(&a, &b).is_err());
    }

    #[test]
    fn source_gap_accumulates_at_most_linearly() {
        let s = 0.7;
        for op in [
            EllipticOperatorSpec::trace(),
            EllipticOperatorSpec::pucci_minus(3.0),
        ] {
            let p1 = smooth_problem(op.clone(), 0.0, 0.0);
            let p2 = p1.clone().with_source(move |_, _| s);
            let (u1, u2) = (solve_dirichlet(&p1).unwrap(), solve_dirichlet(&p2).unwrap());
            let gap = u1
                .values
                .iter()
                .zip(&u2.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(gap <= s * (p1.t_end - p1.t_start) + 1e-8, "{gap}");
            assert!(gap > 0.0);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]
        #[test]
        fn ordered_data_give_ordered_solutions(shift in 0.0f64..0.5, ds in 0.0f64..1.0, k in 1.0f64..4.0, plus in proptest::bool::ANY) {
            let op = if plus { EllipticOperatorSpec::pucci_plus(k) } else { EllipticOperatorSpec::pucci_minus(k) };
            let r = comparison_check(&smooth_problem(op.clone(), 0.0, 0.0), &smooth_problem(op, shift, ds)).unwrap();
            proptest::prop_assert!(r.passes, "{:?}", r);
        }
    }

    #[test]
    fn hopf_bound_examples() {
        let grid = Grid::centered(&[0.0, 0.0], 1.0, 1.0 / 64.0, 1).unwrap();
        let time = TimeAxis::spanning(0.0, 1.0, 3).unwrap();
        let cone = SpaceTimeField::from_fn(grid.clone(), time.clone(), |x, _| {
            1.0 - (x[0] * x[0] + x[1] * x[1]).sqrt()
        });
        let mu = hopf_lower_bound(&cone, &[0.0, 0.0], 1.0, 0.5, 1.0).unwrap();
        assert!((mu - 1.0).abs() < 1e-12);
        let para = SpaceTimeField::from_fn(grid.clone(), time.clone(), |x, _| {
            1.0 - x[0] * x[0] - x[1] * x[1]
        });
        let mu = hopf_lower_bound(&para, &[0.0, 0.0], 1.0, 0.5, 1.0).unwrap();
        assert!((mu - 1.0).abs() < 1e-12, "{mu}");
        let zero = SpaceTimeField::from_fn(grid, time, |_, _| 0.0);
        assert_eq!(
            hopf_lower_bound(&zero, &[0.0, 0.0], 1.0, 0.0, 1.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn weak_harnack_examples() {
        let heat = |x: &[f64], t: f64| {
            let s = t + 0.05;
            (-x[0] * x[0] / (4.0 * s)).exp() / (4.0 * std::f64::consts::PI * s).sqrt()
        };
        let ratio = |h: f64| {
            let grid = Grid::centered(&[0.0], 1.0, h, 0).unwrap();
            let time = TimeAxis::spanning(0.0, 0.2, 161).unwrap();
            let f = SpaceTimeField::from_fn(grid, time, heat);
            weak_harnack_check(&f, &[0.0], 0.2, 0.5, 0.0).unwrap()
        };
        let (a, b) = (ratio(1.0 / 64.0), ratio(1.0 / 128.0));
        assert!(a.is_finite() && a > 0.0);
        assert!((a - b).abs() < 0.05 * b, "{a} {b}");
        let grid = Grid::centered(&[0.0], 1.0, 1.0 / 64.0, 0).unwrap();
        let time = TimeAxis::spanning(0.0, 0.2, 161).unwrap();
        let kink = SpaceTimeField::from_fn(grid, time, |x, _| x[0].max(0.0));
        assert!(weak_harnack_check(&kink, &[0.0], 0.2, 0.5, 0.0)
            .unwrap()
            .is_infinite());
    }

    #[test]
    fn growth_examples() {
        let g = growth_bound_certify(
            &EllipticOperatorSpec::trace(),
            1,
            1.0,
            0.5,
            0.0,
            1.0 / 128.0,
        )
        .unwrap();
        println!("{g:?}");
        assert!(g.slope >= 1.0 && g.slope <= 1.2, "{g:?}");
        assert!(g.certified);
        let z = growth_bound_certify(&EllipticOperatorSpec::trace(), 1, 0.0, 0.5, 0.0, 1.0 / 64.0)
            .unwrap();
        assert_eq!(z.slope, 0.0);
        let sink = growth_bound_certify(
            &EllipticOperatorSpec::trace(),
            1,
            1.0,
            0.5,
            -0.1,
            1.0 / 128.0,
        )
        .unwrap();
        assert!(sink.slope <= g.slope);
    }
}
