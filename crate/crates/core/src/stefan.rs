//! One-phase Stefan problem with a tracked graph front.
//!
//! The positivity set is `{x_n > s(x', t)}`. Each grid column carries the
//! front height `s`; near the front the column profile is the quadratic
//! through `(s, 0)` and the first two nodes at least `h/2` above it. That
//! quadratic supplies ghost values for the stencil, the values of nodes
//! closer than `h/2` to the front, and the normal derivative `u_n`.
//!
//! Lateral sides of the box are reflecting, the top row carries Dirichlet
//! data, and the bottom row must stay in the zero phase.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::elliptic::{CompiledOperator, EllipticOperatorSpec};
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, SpaceTimeField, TimeAxis};
use crate::solver::apply_operator;

/// Closed-form traveling wave `u = lambda^{-1} (exp(c (x_n + c t)) - 1)^+`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TravelingWave {
    pub c: f64,
    pub lambda: f64,
}

pub fn traveling_wave(c: f64, lambda: f64) -> Result<TravelingWave> {
    if !(c > 0.0) {
        return Err(invalid(format!("wave speed must be positive, got {c}")));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(invalid(format!("lambda must lie in (0, 1], got {lambda}")));
    }
    Ok(TravelingWave { c, lambda })
}

impl TravelingWave {
    fn phase(&self, x: &[f64], t: f64) -> f64 {
        x[x.len() - 1] + self.c * t
    }

    /// Smooth extension `lambda^{-1} (exp(c xi) - 1)`, negative below the front.
    pub fn smooth(&self, x: &[f64], t: f64) -> f64 {
        (self.c * self.phase(x, t)).exp_m1() / self.lambda
    }

    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        self.smooth(x, t).max(0.0)
    }

    /// Gradient of the smooth extension.
    pub fn gradient(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        g[x.len() - 1] = self.c * (self.c * self.phase(x, t)).exp() / self.lambda;
        g
    }

    /// Time derivative of the smooth extension.
    pub fn time_derivative(&self, x: &[f64], t: f64) -> f64 {
        self.c * self.c * (self.c * self.phase(x, t)).exp() / self.lambda
    }

    /// `u_{nn}`, the only nonzero Hessian entry.
    pub fn second_derivative(&self, x: &[f64], t: f64) -> f64 {
        self.time_derivative(x, t)
    }

    pub fn front(&self, t: f64) -> f64 {
        -self.c * t
    }
}

/// Initial temperature and front.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// Traveling wave of speed `c` at `t_start`, multiplied by `scale`.
    TravelingWave {
        c: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `slope (x_n - s0(x'))^+` with `s0 = height + tilt . x'`.
    Plane {
        slope: f64,
        height: f64,
        #[serde(default)]
        tilt: Vec<f64>,
    },
    /// `slope (x_n - s0(x'))^+` with `s0 = height + amplitude sum_d cos(2 pi k x'_d)`.
    Wavy {
        slope: f64,
        height: f64,
        amplitude: f64,
        wavenumber: f64,
    },
    /// Zero temperature with the front at `height`.
    Zero { height: f64 },
}

fn one() -> f64 {
    1.0
}

/// Dirichlet data on the top row of the box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopBoundary {
    /// Initial data held fixed in time.
    HoldInitial,
    /// Exact traveling-wave values; requires traveling-wave initial data.
    TravelingWave,
    Value {
        value: f64,
    },
}

/// Source `f`; the equation uses `lambda f(lambda x, lambda^2 t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    Constant {
        value: f64,
    },
    /// `amplitude sin(k y_1) cos(k s)`.
    Sinusoid {
        amplitude: f64,
        wavenumber: f64,
    },
}

impl Source {
    pub fn eval(&self, y: &[f64], s: f64) -> f64 {
        match self {
            Source::Constant { value } => *value,
            Source::Sinusoid {
                amplitude,
                wavenumber,
            } => amplitude * (wavenumber * y[0]).sin() * (wavenumber * s).cos(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            Source::Constant { value } => value.abs(),
            Source::Sinusoid { amplitude, .. } => amplitude.abs(),
        }
    }

    pub fn negative_part_norm(&self) -> f64 {
        match self {
            Source::Constant { value } => (-value).max(0.0),
            Source::Sinusoid { amplitude, .. } => amplitude.abs(),
        }
    }
}

/// Complete description of a Stefan run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StefanScenario {
    pub n: usize,
    pub operator: EllipticOperatorSpec,
    pub lambda: f64,
    /// Bound `0 <= u <= K`; also sets the default window `(-(K lambda)^{-1}, 0]`.
    #[serde(rename = "K")]
    pub k: f64,
    pub source: Source,
    pub initial: InitialData,
    pub top: TopBoundary,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub h: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// Largest spacing between stored time levels.
    pub store_dt: f64,
}

impl StefanScenario {
    /// Traveling wave in the box `[-7/8, 7/8]^{n-1} x [-1/8, 7/8]` over `(-(K lambda)^{-1}, 0]`.
    pub fn traveling_wave(n: usize, c: f64, lambda: f64, k: f64, h: f64) -> Self {
        let mut lower = vec![-0.875; n];
        let mut upper = vec![0.875; n];
        lower[n - 1] = -0.125;
        upper[n - 1] = 0.875;
        Self {
            n,
            operator: EllipticOperatorSpec::trace(),
            lambda,
            k,
            source: Source::Constant { value: 0.0 },
            initial: InitialData::TravelingWave { c, scale: 1.0 },
            top: TopBoundary::TravelingWave,
            lower,
            upper,
            h,
            t_start: -1.0 / (k * lambda),
            t_end: 0.0,
            store_dt: h * h * 16.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 || self.lower.len() != n || self.upper.len() != n {
            return Err(invalid("box corners must have n coordinates"));
        }
        self.operator.validate(n)?;
        if !(self.lambda >= 0.0 && self.lambda <= 1.0) {
            return Err(invalid(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(self.k > 1.0) {
            return Err(invalid(format!("K must exceed 1, got {}", self.k)));
        }
        if !(self.h > 0.0) || !(self.t_end > self.t_start) || !(self.store_dt > 0.0) {
            return Err(invalid("need h > 0, t_end > t_start and store_dt > 0"));
        }
        match &self.initial {
            InitialData::TravelingWave { c, scale } => {
                if !(*c > 0.0 && *scale >= 0.0 && self.lambda > 0.0) {
                    return Err(invalid(
                        "traveling-wave data needs c > 0, scale >= 0 and lambda > 0",
                    ));
                }
            }
            InitialData::Plane { slope, tilt, .. } => {
                if *slope < 0.0 || !(tilt.is_empty() || tilt.len() == n - 1) {
                    return Err(invalid(
                        "plane data needs slope >= 0 and n - 1 tilt entries",
                    ));
                }
            }
            InitialData::Wavy { slope, .. } if *slope < 0.0 => {
                return Err(invalid("slope must be >= 0"))
            }
            _ => {}
        }
        if matches!(self.top, TopBoundary::TravelingWave)
            && !matches!(self.initial, InitialData::TravelingWave { .. })
        {
            return Err(invalid(
                "traveling-wave top data requires traveling-wave initial data",
            ));
        }
        Ok(())
    }

    pub fn wave(&self) -> Option<TravelingWave> {
        match self.initial {
            InitialData::TravelingWave { c, .. } => Some(TravelingWave {
                c,
                lambda: self.lambda,
            }),
            _ => None,
        }
    }

    /// Initial front height over `x'`.
    pub fn initial_front(&self, xp: &[f64]) -> f64 {
        match &self.initial {
            InitialData::TravelingWave { c, .. } => -c * self.t_start,
            InitialData::Plane { height, tilt, .. } => {
                height + tilt.iter().zip(xp).map(|(a, b)| a * b).sum::<f64>()
            }
            InitialData::Wavy {
                height,
                amplitude,
                wavenumber,
                ..
            } => {
                height
                    + amplitude
                        * xp.iter()
                            .map(|v| (2.0 * std::f64::consts::PI * wavenumber * v).cos())
                            .sum::<f64>()
            }
            InitialData::Zero { height } => *height,
        }
    }

    pub fn initial_value(&self, x: &[f64]) -> f64 {
        let n = self.n;
        match &self.initial {
            InitialData::TravelingWave { c, scale } => {
                scale
                    * TravelingWave {
                        c: *c,
                        lambda: self.lambda,
                    }
                    .value(x, self.t_start)
            }
            InitialData::Plane { slope, .. } | InitialData::Wavy { slope, .. } => {
                slope * (x[n - 1] - self.initial_front(&x[..n - 1])).max(0.0)
            }
            InitialData::Zero { .. } => 0.0,
        }
    }

    pub fn top_value(&self, x: &[f64], t: f64) -> f64 {
        match &self.top {
            TopBoundary::HoldInitial => self.initial_value(x),
            TopBoundary::TravelingWave => match &self.initial {
                InitialData::TravelingWave { c, scale } => {
                    scale
                        * TravelingWave {
                            c: *c,
                            lambda: self.lambda,
                        }
                        .value(x, t)
                }
                _ => 0.0,
            },
            TopBoundary::Value { value } => *value,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::spanning(&self.lower, &self.upper, self.h)
    }

    /// Number of steps, step size and number of steps per stored level.
    pub fn schedule(&self) -> (usize, f64, usize) {
        let span = self.t_end - self.t_start;
        let dt_max = self.h * self.h / (4.0 * self.n as f64 * self.operator.k);
        let segments = ((span / self.store_dt) - 1e-9).ceil().max(1.0) as usize;
        let raw = (span / dt_max - 1e-9).ceil().max(1.0) as usize;
        let per = raw.div_ceil(segments);
        (per * segments, span / (per * segments) as f64, per)
    }
}

/// Front heights over the `x'` grid at every stored level.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontGraph {
    pub origin: Vec<f64>,
    pub shape: Vec<usize>,
    pub h: f64,
    pub time: TimeAxis,
    pub heights: Vec<f64>,
    /// Direction in which `u` is positive; `e_n`.
    pub orientation: Vec<f64>,
}

impl FrontGraph {
    pub fn ncols(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn column_position(&self, mut c: usize) -> Vec<f64> {
        let m = self.shape.len();
        let mut x = vec![0.0; m];
        for d in (0..m).rev() {
            x[d] = self.origin[d] + (c % self.shape[d]) as f64 * self.h;
            c /= self.shape[d];
        }
        x
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let m = self.ncols();
        &self.heights[k * m..(k + 1) * m]
    }

    pub fn height(&self, k: usize, c: usize) -> f64 {
        self.heights[k * self.ncols() + c]
    }

    /// Multilinear interpolation of the front at `x'` on level `k`.
    pub fn height_at(&self, k: usize, xp: &[f64]) -> Result<f64> {
        let m = self.shape.len();
        let level = self.level(k);
        if m == 0 {
            return Ok(level[0]);
        }
        let mut base = vec![0usize; m];
        let mut frac = vec![0.0; m];
        for d in 0..m {
            let r = (xp[d] - self.origin[d]) / self.h;
            if r < -1e-9 || r > (self.shape[d] - 1) as f64 + 1e-9 {
                return Err(invalid(format!("x' = {xp:?} outside the front grid")));
            }
            let i = (r.floor().max(0.0) as usize).min(self.shape[d].saturating_sub(2));
            base[d] = i;
            frac[d] = if self.shape[d] == 1 {
                0.0
            } else {
                (r - i as f64).clamp(0.0, 1.0)
            };
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << m) {
            let mut w = 1.0;
            let mut lin = 0;
            for d in 0..m {
                let bit = (corner >> d) & 1;
                let i = (base[d] + bit).min(self.shape[d] - 1);
                w *= if bit == 1 { frac[d] } else { 1.0 - frac[d] };
                lin = lin * self.shape[d] + i;
            }
            if w != 0.0 {
                acc += w * level[lin];
            }
        }
        Ok(acc)
    }

    /// `b(t) = s(0, t)` on every stored level.
    pub fn intercepts(&self) -> Result<Vec<f64>> {
        let zero = vec![0.0; self.shape.len()];
        (0..self.time.levels)
            .map(|k| self.height_at(k, &zero))
            .collect()
    }
}

/// Measured quantities of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: usize,
    pub dt: f64,
    /// `dt / (h^2 / (4 n K))`.
    pub parabolic_cfl: f64,
    /// Largest `dt |s'| / h`.
    pub front_cfl: f64,
    /// Smallest value before clipping.
    pub min_before_clip: f64,
    pub max_value: f64,
    pub wall_time_s: f64,
}

/// Field, front and the scenario that produced them.
#[derive(Clone, Debug)]
pub struct SpaceTimeSolution {
    pub field: SpaceTimeField,
    pub front: FrontGraph,
    pub scenario: StefanScenario,
    pub stats: RunStats,
}

#[derive(Clone, Copy, Debug)]
struct Profile {
    jf: usize,
    anchor: usize,
    a: f64,
    b: f64,
}

impl Profile {
    fn eval(&self, xi: f64) -> f64 {
        xi * (self.a + self.b * xi)
    }
}

/// Column-wise state of a Stefan run at one time.
#[derive(Clone, Debug)]
pub struct StefanState {
    pub grid: Grid,
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    pub lambda: f64,
    nz: usize,
    lat_shape: Vec<usize>,
}

impl StefanState {
    /// State with front `front(x')` and temperature `value(x)` above it.
    pub fn from_fn(
        grid: Grid,
        lambda: f64,
        front: impl Fn(&[f64]) -> f64,
        value: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        let n = grid.dim();
        let nz = grid.shape[n - 1];
        let lat_shape = grid.shape[..n - 1].to_vec();
        let ncols: usize = lat_shape.iter().product();
        let mut s = vec![0.0; ncols];
        let mut u = vec![0.0; grid.len()];
        for (c, sc) in s.iter_mut().enumerate() {
            let mut x = grid.position_of(c * nz);
            *sc = front(&x[..n - 1]);
            for j in 0..nz {
                x[n - 1] = grid.coord(n - 1, j);
                if x[n - 1] > *sc {
                    u[c * nz + j] = value(&x).max(0.0);
                }
            }
        }
        Ok(Self {
            grid,
            u,
            s,
            lambda,
            nz,
            lat_shape,
        })
    }

    fn z(&self, j: usize) -> f64 {
        self.grid.coord(self.grid.dim() - 1, j)
    }

    pub fn ncols(&self) -> usize {
        self.s.len()
    }

    fn profile(&self, u: &[f64], c: usize, s: f64) -> Result<Profile> {
        let h = self.grid.h;
        let z0 = self.z(0);
        let r = (s - z0) / h;
        if r < 2.0 {
            return Err(Error::FrontExit(format!(
                "front at {s} reached the bottom of the box"
            )));
        }
        let mut jf = r.floor() as usize;
        while self.z(jf) <= s {
            jf += 1;
        }
        let theta = (self.z(jf) - s) / h;
        let anchor = if theta >= 0.5 { jf } else { jf + 1 };
        if anchor + 2 >= self.nz {
            return Err(Error::FrontExit(format!(
                "front at {s} reached the top of the box"
            )));
        }
        let base = c * self.nz;
        let (d1, d2) = (self.z(anchor) - s, self.z(anchor + 1) - s);
        let (u1, u2) = (u[base + anchor], u[base + anchor + 1]);
        let det = d1 * d2 * (d2 - d1);
        let a = (u1 * d2 * d2 - u2 * d1 * d1) / det;
        let b = (u2 * d1 - u1 * d2) / det;
        Ok(Profile { jf, anchor, a, b })
    }

    /// Lateral multi-index of column `c`.
    fn lat_index(&self, mut c: usize) -> Vec<usize> {
        let m = self.lat_shape.len();
        let mut idx = vec![0; m];
        for d in (0..m).rev() {
            idx[d] = c % self.lat_shape[d];
            c /= self.lat_shape[d];
        }
        idx
    }

    fn lat_ravel(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.lat_shape)
            .fold(0, |acc, (&i, &m)| acc * m + i)
    }

    /// Neighbor along lateral axis `d` with reflection at the sides.
    fn lat_neighbor(&self, idx: &[usize], d: usize, up: bool) -> usize {
        let m = self.lat_shape[d];
        let mut j = idx.to_vec();
        j[d] = match (up, idx[d]) {
            _ if m == 1 => 0,
            (true, i) if i + 1 == m => m - 2,
            (true, i) => i + 1,
            (false, 0) => 1,
            (false, i) => i - 1,
        };
        self.lat_ravel(&j)
    }

    fn front_gradient(&self, s: &[f64], c: usize) -> Vec<f64> {
        let idx = self.lat_index(c);
        (0..self.lat_shape.len())
            .map(|d| {
                (s[self.lat_neighbor(&idx, d, true)] - s[self.lat_neighbor(&idx, d, false)])
                    / (2.0 * self.grid.h)
            })
            .collect()
    }

    fn velocities(&self, u: &[f64], s: &[f64], lambda: f64) -> Result<Vec<f64>> {
        let mut v = vec![0.0; s.len()];
        for c in 0..s.len() {
            let p = self.profile(u, c, s[c])?;
            let scale =
                u[c * self.nz + p.anchor + 1].abs().max(1e-300) / (self.z(p.anchor + 1) - s[c]);
            if p.a < -1e-9 * scale.max(1.0) {
                return Err(Error::Front(format!(
                    "negative normal derivative {} at column {c}",
                    p.a
                )));
            }
            let g2: f64 = self.front_gradient(s, c).iter().map(|g| g * g).sum();
            v[c] = -lambda * p.a.max(0.0) * (1.0 + g2);
        }
        Ok(v)
    }

    /// `s'(x') = -lambda u_n (1 + |grad' s|^2)` for every column.
    pub fn front_velocity(&self) -> Result<Vec<f64>> {
        self.velocities(&self.u, &self.s, self.lambda)
    }

    /// Values on every node with the near-front nodes filled from the column profile.
    fn snapshot(&self, out_u: &mut [f64], out_mask: &mut [bool]) -> Result<()> {
        for c in 0..self.ncols() {
            let p = self.profile(&self.u, c, self.s[c])?;
            let base = c * self.nz;
            for j in 0..self.nz {
                let v = if j >= p.anchor {
                    self.u[base + j]
                } else if j >= p.jf {
                    p.eval(self.z(j) - self.s[c]).max(0.0)
                } else {
                    0.0
                };
                out_u[base + j] = v;
                out_mask[base + j] = v > 0.0;
            }
        }
        Ok(())
    }
}

/// Runs the scenario and stores levels every `store_dt` or finer.
pub fn simulate(scenario: &StefanScenario) -> Result<SpaceTimeSolution> {
    scenario.validate()?;
    let clock = Instant::now();
    let n = scenario.n;
    let grid = scenario.grid()?;
    let op = scenario.operator.compile(n)?;
    let state = StefanState::from_fn(
        grid.clone(),
        scenario.lambda,
        |xp| scenario.initial_front(xp),
        |x| scenario.initial_value(x),
    )?;
    let (steps, dt, per) = scenario.schedule();
    let levels = steps / per + 1;
    let time = TimeAxis::new(scenario.t_start, dt * per as f64, levels)?;
    let mut runner = Runner::new(state, op, scenario, dt)?;
    let ns = grid.len();
    let ncols = runner.state.ncols();
    let mut field = SpaceTimeField::zeros(grid.clone(), time.clone());
    let mut heights = vec![0.0; levels * ncols];
    let mut stats = RunStats {
        steps,
        dt,
        min_before_clip: 0.0,
        ..Default::default()
    };
    stats.parabolic_cfl = dt / (scenario.h * scenario.h / (4.0 * n as f64 * scenario.operator.k));
    let guard = 10.0 * scenario.k;
    let mut store = |runner: &Runner, level: usize, stats: &mut RunStats| -> Result<()> {
        let base = level * ns;
        runner.state.snapshot(
            &mut field.values[base..base + ns],
            &mut field.mask[base..base + ns],
        )?;
        heights[level * ncols..(level + 1) * ncols].copy_from_slice(&runner.state.s);
        let mx = field.values[base..base + ns]
            .iter()
            .fold(0.0f64, |m, v| m.max(*v));
        stats.max_value = stats.max_value.max(mx);
        if !(mx <= guard) {
            return Err(Error::BlowUp(format!(
                "max u = {mx} exceeds 10 K = {guard} at t = {}",
                runner.t
            )));
        }
        Ok(())
    };
    store(&runner, 0, &mut stats)?;
    for step in 1..=steps {
        runner.step(step)?;
        if step % per == 0 {
            store(&runner, step / per, &mut stats)?;
        }
    }
    stats.front_cfl = runner.front_cfl;
    stats.min_before_clip = runner.min_before_clip;
    stats.wall_time_s = clock.elapsed().as_secs_f64();
    let m = n - 1;
    let front = FrontGraph {
        origin: grid.origin[..m].to_vec(),
        shape: grid.shape[..m].to_vec(),
        h: grid.h,
        time,
        heights,
        orientation: (0..n).map(|d| if d == m { 1.0 } else { 0.0 }).collect(),
    };
    Ok(SpaceTimeSolution {
        field,
        front,
        scenario: scenario.clone(),
        stats,
    })
}

struct Runner<'a> {
    state: StefanState,
    op: CompiledOperator,
    scenario: &'a StefanScenario,
    dt: f64,
    t: f64,
    ext: Vec<f64>,
    ext_strides: Vec<usize>,
    ext_base: Vec<usize>,
    ghosts: Vec<(usize, usize)>,
    col_neighbors: Vec<Vec<usize>>,
    next: Vec<f64>,
    hess: Vec<f64>,
    top: Vec<usize>,
    source_const: Option<f64>,
    front_cfl: f64,
    min_before_clip: f64,
}

impl<'a> Runner<'a> {
    fn new(
        state: StefanState,
        op: CompiledOperator,
        scenario: &'a StefanScenario,
        dt: f64,
    ) -> Result<Self> {
        let n = state.grid.dim();
        let m = n - 1;
        let nz = state.nz;
        let ext_shape: Vec<usize> = state.lat_shape.iter().map(|s| s + 2).collect();
        let mut ext_strides = vec![0usize; n];
        ext_strides[m] = 1;
        for d in (0..m).rev() {
            ext_strides[d] = if d + 1 < m {
                ext_strides[d + 1] * ext_shape[d + 1]
            } else {
                nz
            };
        }
        let ext_cols: usize = ext_shape.iter().product();
        let ext_ravel = |idx: &[usize]| {
            idx.iter()
                .zip(&ext_shape)
                .fold(0, |acc, (&i, &s)| acc * s + i)
                * nz
        };
        let ncols = state.ncols();
        let ext_base: Vec<usize> = (0..ncols)
            .map(|c| {
                let idx: Vec<usize> = state.lat_index(c).iter().map(|i| i + 1).collect();
                ext_ravel(&idx)
            })
            .collect();
        let mut ghosts = Vec::new();
        for ec in 0..ext_cols {
            let mut rem = ec;
            let mut idx = vec![0usize; m];
            for d in (0..m).rev() {
                idx[d] = rem % ext_shape[d];
                rem /= ext_shape[d];
            }
            let mut src = idx.clone();
            let mut is_ghost = false;
            for d in 0..m {
                let len = state.lat_shape[d];
                if idx[d] == 0 {
                    is_ghost = true;
                    src[d] = if len == 1 { 1 } else { 2 };
                } else if idx[d] == len + 1 {
                    is_ghost = true;
                    src[d] = if len == 1 { 1 } else { len - 1 };
                }
            }
            if is_ghost {
                ghosts.push((ext_ravel(&idx), ext_ravel(&src)));
            }
        }
        let col_neighbors = (0..ncols)
            .map(|c| {
                let idx = state.lat_index(c);
                let mut out = vec![c];
                for code in 0..3usize.pow(m as u32) {
                    let mut j = idx.clone();
                    let mut r = code;
                    for d in 0..m {
                        let shift = r % 3;
                        r /= 3;
                        j[d] = match shift {
                            0 => idx[d],
                            1 => (idx[d] + 1).min(state.lat_shape[d] - 1),
                            _ => idx[d].saturating_sub(1),
                        };
                    }
                    out.push(state.lat_ravel(&j));
                }
                out.sort_unstable();
                out.dedup();
                out
            })
            .collect();
        let top = (0..ncols).map(|c| c * nz + nz - 1).collect();
        let source_const = match scenario.source {
            Source::Constant { value } => Some(scenario.lambda * value),
            _ => None,
        };
        let ns = state.u.len();
        Ok(Self {
            ext: vec![0.0; ext_cols * nz],
            ext_strides,
            ext_base,
            ghosts,
            col_neighbors,
            next: vec![0.0; ns],
            hess: vec![0.0; n * n],
            top,
            source_const,
            front_cfl: 0.0,
            min_before_clip: 0.0,
            t: scenario.t_start,
            state,
            op,
            scenario,
            dt,
        })
    }

    fn step(&mut self, step: usize) -> Result<()> {
        let sc = self.scenario;
        let n = sc.n;
        let nz = self.state.nz;
        let h = self.state.grid.h;
        let h2 = h * h;
        let ncols = self.state.ncols();
        let lambda = sc.lambda;
        let mut profiles = Vec::with_capacity(ncols);
        for c in 0..ncols {
            profiles.push(self.state.profile(&self.state.u, c, self.state.s[c])?);
        }
        for c in 0..ncols {
            let p = profiles[c];
            let jlo = self.col_neighbors[c]
                .iter()
                .map(|&o| profiles[o].jf)
                .min()
                .unwrap_or(p.jf)
                .saturating_sub(2);
            let base = self.ext_base[c];
            let ub = c * nz;
            let s = self.state.s[c];
            for j in jlo..p.anchor {
                self.ext[base + j] = p.eval(self.state.z(j) - s);
            }
            self.ext[base + p.anchor..base + nz]
                .copy_from_slice(&self.state.u[ub + p.anchor..ub + nz]);
        }
        for &(dst, src) in &self.ghosts {
            self.ext.copy_within(src..src + nz, dst);
        }
        let mut x = vec![0.0; n];
        for c in 0..ncols {
            let p = profiles[c];
            let base = self.ext_base[c];
            let ub = c * nz;
            self.next[ub..ub + p.anchor].fill(0.0);
            if self.source_const.is_none() {
                x.copy_from_slice(&self.state.grid.position_of(ub));
            }
            for j in p.anchor..nz - 1 {
                let i = base + j;
                let lap = apply_operator(
                    &self.op,
                    &self.ext,
                    i,
                    &self.ext_strides,
                    h2,
                    &mut self.hess,
                );
                let f = match self.source_const {
                    Some(v) => v,
                    None => {
                        x[n - 1] = self.state.z(j);
                        let y: Vec<f64> = x.iter().map(|v| lambda * v).collect();
                        lambda * sc.source.eval(&y, lambda * lambda * self.t)
                    }
                };
                self.next[ub + j] = self.ext[i] + self.dt * (lap + f);
            }
        }
        let t_new = sc.t_start + step as f64 * self.dt;
        for &i in &self.top {
            let xt = self.state.grid.position_of(i);
            self.next[i] = sc.top_value(&xt, t_new);
        }
        let vel = self.state.velocities(&self.next, &self.state.s, lambda)?;
        let mut s_new = self.state.s.clone();
        for c in 0..ncols {
            let ds = self.dt * vel[c];
            let ratio = ds.abs() / h;
            self.front_cfl = self.front_cfl.max(ratio);
            if ratio > 1.0 {
                return Err(Error::Cfl(format!(
                    "front moved {ds} > h in one step at column {c}"
                )));
            }
            s_new[c] += ds;
        }
        for c in 0..ncols {
            let old = profiles[c];
            let ub = c * nz;
            let fresh = self.state.profile(&self.next, c, s_new[c]);
            let fresh = match fresh {
                Ok(p) => p,
                Err(e) => return Err(e),
            };
            if fresh.anchor < old.anchor {
                let (d1, d2) = (
                    self.state.z(old.anchor) - s_new[c],
                    self.state.z(old.anchor + 1) - s_new[c],
                );
                let (u1, u2) = (self.next[ub + old.anchor], self.next[ub + old.anchor + 1]);
                let det = d1 * d2 * (d2 - d1);
                let a = (u1 * d2 * d2 - u2 * d1 * d1) / det;
                let b = (u2 * d1 - u1 * d2) / det;
                for j in fresh.anchor..old.anchor {
                    let xi = self.state.z(j) - s_new[c];
                    self.next[ub + j] = xi * (a + b * xi);
                }
            }
        }
        for v in self.next.iter_mut() {
            if *v < 0.0 {
                self.min_before_clip = self.min_before_clip.min(*v);
                *v = 0.0;
            }
        }
        std::mem::swap(&mut self.state.u, &mut self.next);
        self.state.s = s_new;
        self.t = t_new;
        Ok(())
    }
}

/// `u_tau(x, t) = u(tau x, tau^2 t) / tau` on the same grid and time levels.
///
/// Values come from quadratic interpolation across columns of the
/// front-aware column profiles, and linear interpolation in time. The
/// result solves the problem with `tau lambda` in place of `lambda`.
pub fn rescale_parabolic(solution: &SpaceTimeSolution, tau: f64) -> Result<SpaceTimeSolution> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(invalid(format!("tau must lie in (0, 1], got {tau}")));
    }
    if tau == 1.0 {
        return Ok(solution.clone());
    }
    let field = &solution.field;
    let grid = &field.grid;
    let n = grid.dim();
    let time = &field.time;
    let ns = grid.len();
    let tol = 1e-9 * grid.h;
    for d in 0..n {
        let (lo, hi) = (tau * grid.origin[d], tau * grid.upper(d));
        if lo < grid.origin[d] - tol || hi > grid.upper(d) + tol {
            return Err(Error::RegionTooSmall(format!(
                "rescaled window exceeds stored data along axis {d}"
            )));
        }
    }
    for t in [time.t0, time.t_end()] {
        let s = tau * tau * t;
        if s < time.t0 - 1e-12 || s > time.t_end() + 1e-12 {
            return Err(Error::RegionTooSmall(
                "rescaled time window exceeds stored data".into(),
            ));
        }
    }
    let sampler = ColumnSampler::new(solution);
    let mut out = SpaceTimeField::zeros(grid.clone(), time.clone());
    let ncols = solution.front.ncols();
    let mut heights = vec![0.0; time.levels * ncols];
    let mut x = vec![0.0; n];
    for k in 0..time.levels {
        let s = tau * tau * time.time(k);
        let (k0, w1) = bracket(time, s);
        for c in 0..ncols {
            let xp = solution.front.column_position(c);
            let yp: Vec<f64> = xp.iter().map(|v| tau * v).collect();
            let mut hgt = (1.0 - w1) * sampler.front_at(k0, &yp);
            if w1 > 0.0 {
                hgt += w1 * sampler.front_at(k0 + 1, &yp);
            }
            heights[k * ncols + c] = hgt / tau;
        }
        for node in 0..ns {
            field.fill_position(node, &mut x);
            let y: Vec<f64> = x.iter().map(|v| tau * v).collect();
            let mut v = (1.0 - w1) * sampler.value_at(k0, &y);
            if w1 > 0.0 {
                v += w1 * sampler.value_at(k0 + 1, &y);
            }
            let below = x[n - 1] <= heights[k * ncols + node / grid.shape[n - 1]];
            let v = if below { 0.0 } else { v / tau };
            out.values[k * ns + node] = v;
            out.mask[k * ns + node] = v > 0.0;
        }
    }
    let mut scenario = solution.scenario.clone();
    scenario.lambda *= tau;
    let front = FrontGraph {
        heights,
        ..solution.front.clone()
    };
    Ok(SpaceTimeSolution {
        field: out,
        front,
        scenario,
        stats: solution.stats.clone(),
    })
}

fn bracket(time: &TimeAxis, s: f64) -> (usize, f64) {
    if time.levels == 1 {
        return (0, 0.0);
    }
    let r = ((s - time.t0) / time.dt).clamp(0.0, (time.levels - 1) as f64);
    let k0 = (r.floor() as usize).min(time.levels - 2);
    let w = r - k0 as f64;
    if w < 1e-12 {
        (k0, 0.0)
    } else if w > 1.0 - 1e-12 {
        (k0 + 1, 0.0)
    } else {
        (k0, w)
    }
}

/// Three-point Lagrange weights and the first index, clamped to `[0, len)`.
fn lagrange3(r: f64, len: usize) -> (usize, [f64; 3], usize) {
    if len == 1 {
        return (0, [1.0, 0.0, 0.0], 1);
    }
    if len == 2 {
        let w = r.clamp(0.0, 1.0);
        return (0, [1.0 - w, w, 0.0], 2);
    }
    let i = (r.round() as isize).clamp(1, len as isize - 2) as usize;
    let d = r - i as f64;
    (
        i - 1,
        [0.5 * d * (d - 1.0), 1.0 - d * d, 0.5 * d * (d + 1.0)],
        3,
    )
}

struct ColumnSampler<'a> {
    sol: &'a SpaceTimeSolution,
    nz: usize,
}

impl<'a> ColumnSampler<'a> {
    fn new(sol: &'a SpaceTimeSolution) -> Self {
        let n = sol.field.grid.dim();
        Self {
            sol,
            nz: sol.field.grid.shape[n - 1],
        }
    }

    fn lateral_stencil(&self, yp: &[f64]) -> Vec<(usize, f64)> {
        let g = &self.sol.front;
        let m = g.shape.len();
        let mut acc = vec![(0usize, 1.0)];
        for d in 0..m {
            let r = (yp[d] - g.origin[d]) / g.h;
            let (first, w, cnt) = lagrange3(r, g.shape[d]);
            let mut next = Vec::with_capacity(acc.len() * cnt);
            for &(lin, wt) in &acc {
                for (q, wq) in w.iter().take(cnt).enumerate() {
                    next.push((lin * g.shape[d] + first + q, wt * wq));
                }
            }
            acc = next;
        }
        acc
    }

    fn front_at(&self, k: usize, yp: &[f64]) -> f64 {
        self.lateral_stencil(yp)
            .iter()
            .map(|&(c, w)| w * self.sol.front.height(k, c))
            .sum()
    }

    /// Column profile of column `c` at height `z`, extended below the front by its quadratic.
    fn column_value(&self, k: usize, c: usize, z: f64) -> f64 {
        let g = &self.sol.field.grid;
        let n = g.dim();
        let s = self.sol.front.height(k, c);
        let h = g.h;
        let z0 = g.origin[n - 1];
        let vals = self.sol.field.level_values(k);
        let base = c * self.nz;
        let mut jf = ((s - z0) / h).floor().max(0.0) as usize;
        while jf < self.nz && g.coord(n - 1, jf) <= s {
            jf += 1;
        }
        if jf + 2 >= self.nz {
            return 0.0;
        }
        let theta = (g.coord(n - 1, jf) - s) / h;
        let anchor = if theta >= 0.5 { jf } else { jf + 1 };
        let (d1, d2) = (g.coord(n - 1, anchor) - s, g.coord(n - 1, anchor + 1) - s);
        let (u1, u2) = (vals[base + anchor], vals[base + anchor + 1]);
        let det = d1 * d2 * (d2 - d1);
        let a = (u1 * d2 * d2 - u2 * d1 * d1) / det;
        let b = (u2 * d1 - u1 * d2) / det;
        let ext = |j: usize| -> f64 {
            if j >= anchor {
                vals[base + j]
            } else {
                let xi = g.coord(n - 1, j) - s;
                xi * (a + b * xi)
            }
        };
        let r = (z - z0) / h;
        let (first, w, cnt) = lagrange3(r, self.nz);
        if first + 1 < anchor && z < g.coord(n - 1, anchor) {
            let xi = z - s;
            return xi * (a + b * xi);
        }
        (0..cnt).map(|q| w[q] * ext(first + q)).sum()
    }

    fn value_at(&self, k: usize, y: &[f64]) -> f64 {
        let n = y.len();
        let yp = &y[..n - 1];
        if y[n - 1] <= self.front_at(k, yp) {
            return 0.0;
        }
        let v: f64 = self
            .lateral_stencil(yp)
            .iter()
            .map(|&(c, w)| w * self.column_value(k, c, y[n - 1]))
            .sum();
        v.max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wave_identities() {
        let w = traveling_wave(0.5, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let t = rng.gen_range(-1.0..0.0);
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(w.front(t)..2.0)];
            let res = w.time_derivative(&x, t) - w.second_derivative(&x, t);
            assert!(res.abs() <= 1e-12);
        }
        let t = -0.3;
        let xf = [0.2, w.front(t)];
        assert!(w.value(&xf, t).abs() < 1e-15);
        let g = w.gradient(&xf, t)[1];
        assert!((w.time_derivative(&xf, t) - w.lambda * g * g).abs() < 1e-12);
        assert!(traveling_wave(-1.0, 0.5).is_err());
    }

    #[test]
    fn planar_wave_front_speed() {
        let w = traveling_wave(0.5, 0.5).unwrap();
        let grid = Grid::spanning(&[-0.25, -0.5], &[0.25, 1.0], 1.0 / 128.0).unwrap();
        let st = StefanState::from_fn(grid, 0.5, |_| w.front(0.0), |x| w.value(x, 0.0)).unwrap();
        for v in st.front_velocity().unwrap() {
            assert!((v + 0.5).abs() <= 0.01, "{v}");
        }
    }

    #[test]
    fn zero_flux_front_is_stationary() {
        let grid = Grid::spanning(&[-0.25, -0.5], &[0.25, 1.0], 1.0 / 64.0).unwrap();
        let st = StefanState::from_fn(grid, 0.5, |_| 0.1, |_| 0.0).unwrap();
        assert!(st.front_velocity().unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tilted_plane_normal_speed() {
        let (theta, abar, lambda): (f64, f64, f64) = (0.3, 1.5, 0.4);
        let nu = [theta.sin(), theta.cos()];
        let d = 0.2;
        let grid = Grid::spanning(&[-0.25, -0.5], &[0.25, 1.5], 1.0 / 128.0).unwrap();
        let st = StefanState::from_fn(
            grid,
            lambda,
            |xp| (d - xp[0] * nu[0]) / nu[1],
            |x| abar * (x[0] * nu[0] + x[1] * nu[1] - d),
        )
        .unwrap();
        let v = st.front_velocity().unwrap();
        let mid = v.len() / 2;
        let normal = -v[mid] * nu[1];
        assert!((normal - lambda * abar).abs() < 1e-9, "{normal}");
    }

    fn wave_scenario_1d(t_end: f64) -> StefanScenario {
        StefanScenario {
            n: 1,
            operator: EllipticOperatorSpec::trace(),
            lambda: 0.5,
            k: 10.0,
            source: Source::Constant { value: 0.0 },
            initial: InitialData::TravelingWave { c: 0.5, scale: 1.0 },
            top: TopBoundary::TravelingWave,
            lower: vec![-1.0],
            upper: vec![1.5],
            h: 1.0 / 128.0,
            t_start: 0.0,
            t_end,
            store_dt: 0.05,
        }
    }

    #[test]
    fn wave_front_position_1d() {
        let sol = simulate(&wave_scenario_1d(1.0)).unwrap();
        let b = sol.front.intercepts().unwrap();
        let last = *b.last().unwrap();
        println!("front at T=1: {last}, stats {:?}", sol.stats);
        assert!((last + 0.5).abs() <= 0.02);
        assert!(sol.stats.min_before_clip >= -1e-12);
        for w in b.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn null_solution_never_moves() {
        let mut sc = wave_scenario_1d(0.2);
        sc.initial = InitialData::Zero { height: 0.0 };
        sc.top = TopBoundary::Value { value: 0.0 };
        let sol = simulate(&sc).unwrap();
        assert_eq!(sol.field.sup_norm(), 0.0);
        assert!(sol.front.heights.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn sink_slows_melting() {
        let mut sc = wave_scenario_1d(0.5);
        sc.initial = InitialData::Plane {
            slope: 1.0,
            height: 0.0,
            tilt: vec![],
        };
        sc.top = TopBoundary::HoldInitial;
        let free = simulate(&sc).unwrap();
        sc.source = Source::Constant { value: -0.05 };
        let sink = simulate(&sc).unwrap();
        for (a, b) in sink.front.heights.iter().zip(&free.front.heights) {
            assert!(*a >= *b - 1e-12, "{a} {b}");
        }
    }

    #[test]
    fn rescale_identity_and_plane() {
        let mut sc = wave_scenario_1d(0.0);
        sc.t_start = -0.2;
        sc.initial = InitialData::Plane {
            slope: 2.0,
            height: 0.1,
            tilt: vec![],
        };
        sc.top = TopBoundary::HoldInitial;
        sc.lambda = 0.0;
        sc.store_dt = 0.02;
        let sol = simulate(&sc).unwrap();
        let same = rescale_parabolic(&sol, 1.0).unwrap();
        assert_eq!(same.field, sol.field);
        let half = rescale_parabolic(&sol, 0.5).unwrap();
        for k in 0..half.field.time.levels {
            assert!((half.front.height(k, 0) - 0.2).abs() < 1e-9);
            for node in 0..half.field.nodes() {
                let x = half.field.grid.position_of(node)[0];
                if x < 1.4 {
                    let exact = 2.0 * (x - 0.2).max(0.0);
                    assert!(
                        (half.field.value(k, node) - exact).abs() < 1e-9,
                        "{x} {}",
                        half.field.value(k, node)
                    );
                }
            }
        }
    }

    #[test]
    fn rescaled_wave_matches_scaled_parameters() {
        let w = traveling_wave(0.5, 0.5).unwrap();
        let grid = Grid::spanning(&[-0.5, -0.25], &[0.5, 0.75], 1.0 / 64.0).unwrap();
        let time = TimeAxis::spanning(-0.4, 0.0, 41).unwrap();
        let field = SpaceTimeField::from_fn(grid.clone(), time.clone(), |x, t| w.value(x, t));
        let ncols = grid.shape[0];
        let heights = (0..time.levels)
            .flat_map(|k| vec![w.front(time.time(k)); ncols])
            .collect();
        let front = FrontGraph {
            origin: vec![-0.5],
            shape: vec![ncols],
            h: grid.h,
            time,
            heights,
            orientation: vec![0.0, 1.0],
        };
        let scenario = StefanScenario::traveling_wave(2, 0.5, 0.5, 5.0, 1.0 / 64.0);
        let sol = SpaceTimeSolution {
            field,
            front,
            scenario,
            stats: RunStats::default(),
        };
        let tau = 0.5;
        let r = rescale_parabolic(&sol, tau).unwrap();
        let wt = traveling_wave(0.5 * tau, 0.5 * tau).unwrap();
        let mut worst: f64 = 0.0;
        for k in (0..r.field.time.levels).step_by(4) {
            let t = r.field.time.time(k);
            for node in (0..r.field.nodes()).step_by(37) {
                let x = r.field.grid.position_of(node);
                worst = worst.max((r.field.value(k, node) - wt.value(&x, t)).abs());
            }
        }
        println!("rescaled wave max error {worst:e}");
        assert!(worst < 2e-4);
        let nz = r.field.grid.shape[1];
        for k in 0..r.field.time.levels {
            for node in 0..r.field.nodes() {
                let above = r.field.grid.position_of(node)[1] > r.front.height(k, node / nz);
                assert_eq!(
                    r.field.level_mask(k)[node],
                    above && r.field.value(k, node) > 0.0
                );
                assert!(above || r.field.value(k, node) == 0.0);
            }
        }
    }
}
