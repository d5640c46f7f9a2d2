//! Uniform space-time grids, parabolic cylinders and sampled fields.
//!
//! Spatial nodes are stored with the last axis varying fastest, so a column
//! along `x_n` is contiguous. A [`SpaceTimeField`] holds one value and one
//! mask bit per node and stored time level.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Parabolic distance `(|x-y|^2 + |t-s|)^{1/2}`.
pub fn parabolic_distance(x: &[f64], t: f64, y: &[f64], s: f64) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (sq + (t - s).abs()).sqrt()
}

/// A ball in space times a closed time interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParabolicCylinder {
    pub center: Vec<f64>,
    pub radius: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl ParabolicCylinder {
    pub fn new(center: Vec<f64>, radius: f64, t_start: f64, t_end: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(invalid("cylinder center must have at least one coordinate"));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(invalid(format!(
                "cylinder radius must be positive, got {radius}"
            )));
        }
        if !(t_start < t_end) {
            return Err(invalid(format!("empty time interval [{t_start}, {t_end}]")));
        }
        Ok(Self {
            center,
            radius,
            t_start,
            t_end,
        })
    }

    /// The backward cylinder `B_r(x0) x (t0 - r^2, t0]`.
    pub fn backward(center: Vec<f64>, radius: f64, t0: f64) -> Result<Self> {
        Self::new(center, radius, t0 - radius * radius, t0)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, x: &[f64], t: f64) -> bool {
        let sq: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum();
        sq < self.radius * self.radius && t >= self.t_start && t <= self.t_end
    }
}

/// Uniform spatial grid: `origin + i * h` along every axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub origin: Vec<f64>,
    pub shape: Vec<usize>,
    pub h: f64,
}

impl Grid {
    pub fn new(origin: Vec<f64>, shape: Vec<usize>, h: f64) -> Result<Self> {
        if origin.is_empty() || origin.len() != shape.len() {
            return Err(invalid(
                "grid origin and shape must have equal, nonzero length",
            ));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(invalid(format!("grid spacing must be positive, got {h}")));
        }
        if shape.iter().any(|&m| m == 0) {
            return Err(invalid("grid shape entries must be positive"));
        }
        Ok(Self { origin, shape, h })
    }

    /// Grid with nodes `lo + i h` up to the last node not beyond `hi`.
    pub fn spanning(lo: &[f64], hi: &[f64], h: f64) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(invalid("box corners differ in dimension"));
        }
        let mut shape = Vec::with_capacity(lo.len());
        for (a, b) in lo.iter().zip(hi) {
            if !(b > a) {
                return Err(invalid(format!("degenerate box side [{a}, {b}]")));
            }
            shape.push(((b - a) / h + 1e-9).floor() as usize + 1);
        }
        Self::new(lo.to_vec(), shape, h)
    }

    /// Grid with `center` at a node, covering the ball of `radius` plus `pad` nodes.
    pub fn centered(center: &[f64], radius: f64, h: f64, pad: usize) -> Result<Self> {
        let m = (radius / h - 1e-9).ceil() as usize + pad;
        let origin = center.iter().map(|c| c - m as f64 * h).collect();
        Self::new(origin, vec![2 * m + 1; center.len()], h)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dim()];
        for d in (0..self.dim().saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.shape[d + 1];
        }
        s
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + i as f64 * self.h
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.coord(axis, self.shape[axis] - 1)
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &m)| acc * m + i)
    }

    pub fn unravel(&self, mut linear: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            idx[d] = linear % self.shape[d];
            linear /= self.shape[d];
        }
        idx
    }

    pub fn position(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(d, &i)| self.coord(d, i))
            .collect()
    }

    pub fn position_of(&self, linear: usize) -> Vec<f64> {
        self.position(&self.unravel(linear))
    }

    /// Index of the node nearest to `x` along `axis`, if inside the grid.
    pub fn nearest(&self, axis: usize, x: f64) -> Option<usize> {
        let r = ((x - self.origin[axis]) / self.h).round();
        if r < 0.0 || r as usize >= self.shape[axis] {
            None
        } else {
            Some(r as usize)
        }
    }

    /// Whether the closed ball lies within the grid box.
    pub fn contains_ball(&self, center: &[f64], radius: f64) -> bool {
        let slack = 1e-9 * self.h;
        (0..self.dim()).all(|d| {
            center[d] - radius >= self.origin[d] - slack
                && center[d] + radius <= self.upper(d) + slack
        })
    }
}

/// Uniformly spaced stored time levels `t0 + k dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeAxis {
    pub t0: f64,
    pub dt: f64,
    pub levels: usize,
}

impl TimeAxis {
    pub fn new(t0: f64, dt: f64, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(invalid("time axis needs at least one level"));
        }
        if levels > 1 && !(dt > 0.0) {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        Ok(Self { t0, dt, levels })
    }

    /// `levels` levels from `t_start` to `t_end` inclusive.
    pub fn spanning(t_start: f64, t_end: f64, levels: usize) -> Result<Self> {
        if levels < 2 {
            return Err(invalid("a spanning time axis needs at least two levels"));
        }
        Self::new(t_start, (t_end - t_start) / (levels - 1) as f64, levels)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.levels - 1)
    }

    /// Level whose time equals `t` up to a relative `1e-9` of the spacing.
    pub fn level_at(&self, t: f64) -> Option<usize> {
        if self.levels == 1 {
            return ((t - self.t0).abs() <= 1e-12).then_some(0);
        }
        let r = (t - self.t0) / self.dt;
        let k = r.round();
        if k < 0.0 || k as usize >= self.levels || (r - k).abs() > 1e-9 {
            None
        } else {
            Some(k as usize)
        }
    }
}

/// Values and a validity or positivity mask on a space-time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    pub grid: Grid,
    pub time: TimeAxis,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl SpaceTimeField {
    /// Zero field with every mask bit cleared.
    pub fn zeros(grid: Grid, time: TimeAxis) -> Self {
        let n = grid.len() * time.levels;
        Self {
            grid,
            time,
            values: vec![0.0; n],
            mask: vec![false; n],
        }
    }

    /// Field sampled from `f` with every mask bit set.
    pub fn from_fn(grid: Grid, time: TimeAxis, mut f: impl FnMut(&[f64], f64) -> f64) -> Self {
        let mut field = Self::zeros(grid, time);
        let ns = field.grid.len();
        let mut x = vec![0.0; field.grid.dim()];
        for k in 0..field.time.levels {
            let t = field.time.time(k);
            for node in 0..ns {
                field.fill_position(node, &mut x);
                field.values[k * ns + node] = f(&x, t);
                field.mask[k * ns + node] = true;
            }
        }
        field
    }

    pub fn from_parts(
        grid: Grid,
        time: TimeAxis,
        values: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        let n = grid.len() * time.levels;
        if values.len() != n || mask.len() != n {
            return Err(invalid(format!(
                "field storage has {} values and {} mask bits, expected {n}",
                values.len(),
                mask.len()
            )));
        }
        Ok(Self {
            grid,
            time,
            values,
            mask,
        })
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn nodes(&self) -> usize {
        self.grid.len()
    }

    pub(crate) fn fill_position(&self, node: usize, out: &mut [f64]) {
        let mut rem = node;
        for d in (0..self.grid.dim()).rev() {
            let m = self.grid.shape[d];
            out[d] = self.grid.coord(d, rem % m);
            rem /= m;
        }
    }

    pub fn value(&self, level: usize, node: usize) -> f64 {
        self.values[level * self.nodes() + node]
    }

    pub fn masked(&self, level: usize, node: usize) -> bool {
        self.mask[level * self.nodes() + node]
    }

    pub fn level_values(&self, level: usize) -> &[f64] {
        let ns = self.nodes();
        &self.values[level * ns..(level + 1) * ns]
    }

    pub fn level_mask(&self, level: usize) -> &[bool] {
        let ns = self.nodes();
        &self.mask[level * ns..(level + 1) * ns]
    }

    /// Whether the grid and time axis contain the cylinder.
    pub fn covers(&self, cyl: &ParabolicCylinder) -> bool {
        let tol = 1e-9 * self.time.dt.abs().max(1e-300);
        cyl.dim() == self.dim()
            && self.grid.contains_ball(&cyl.center, cyl.radius)
            && cyl.t_start >= self.time.t0 - tol
            && cyl.t_end <= self.time.t_end() + tol
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Multilinear in space, linear in time.
    pub fn interpolate(&self, x: &[f64], t: f64) -> Result<f64> {
        let n = self.dim();
        if x.len() != n {
            return Err(invalid("point dimension mismatch"));
        }
        let eps = 1e-9;
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for d in 0..n {
            let r = (x[d] - self.grid.origin[d]) / self.grid.h;
            let m = self.grid.shape[d];
            if r < -eps || r > (m - 1) as f64 + eps {
                return Err(Error::RegionTooSmall(format!(
                    "point {x:?} is outside the grid"
                )));
            }
            let r = r.clamp(0.0, (m - 1) as f64);
            let i = (r.floor() as usize).min(m.saturating_sub(2));
            base[d] = i;
            frac[d] = if m == 1 { 0.0 } else { r - i as f64 };
        }
        let time = &self.time;
        let (k0, w) = if time.levels == 1 {
            if (t - time.t0).abs() > 1e-12 {
                return Err(Error::RegionTooSmall(format!(
                    "time {t} is outside the field"
                )));
            }
            (0, 0.0)
        } else {
            let r = (t - time.t0) / time.dt;
            if r < -eps || r > (time.levels - 1) as f64 + eps {
                return Err(Error::RegionTooSmall(format!(
                    "time {t} is outside the field"
                )));
            }
            let r = r.clamp(0.0, (time.levels - 1) as f64);
            let k = (r.floor() as usize).min(time.levels - 2);
            (k, r - k as f64)
        };
        let strides = self.grid.strides();
        let spatial = |k: usize| -> f64 {
            let vals = self.level_values(k);
            let mut acc = 0.0;
            for corner in 0..(1usize << n) {
                let mut weight = 1.0;
                let mut node = 0;
                for d in 0..n {
                    let up = (corner >> d) & 1 == 1;
                    if up && self.grid.shape[d] == 1 {
                        weight = 0.0;
                        break;
                    }
                    weight *= if up { frac[d] } else { 1.0 - frac[d] };
                    node += (base[d] + up as usize) * strides[d];
                }
                if weight != 0.0 {
                    acc += weight * vals[node];
                }
            }
            acc
        };
        let a = spatial(k0);
        Ok(if w == 0.0 {
            a
        } else {
            (1.0 - w) * a + w * spatial(k0 + 1)
        })
    }

    /// Centered second-order gradient and Hessian at a node.
    ///
    /// Every stencil node, including the diagonal ones used for mixed
    /// derivatives, must carry a set mask bit.
    pub fn gradient_hessian(
        &self,
        level: usize,
        idx: &[usize],
    ) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let n = self.dim();
        if idx.len() != n || level >= self.time.levels {
            return Err(invalid("node index or level out of range"));
        }
        let strides = self.grid.strides();
        let base = level * self.nodes();
        let center = self.grid.ravel(idx);
        let crosses = || Error::StencilCrossesMask {
            node: idx.to_vec(),
            level,
        };
        for d in 0..n {
            if idx[d] == 0 || idx[d] + 1 >= self.grid.shape[d] {
                return Err(crosses());
            }
        }
        let at = |lin: usize| -> Result<f64> {
            if self.mask[base + lin] {
                Ok(self.values[base + lin])
            } else {
                Err(crosses())
            }
        };
        let h = self.grid.h;
        let u0 = at(center)?;
        let mut grad = vec![0.0; n];
        let mut hess = DMatrix::zeros(n, n);
        for i in 0..n {
            let up = at(center + strides[i])?;
            let dn = at(center - strides[i])?;
            grad[i] = (up - dn) / (2.0 * h);
            hess[(i, i)] = (up - 2.0 * u0 + dn) / (h * h);
            for j in 0..i {
                let pp = at(center + strides[i] + strides[j])?;
                let pm = at(center + strides[i] - strides[j])?;
                let mp = at(center - strides[i] + strides[j])?;
                let mm = at(center - strides[i] - strides[j])?;
                let v = (pp - pm - mp + mm) / (4.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        Ok((grad, hess))
    }

    /// Sampled parabolic Holder seminorm of order `alpha`.
    ///
    /// Half of the pairs are independent uniform nodes; the other half are
    /// a node and a shift of it along a single axis (space or time). The
    /// pair stream depends only on `seed`, so a larger `pairs` extends a
    /// smaller sample and the estimate is nondecreasing in `pairs`.
    pub fn holder_seminorm(&self, alpha: f64, pairs: usize, seed: u64) -> f64 {
        let n = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels = self.time.levels;
        let mut best: f64 = 0.0;
        let mut p = vec![0usize; n];
        let mut q = vec![0usize; n];
        for _ in 0..pairs {
            for d in 0..n {
                p[d] = rng.gen_range(0..self.grid.shape[d]);
            }
            let kp = rng.gen_range(0..levels);
            let mut kq = kp;
            q.copy_from_slice(&p);
            if rng.gen_bool(0.5) {
                for d in 0..n {
                    q[d] = rng.gen_range(0..self.grid.shape[d]);
                }
                kq = rng.gen_range(0..levels);
            } else {
                let axis = rng.gen_range(0..=n);
                if axis == n {
                    kq = rng.gen_range(0..levels);
                } else {
                    q[axis] = rng.gen_range(0..self.grid.shape[axis]);
                }
            }
            let xp = self.grid.position(&p);
            let xq = self.grid.position(&q);
            let dist = parabolic_distance(&xp, self.time.time(kp), &xq, self.time.time(kq));
            if dist == 0.0 {
                continue;
            }
            let up = self.value(kp, self.grid.ravel(&p));
            let uq = self.value(kq, self.grid.ravel(&q));
            best = best.max((up - uq).abs() / dist.powf(alpha));
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        assert_eq!(parabolic_distance(&[0.0, 0.0], 0.0, &[3.0, 4.0], 0.0), 5.0);
        assert_eq!(parabolic_distance(&[0.0], 0.0, &[0.0], 4.0), 2.0);
    }

    #[test]
    fn grid_ravel_roundtrip() {
        let g = Grid::new(vec![0.0, -1.0, 2.0], vec![3, 4, 5], 0.5).unwrap();
        for lin in 0..g.len() {
            assert_eq!(g.ravel(&g.unravel(lin)), lin);
        }
        assert_eq!(g.strides(), vec![20, 5, 1]);
    }

    #[test]
    fn derivatives_exact_on_quadratics() {
        let grid = Grid::centered(&[0.0, 0.0], 0.5, 0.125, 1).unwrap();
        let time = TimeAxis::new(0.0, 1.0, 1).unwrap();
        let f = SpaceTimeField::from_fn(grid, time, |x, _| {
            1.0 + 2.0 * x[0] - x[1] + 3.0 * x[0] * x[0] + 0.5 * x[0] * x[1] - x[1] * x[1]
        });
        let idx = [3, 6];
        let x = f.grid.position(&idx);
        let (g, hm) = f.gradient_hessian(0, &idx).unwrap();
        assert!((g[0] - (2.0 + 6.0 * x[0] + 0.5 * x[1])).abs() < 1e-12);
        assert!((g[1] - (-1.0 + 0.5 * x[0] - 2.0 * x[1])).abs() < 1e-12);
        assert!((hm[(0, 0)] - 6.0).abs() < 1e-10);
        assert!((hm[(0, 1)] - 0.5).abs() < 1e-10);
        assert!((hm[(1, 1)] + 2.0).abs() < 1e-10);
    }

    #[test]
    fn hessian_error_is_second_order() {
        let err = |h: f64| {
            let grid = Grid::centered(&[0.3], 0.5, h, 1).unwrap();
            let time = TimeAxis::new(0.0, 1.0, 1).unwrap();
            let f = SpaceTimeField::from_fn(grid, time, |x, _| x[0].sin());
            let mut e: f64 = 0.0;
            for i in 1..f.grid.shape[0] - 1 {
                let x = f.grid.coord(0, i);
                let (_, hm) = f.gradient_hessian(0, &[i]).unwrap();
                e = e.max((hm[(0, 0)] + x.sin()).abs());
            }
            e
        };
        let ratio = err(1.0 / 16.0) / err(1.0 / 32.0);
        println!("hessian error ratio {ratio}");
        assert!(ratio >= 3.5, "ratio {ratio}");
    }

    #[test]
    fn stencil_touching_masked_node_is_rejected() {
        let grid = Grid::centered(&[0.0], 0.5, 0.25, 0).unwrap();
        let time = TimeAxis::new(0.0, 1.0, 1).unwrap();
        let mut f = SpaceTimeField::from_fn(grid, time, |x, _| x[0]);
        f.mask[1] = false;
        assert!(matches!(
            f.gradient_hessian(0, &[2]),
            Err(Error::StencilCrossesMask { .. })
        ));
        assert!(f.gradient_hessian(0, &[0]).is_err());
    }

    #[test]
    fn holder_examples() {
        let grid = Grid::centered(&[0.0, 0.0], 1.0, 0.125, 0).unwrap();
        let time = TimeAxis::spanning(0.0, 1.0, 9).unwrap();
        let lin = SpaceTimeField::from_fn(grid.clone(), time.clone(), |x, _| x[0]);
        let s = lin.holder_seminorm(1.0, 4000, 3);
        assert!((s - 1.0).abs() < 1e-12, "seminorm {s}");
        let half = SpaceTimeField::from_fn(grid, time, |_, t| t.abs().sqrt());
        assert!(half.holder_seminorm(1.0, 4000, 3) <= 1.0 + 1e-9);
    }

    #[test]
    fn holder_nondecreasing_in_pairs() {
        let grid = Grid::centered(&[0.0], 1.0, 0.0625, 0).unwrap();
        let time = TimeAxis::spanning(0.0, 0.5, 11).unwrap();
        let f = SpaceTimeField::from_fn(grid, time, |x, t| (3.0 * x[0]).sin() * (-t).exp());
        let mut last = 0.0;
        for pairs in [10, 100, 1000, 5000] {
            let s = f.holder_seminorm(0.5, pairs, 11);
            assert!(s >= last);
            last = s;
        }
    }

    proptest! {
        #[test]
        fn distance_scaling(x in prop::collection::vec(-2.0f64..2.0, 3), y in prop::collection::vec(-2.0f64..2.0, 3),
                            t in -1.0f64..1.0, s in -1.0f64..1.0, r in 0.01f64..5.0) {
            let d = parabolic_distance(&x, t, &y, s);
            let xs: Vec<f64> = x.iter().map(|v| v * r).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * r).collect();
            let ds = parabolic_distance(&xs, r * r * t, &ys, r * r * s);
            prop_assert!((ds - r * d).abs() <= 1e-12 * (1.0 + r * d));
            prop_assert!((parabolic_distance(&y, s, &x, t) - d).abs() == 0.0);
        }

        #[test]
        fn distance_quasi_triangle(x in prop::collection::vec(-2.0f64..2.0, 2), y in prop::collection::vec(-2.0f64..2.0, 2),
                                   z in prop::collection::vec(-2.0f64..2.0, 2),
                                   t in -1.0f64..1.0, s in -1.0f64..1.0, r in -1.0f64..1.0) {
            let lhs = parabolic_distance(&x, t, &z, r);
            let rhs = parabolic_distance(&x, t, &y, s) + parabolic_distance(&y, s, &z, r);
            prop_assert!(lhs <= rhs + 1e-12);
        }
    }
}
