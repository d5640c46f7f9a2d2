//! End-to-end experiments: simulate, check the hypotheses of the trapping
//! theorem on the data, fit the trapping planes per `eta`, and certify the
//! auxiliary barriers.
//!
//! Every stage failure is recorded in the report instead of aborting.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::{
    certify, lemma31_search, section3_search, BarrierCertificate, CubicSpline, Lemma31Search,
    Region, Sampling, TravelingWaveCandidate,
};
use crate::elliptic::EllipticOperatorSpec;
use crate::error::{invalid, Result};
use crate::geometry::{
    fit_trapping, measure_flatness, nondeg_integral, FlatnessReport, NondegSpec, TrappingFit,
};
use crate::solver::hopf_lower_bound;
use crate::stefan::{
    simulate, InitialData, Source, SpaceTimeSolution, StefanScenario, TopBoundary,
};

/// Analysis options for [`run_theorem_experiment`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoremOptions {
    pub eta_sweep: Vec<f64>,
    pub alpha0: f64,
    pub p0: f64,
    /// Flatness threshold per `eta`; `None` means `eta^2 / 10`.
    pub eps_threshold: Option<f64>,
    /// Center of the flatness ball; the origin when absent.
    pub flat_center: Option<Vec<f64>>,
    /// Radius of the flatness ball; `lambda` when absent.
    pub flat_radius: Option<f64>,
    pub direction_samples: usize,
    pub nondeg_radii: Vec<f64>,
    pub nondeg_times: usize,
    /// Radius of the sphere scanned for nondegeneracy centers.
    pub nondeg_sphere: f64,
    pub certify: bool,
    pub certify_samples: usize,
    pub seed: u64,
}

impl Default for TheoremOptions {
    fn default() -> Self {
        Self {
            eta_sweep: vec![0.2, 0.1, 0.05],
            alpha0: 1.0,
            p0: 0.5,
            eps_threshold: None,
            flat_center: None,
            flat_radius: None,
            direction_samples: 64,
            nondeg_radii: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0],
            nondeg_times: 8,
            nondeg_sphere: 0.75,
            certify: true,
            certify_samples: 2000,
            seed: 0,
        }
    }
}

impl TheoremOptions {
    pub fn threshold(&self, eta: f64) -> f64 {
        self.eps_threshold.unwrap_or(eta * eta / 10.0)
    }
}

/// Stage at which an experiment stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

/// Nondegeneracy scan at one `t0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NondegVerdict {
    pub t0: f64,
    pub pass: bool,
    /// Witness center, if one passed for every radius.
    pub x0: Option<Vec<f64>>,
    /// Largest over centers of the smallest over radii of `value / threshold`.
    pub best_ratio: f64,
    pub centers_scanned: usize,
}

/// One row of the `eta` sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EtaRow {
    pub eta: f64,
    pub threshold: f64,
    pub eps_ok: bool,
    pub residual: f64,
    pub ode_defect: f64,
    pub a_min: f64,
    pub a_max: f64,
    /// Largest `|a_bar_eta'|` over the window, against the bound `eta^{beta - 2}`.
    pub a_prime_max: f64,
    pub a_prime_ok: bool,
    pub edge_levels: usize,
    pub passes: bool,
    pub error: Option<String>,
}

/// Perturbed-plane search outcome for one `eta`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Section3Summary {
    pub eta: f64,
    pub attempts: usize,
    pub chosen: Option<(f64, f64, f64)>,
    pub error: Option<String>,
}

/// Measured slope minimum against the interior linear growth rate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HopfProbe {
    pub center: Vec<f64>,
    pub radius: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub mu: f64,
    pub a_min: f64,
    /// `a_min / (1 + |f^-|)`.
    pub normalized_a_min: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TheoremReport {
    pub scenario: StefanScenario,
    pub options: TheoremOptions,
    pub epsilon0: Option<f64>,
    pub flatness: Option<FlatnessReport>,
    pub bounds_pass: bool,
    pub u_max: f64,
    pub intercept: Option<f64>,
    pub intercept_ok: bool,
    pub nondeg: Vec<NondegVerdict>,
    pub nondeg_pass: bool,
    pub eta_rows: Vec<EtaRow>,
    pub fits: Vec<TrappingFit>,
    pub certificates: Vec<BarrierCertificate>,
    pub section3: Vec<Section3Summary>,
    pub hopf_probe: Option<HopfProbe>,
    pub hypothesis_pass: bool,
    pub conclusion_tested: bool,
    pub conclusion_pass: bool,
    pub failure: Option<StageFailure>,
}

impl TheoremReport {
    fn empty(scenario: StefanScenario, options: TheoremOptions) -> Self {
        Self {
            scenario,
            options,
            epsilon0: None,
            flatness: None,
            bounds_pass: false,
            u_max: f64::NAN,
            intercept: None,
            intercept_ok: false,
            nondeg: Vec::new(),
            nondeg_pass: false,
            eta_rows: Vec::new(),
            fits: Vec::new(),
            certificates: Vec::new(),
            section3: Vec::new(),
            hopf_probe: None,
            hypothesis_pass: false,
            conclusion_tested: false,
            conclusion_pass: false,
            failure: None,
        }
    }

    fn fail(mut self, stage: &str, message: impl ToString) -> Self {
        self.failure = Some(StageFailure {
            stage: stage.into(),
            message: message.to_string(),
        });
        self
    }

    /// Exit status of the experiment: hypotheses and conclusion hold and no stage failed.
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.hypothesis_pass && self.conclusion_pass
    }
}

/// `scenario` with the storage interval refined to `min(eta)^2 / 8`, the
/// finest spacing the slope mollifier accepts.
pub fn prepare_scenario(scenario: &StefanScenario, options: &TheoremOptions) -> StefanScenario {
    let mut sc = scenario.clone();
    if let Some(eta) = options
        .eta_sweep
        .iter()
        .copied()
        .filter(|e| *e > 0.0)
        .reduce(f64::min)
    {
        sc.store_dt = sc.store_dt.min(eta * eta / 8.0);
    }
    sc
}

/// Simulates `scenario` (after [`prepare_scenario`]) and analyzes the result.
pub fn run_theorem_experiment(
    scenario: &StefanScenario,
    options: &TheoremOptions,
) -> (Option<SpaceTimeSolution>, TheoremReport) {
    let scenario = &prepare_scenario(scenario, options);
    match simulate(scenario) {
        Ok(sol) => {
            let report = analyze_solution(&sol, options);
            (Some(sol), report)
        }
        Err(e) => (
            None,
            TheoremReport::empty(scenario.clone(), options.clone()).fail("simulate", e),
        ),
    }
}

/// Runs every analysis stage on a stored solution.
pub fn analyze_solution(sol: &SpaceTimeSolution, options: &TheoremOptions) -> TheoremReport {
    let sc = &sol.scenario;
    let mut rep = TheoremReport::empty(sc.clone(), options.clone());
    let field = &sol.field;
    let n = sc.n;
    let lambda = sc.lambda;

    rep.u_max = field
        .values
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let u_min = field.values.iter().copied().fold(f64::INFINITY, f64::min);
    rep.bounds_pass = u_min >= 0.0 && rep.u_max <= sc.k;

    match sol.front.intercepts() {
        Ok(b) => {
            let last = *b.last().expect("at least one level");
            rep.intercept = Some(last);
            rep.intercept_ok = last.abs() <= 2.0 * sc.h;
        }
        Err(e) => return rep.fail("intercept", e),
    }

    let center = options.flat_center.clone().unwrap_or_else(|| vec![0.0; n]);
    let radius = options
        .flat_radius
        .unwrap_or(if lambda > 0.0 { lambda } else { 1.0 });
    match measure_flatness(
        &sol.front,
        field,
        &center,
        radius,
        options.direction_samples,
    ) {
        Ok(f) => {
            rep.epsilon0 = Some(f.epsilon);
            rep.flatness = Some(f);
        }
        Err(e) => return rep.fail("flatness", e),
    }

    let spec = match NondegSpec::new(
        options.p0,
        sc.k,
        sc.source.negative_part_norm(),
        sc.source.sup_norm(),
    ) {
        Ok(s) => s,
        Err(e) => return rep.fail("nondegeneracy", e),
    };
    rep.nondeg = nondeg_scan(sol, &spec, options);
    rep.nondeg_pass = !rep.nondeg.is_empty() && rep.nondeg.iter().all(|v| v.pass);
    if rep.nondeg.is_empty() {
        return rep.fail(
            "nondegeneracy",
            "no admissible (x0, t0, r) cylinder fits in the stored data",
        );
    }

    let eps = rep.epsilon0.unwrap_or(f64::INFINITY);
    let bounds_etc = rep.bounds_pass && rep.intercept_ok && rep.nondeg_pass;
    let operator = sc.operator.clone();
    for &eta in &options.eta_sweep {
        let threshold = options.threshold(eta);
        let eps_ok = eps <= threshold;
        match fit_trapping(sol, eta, options.alpha0) {
            Ok(fit) => {
                let window = eta_window(&fit);
                let (a_min, a_max) = window
                    .iter()
                    .map(|&k| fit.a_bar_smooth[k])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    });
                let dt = field.time.dt;
                let a_prime_max = window
                    .windows(2)
                    .map(|w| ((fit.a_bar_smooth[w[1]] - fit.a_bar_smooth[w[0]]) / dt).abs())
                    .fold(0.0, f64::max);
                let a_prime_ok = a_prime_max <= eta.powf(fit.beta - 2.0);
                rep.eta_rows.push(EtaRow {
                    eta,
                    threshold,
                    eps_ok,
                    residual: fit.residual,
                    ode_defect: fit.ode_defect,
                    a_min,
                    a_max,
                    a_prime_max,
                    a_prime_ok,
                    edge_levels: fit.edge_levels,
                    passes: fit.residual <= 1.0,
                    error: None,
                });
                if options.certify {
                    rep.section3
                        .push(section3_for(&fit, n, &operator, spec.f_neg_norm, options));
                }
                rep.fits.push(fit);
            }
            Err(e) => rep.eta_rows.push(EtaRow {
                eta,
                threshold,
                eps_ok,
                residual: f64::NAN,
                ode_defect: f64::NAN,
                a_min: f64::NAN,
                a_max: f64::NAN,
                a_prime_max: f64::NAN,
                a_prime_ok: false,
                edge_levels: 0,
                passes: false,
                error: Some(e.to_string()),
            }),
        }
    }

    rep.hypothesis_pass = bounds_etc && rep.eta_rows.iter().any(|r| r.eps_ok);
    rep.conclusion_tested = rep.hypothesis_pass;
    rep.conclusion_pass =
        rep.conclusion_tested && rep.eta_rows.iter().filter(|r| r.eps_ok).all(|r| r.passes);

    if options.certify {
        if let Some(wave) = sc.wave() {
            let cand = TravelingWaveCandidate { wave, n };
            let region = Region::ball(vec![0.0; n], 0.5, sc.t_start, sc.t_end);
            match certify(
                &cand,
                &operator,
                spec.f_norm,
                lambda,
                &region,
                Sampling::Halton {
                    count: options.certify_samples,
                },
                options.seed,
            ) {
                Ok(c) => rep.certificates.push(c),
                Err(e) => return rep.fail("certify", e),
            }
        }
        for (s, fit) in rep.section3.iter().zip(&rep.fits) {
            if s.chosen.is_some() {
                let region = Region::comoving(
                    2.0 * fit.eta,
                    n,
                    fit.times[0].max(sc.t_end - fit.eta / lambda),
                    sc.t_end,
                );
                if let Ok(spline) = spline_of(fit) {
                    let (c1, c2, c3) = s.chosen.expect("checked");
                    if let Ok(v) = crate::barrier::section3_v(
                        n, fit.eta, fit.gamma, lambda, spline, c1, c2, c3,
                    ) {
                        if let Ok(c) = certify(
                            &v,
                            &operator,
                            spec.f_neg_norm,
                            lambda,
                            &region,
                            Sampling::Halton {
                                count: options.certify_samples,
                            },
                            options.seed,
                        ) {
                            rep.certificates.push(c);
                        }
                    }
                }
            }
        }
    }

    rep.hopf_probe = hopf_probe(sol, &rep, spec.f_neg_norm);
    rep
}

fn eta_window(fit: &TrappingFit) -> Vec<usize> {
    let t_end = *fit.times.last().expect("levels");
    let start = t_end - fit.eta / fit.lambda;
    (0..fit.times.len())
        .filter(|&k| fit.times[k] >= start - 1e-12)
        .collect()
}

fn spline_of(fit: &TrappingFit) -> Result<Arc<CubicSpline>> {
    let dt = if fit.times.len() > 1 {
        fit.times[1] - fit.times[0]
    } else {
        1.0
    };
    Ok(Arc::new(CubicSpline::new(
        fit.times[0],
        dt,
        fit.a_bar_smooth.clone(),
    )?))
}

fn section3_for(
    fit: &TrappingFit,
    n: usize,
    operator: &EllipticOperatorSpec,
    f_neg: f64,
    options: &TheoremOptions,
) -> Section3Summary {
    let run = || -> Result<(usize, Option<(f64, f64, f64)>)> {
        let spline = spline_of(fit)?;
        let s = section3_search(
            n,
            fit.eta,
            fit.gamma,
            fit.lambda,
            spline,
            operator,
            f_neg,
            Sampling::Halton {
                count: options.certify_samples,
            },
            options.seed,
        )?;
        Ok((s.attempts.len(), s.chosen))
    };
    match run() {
        Ok((attempts, chosen)) => Section3Summary {
            eta: fit.eta,
            attempts,
            chosen,
            error: None,
        },
        Err(e) => Section3Summary {
            eta: fit.eta,
            attempts: 0,
            chosen: None,
            error: Some(e.to_string()),
        },
    }
}

/// Sample times `t0` in `(t_start, t_end - r_max^2 / K]` and, per time,
/// scans grid nodes within `h/2` of the sphere of radius `nondeg_sphere`.
/// A time passes when some center passes for every radius.
fn nondeg_scan(
    sol: &SpaceTimeSolution,
    spec: &NondegSpec,
    options: &TheoremOptions,
) -> Vec<NondegVerdict> {
    let field = &sol.field;
    let sc = &sol.scenario;
    let h = field.grid.h;
    let r_max = options.nondeg_radii.iter().copied().fold(0.0, f64::max);
    let t_lo = field.time.t0;
    let t_hi = field.time.t_end() - r_max * r_max / spec.k;
    if !(t_hi > t_lo) || options.nondeg_times == 0 {
        return Vec::new();
    }
    let centers: Vec<Vec<f64>> = (0..field.nodes())
        .map(|i| field.grid.position_of(i))
        .filter(|x| {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            (r - options.nondeg_sphere).abs() <= 0.5 * h && field.grid.contains_ball(x, r_max)
        })
        .collect();
    let threshold = spec.integral_threshold(sc.lambda);
    let m = options.nondeg_times;
    (1..=m)
        .map(|j| {
            let t0 = t_lo + (t_hi - t_lo) * j as f64 / m as f64;
            let mut best_ratio = 0.0f64;
            let mut witness = None;
            for x0 in &centers {
                let mut worst = f64::INFINITY;
                for &r in &options.nondeg_radii {
                    match nondeg_integral(field, x0, t0, r, spec, sc.lambda) {
                        Ok((v, _)) => worst = worst.min(v / threshold),
                        Err(_) => worst = f64::NEG_INFINITY,
                    }
                }
                if worst > best_ratio {
                    best_ratio = worst;
                }
                if worst >= 1.0 && witness.is_none() {
                    witness = Some(x0.clone());
                }
            }
            NondegVerdict {
                t0,
                pass: witness.is_some(),
                x0: witness,
                best_ratio,
                centers_scanned: centers.len(),
            }
        })
        .collect()
}

/// Linear growth rate on `B_{1/8}` around the point `3/4 e_n` over the last
/// half of the run, next to the smallest fitted slope.
fn hopf_probe(sol: &SpaceTimeSolution, rep: &TheoremReport, f_neg: f64) -> Option<HopfProbe> {
    let field = &sol.field;
    let n = field.dim();
    let mut center = vec![0.0; n];
    center[n - 1] = 0.75;
    let radius = 0.125;
    if !field.grid.contains_ball(&center, radius) {
        return None;
    }
    let t_hi = field.time.t_end();
    let t_lo = field.time.t0 + 0.5 * (t_hi - field.time.t0);
    let mu = hopf_lower_bound(field, &center, radius, t_lo, t_hi).ok()?;
    let a_min = rep
        .eta_rows
        .iter()
        .filter(|r| r.error.is_none())
        .map(|r| r.a_min)
        .fold(f64::INFINITY, f64::min);
    Some(HopfProbe {
        center,
        radius,
        t_lo,
        t_hi,
        mu,
        a_min,
        normalized_a_min: a_min / (1.0 + f_neg),
    })
}

/// Options for [`lemma31_experiment`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lemma31Options {
    pub n: usize,
    #[serde(rename = "K")]
    pub k: f64,
    pub h: f64,
    pub operator: EllipticOperatorSpec,
    pub source: f64,
    pub lambdas: Vec<f64>,
    pub certify_samples: usize,
    pub seed: u64,
}

impl Default for Lemma31Options {
    fn default() -> Self {
        Self {
            n: 2,
            k: 2.0,
            h: 1.0 / 32.0,
            operator: EllipticOperatorSpec::trace(),
            source: 0.0,
            lambdas: vec![0.1, 0.05],
            certify_samples: 4000,
            seed: 0,
        }
    }
}

/// Front penetration for one `lambda`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PenetrationRow {
    pub lambda: f64,
    /// `1 - s(0, 1)`: how far the front advanced into `{x_n < 1}` by `t = 1`.
    pub depth: f64,
    /// Bound from the certified barrier, `C0 (1 + sigma) lambda`.
    pub bound: Option<f64>,
    pub within_bound: Option<bool>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Lemma31Report {
    pub options: Lemma31Options,
    pub rows: Vec<PenetrationRow>,
    /// Least-squares `C` in `depth = C lambda` over the nonzero `lambda`.
    pub fitted_c: Option<f64>,
    /// Ratio of depths for the first two positive `lambda`, with their ratio of `lambda`.
    pub depth_ratio: Option<(f64, f64)>,
    /// Search against the scenario's own operator; its certified barrier gives the bound.
    pub search: Option<Lemma31Search>,
    /// Search against `M^+_K` with `K` the data bound, covering every `K`-elliptic operator.
    pub search_uniform: Option<Lemma31Search>,
    pub failure: Option<StageFailure>,
}

impl Lemma31Report {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
            && self
                .rows
                .iter()
                .all(|r| r.error.is_none() && r.within_bound.unwrap_or(true))
    }
}

/// The planar scenario: zero temperature below `x_n = 1`, `u = K (x_n - 1)^+`
/// above, data held fixed on top, over `t in [0, 1]`.
pub fn lemma31_scenario(opts: &Lemma31Options, lambda: f64) -> StefanScenario {
    let n = opts.n;
    let mut lower = vec![-0.5; n];
    let mut upper = vec![0.5; n];
    lower[n - 1] = 0.5;
    upper[n - 1] = 2.0;
    StefanScenario {
        n,
        operator: opts.operator.clone(),
        lambda,
        k: opts.k,
        source: Source::Constant { value: opts.source },
        initial: InitialData::Plane {
            slope: opts.k,
            height: 1.0,
            tilt: Vec::new(),
        },
        top: TopBoundary::HoldInitial,
        lower,
        upper,
        h: opts.h,
        t_start: 0.0,
        t_end: 1.0,
        store_dt: 0.05,
    }
}

/// Measures how far the front penetrates `{x_n < 1}` by `t = 1` per
/// `lambda`, fits `depth = C lambda`, and checks `depth <= C0 (1 + sigma) lambda`
/// with the constants of the first certified radial barrier.
pub fn lemma31_experiment(opts: &Lemma31Options) -> Lemma31Report {
    let mut report = Lemma31Report {
        options: opts.clone(),
        rows: Vec::new(),
        fitted_c: None,
        depth_ratio: None,
        search: None,
        search_uniform: None,
        failure: None,
    };
    if opts.lambdas.is_empty() {
        report.failure = Some(StageFailure {
            stage: "validate".into(),
            message: invalid("empty lambda list").to_string(),
        });
        return report;
    }
    let positive: Vec<f64> = opts.lambdas.iter().copied().filter(|&l| l > 0.0).collect();
    if !positive.is_empty() {
        let sampling = Sampling::Halton {
            count: opts.certify_samples,
        };
        let uniform = EllipticOperatorSpec::pucci_plus(opts.k.max(opts.operator.k));
        match lemma31_search(
            opts.n,
            opts.k,
            &positive,
            opts.source.max(0.0),
            &opts.operator,
            sampling,
            opts.seed,
        )
        .and_then(|s| {
            Ok((
                s,
                lemma31_search(
                    opts.n,
                    opts.k,
                    &positive,
                    opts.source.max(0.0),
                    &uniform,
                    sampling,
                    opts.seed,
                )?,
            ))
        }) {
            Ok((s, u)) => {
                report.search = Some(s);
                report.search_uniform = Some(u);
            }
            Err(e) => {
                report.failure = Some(StageFailure {
                    stage: "certify".into(),
                    message: e.to_string(),
                })
            }
        }
    }
    let speed = report
        .search
        .as_ref()
        .and_then(|s| s.certified.as_ref())
        .map(|c| {
            let c0 = c.constants["c0"].as_f64().unwrap_or(f64::NAN);
            let sigma = c.constants["sigma"].as_f64().unwrap_or(f64::NAN);
            c0 * (1.0 + sigma)
        });
    let row = |lambda: f64| match simulate(&lemma31_scenario(opts, lambda)).and_then(|sol| {
        let k = sol.front.time.levels - 1;
        sol.front.height_at(k, &vec![0.0; opts.n - 1])
    }) {
        Ok(s) => {
            let depth = (1.0 - s).max(0.0);
            let bound = speed.map(|c| c * lambda);
            PenetrationRow {
                lambda,
                depth,
                bound,
                within_bound: bound.map(|b| depth <= b),
                error: None,
            }
        }
        Err(e) => PenetrationRow {
            lambda,
            depth: f64::NAN,
            bound: None,
            within_bound: None,
            error: Some(e.to_string()),
        },
    };
    report.rows = crate::parallel::install(|| opts.lambdas.par_iter().map(|&l| row(l)).collect());
    let good: Vec<&PenetrationRow> = report
        .rows
        .iter()
        .filter(|r| r.error.is_none() && r.lambda > 0.0)
        .collect();
    if !good.is_empty() {
        let num: f64 = good.iter().map(|r| r.lambda * r.depth).sum();
        let den: f64 = good.iter().map(|r| r.lambda * r.lambda).sum();
        report.fitted_c = Some(num / den);
    }
    if good.len() >= 2 {
        report.depth_ratio = Some((
            good[0].depth / good[1].depth,
            good[0].lambda / good[1].lambda,
        ));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lemma31_frozen_front_does_not_move() {
        let opts = Lemma31Options {
            lambdas: vec![0.0],
            h: 1.0 / 16.0,
            ..Default::default()
        };
        let rep = lemma31_experiment(&opts);
        assert_eq!(rep.rows.len(), 1);
        assert_eq!(rep.rows[0].depth, 0.0);
        assert!(rep.search.is_none());
    }

    #[test]
    fn degenerate_wave_fails_hypotheses() {
        let mut sc = StefanScenario::traveling_wave(2, 0.5, 0.5, 4.0, 1.0 / 32.0);
        sc.initial = InitialData::TravelingWave {
            c: 0.5,
            scale: 1e-3,
        };
        sc.t_start = -0.25;
        let opts = TheoremOptions {
            eta_sweep: vec![0.2],
            certify: false,
            nondeg_times: 3,
            ..Default::default()
        };
        let (_, rep) = run_theorem_experiment(&sc, &opts);
        assert!(rep.failure.is_none(), "{:?}", rep.failure);
        assert!(!rep.nondeg_pass);
        assert!(!rep.hypothesis_pass);
        assert!(!rep.conclusion_tested && !rep.conclusion_pass);
    }

    #[test]
    fn invalid_scenario_yields_partial_report() {
        let mut sc = StefanScenario::traveling_wave(2, 0.5, 0.5, 4.0, 1.0 / 16.0);
        sc.h = -1.0;
        let (sol, rep) = run_theorem_experiment(&sc, &TheoremOptions::default());
        assert!(sol.is_none());
        assert_eq!(rep.failure.unwrap().stage, "simulate");
    }
}
