//! Monte Carlo estimators of potential-theoretic quantities of the killed
//! process: harmonic ratios, exit-time scaling, boundary Harnack and
//! Carleson constants, Green function values, occupation integrals and
//! lifetime growth.
//!
//! Every grid point is estimated with its own seed (derived from the
//! configured one), so the per-point estimates are independent.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sphere_area, BoxDomain, HPoint};
use crate::quad::{integrate_1d, QuadSpec};
use crate::sim::{path_rng, scaling_transport, EstimateWithCI, Functional, Outcome, PointFn, SimConfig, Simulator};
use crate::stats::{exponent_fit, ks_two_sample, linear_fit, LinearFit, TestOutcome};

pub type ExponentFit = LinearFit;

/// SplitMix64 finaliser; used to derive independent seeds per grid point.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn reseeded(sim: &Simulator, tag: u64) -> Result<Simulator> {
    let cfg = SimConfig {
        seed: derive_seed(sim.config().seed, tag),
        ..sim.config().clone()
    };
    sim.with_config(&cfg)
}

fn require_recurrent_regime(sim: &Simulator, what: &str) -> Result<f64> {
    let alpha = sim.params().alpha;
    if !(alpha > 1.0) {
        return Err(Error::ParameterOutOfRange(format!("{what} needs alpha > 1, got {alpha}")));
    }
    Ok(alpha)
}

/// Estimates normalised point by point, with ratio statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub grid: Vec<HPoint>,
    pub estimates: Vec<EstimateWithCI>,
    pub normalisers: Vec<f64>,
    /// `estimate / normaliser`.
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub ci95: Vec<(f64, f64)>,
    /// `max values / min values`.
    pub sup_inf_ratio: f64,
    /// `max lower CI / min upper CI`, a conservative lower bound.
    pub ci_ratio_lower: f64,
    /// `max upper CI / min lower CI` (infinite if a lower CI is not positive).
    pub ci_ratio_upper: f64,
}

impl RatioReport {
    fn new(grid: Vec<HPoint>, estimates: Vec<EstimateWithCI>, normalisers: Vec<f64>) -> Self {
        let values: Vec<f64> = estimates.iter().zip(&normalisers).map(|(e, n)| e.mean / n).collect();
        let std_errors: Vec<f64> = estimates.iter().zip(&normalisers).map(|(e, n)| e.std_error / n).collect();
        Self::from_values(grid, estimates, normalisers, values, std_errors)
    }

    fn from_values(
        grid: Vec<HPoint>,
        estimates: Vec<EstimateWithCI>,
        normalisers: Vec<f64>,
        values: Vec<f64>,
        std_errors: Vec<f64>,
    ) -> Self {
        let ci95: Vec<(f64, f64)> = values
            .iter()
            .zip(&std_errors)
            .map(|(v, s)| (v - 1.96 * s, v + 1.96 * s))
            .collect();
        let max = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
        let min = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::INFINITY, f64::min);
        let sup_inf_ratio = max(&mut values.iter().copied()) / min(&mut values.iter().copied());
        let lo_max = max(&mut ci95.iter().map(|c| c.0));
        let lo_min = min(&mut ci95.iter().map(|c| c.0));
        let hi_max = max(&mut ci95.iter().map(|c| c.1));
        let hi_min = min(&mut ci95.iter().map(|c| c.1));
        let ci_ratio_lower = (lo_max / hi_min).max(1.0);
        let ci_ratio_upper = if lo_min > 0.0 { hi_max / lo_min } else { f64::INFINITY };
        Self {
            grid,
            estimates,
            normalisers,
            values,
            std_errors,
            ci95,
            sup_inf_ratio,
            ci_ratio_lower,
            ci_ratio_upper,
        }
    }

    /// Whether every value's CI, widened by `budget` on both sides,
    /// contains `target`.
    pub fn all_contain(&self, target: f64, budget: f64) -> bool {
        self.ci95.iter().all(|(lo, hi)| lo - budget <= target && target <= hi + budget)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_upper(&self) -> f64 {
        self.ci95.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_lower(&self) -> f64 {
        self.ci95.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Log-log fit of the raw estimates against the heights of the grid.
    pub fn height_exponent(&self) -> Result<ExponentFit> {
        let h: Vec<f64> = self.grid.iter().map(|p| p.height()).collect();
        let m: Vec<f64> = self.estimates.iter().map(|e| e.mean).collect();
        fit_at_least_four(&h, &m)
    }
}

fn fit_at_least_four(x: &[f64], y: &[f64]) -> Result<ExponentFit> {
    if x.len() < 4 {
        return Err(Error::Usage("exponent fits need at least four points".into()));
    }
    exponent_fit(x, y)
}

fn g_alpha_minus_one(alpha: f64) -> PointFn {
    Arc::new(move |x: &HPoint| x.height().max(0.0).powf(alpha - 1.0))
}

/// `E_x[g(Y_tau)] / g(x)` for `g = x_d^{alpha-1}` and the strip `U(r)`.
pub fn harmonicity_defect(sim: &Simulator, x_grid: &[HPoint], r: f64, n_paths: u64) -> Result<RatioReport> {
    let alpha = require_recurrent_regime(sim, "harmonicity_defect")?;
    let dom = BoxDomain::strip(r);
    let g = g_alpha_minus_one(alpha);
    let mut est = Vec::new();
    for (i, x) in x_grid.iter().enumerate() {
        if !dom.contains(x) {
            return Err(Error::ConstraintViolation(format!("{x:?} is not in U({r})")));
        }
        est.push(reseeded(sim, i as u64)?.estimate(x, &dom, &Functional::Terminal(g.clone()), n_paths)?);
    }
    let norm = x_grid.iter().map(|x| x.height().powf(alpha - 1.0)).collect();
    Ok(RatioReport::new(x_grid.to_vec(), est, norm))
}

/// Harmonic ratio at one point for a sequence of truncation fractions,
/// with the extrapolation to `delta -> 0` in powers of `delta^{2-alpha}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaStudy {
    pub point: HPoint,
    pub deltas: Vec<f64>,
    pub ratios: Vec<EstimateWithCI>,
    pub extrapolated: f64,
    pub extrapolated_std_error: f64,
}

pub fn harmonicity_delta_study(
    sim: &Simulator,
    x: &HPoint,
    r: f64,
    deltas: &[f64],
    n_paths: u64,
) -> Result<DeltaStudy> {
    let alpha = require_recurrent_regime(sim, "harmonicity_delta_study")?;
    if deltas.len() < 2 {
        return Err(Error::Usage("the delta study needs at least two deltas".into()));
    }
    let mut ratios = Vec::new();
    for (i, d) in deltas.iter().enumerate() {
        let cfg = SimConfig {
            delta: *d,
            seed: derive_seed(sim.config().seed, 1000 + i as u64),
            ..sim.config().clone()
        };
        let rep = harmonicity_defect(&sim.with_config(&cfg)?, std::slice::from_ref(x), r, n_paths)?;
        let e = rep.estimates[0];
        let n = rep.normalisers[0];
        ratios.push(EstimateWithCI::from_moments(e.mean / n, e.std_error / n, e.n_samples, e.n_excluded));
    }
    // Interpolate v(delta) = sum_k c_k delta^{k(2-alpha)} through all points;
    // c_0 = sum_i w_i v_i with w the first row of the inverse matrix.
    let q = 2.0 - alpha;
    let m = deltas.len();
    let weights = first_row_of_inverse(&deltas.iter().map(|d| (0..m).map(|k| d.powf(k as f64 * q)).collect()).collect::<Vec<Vec<f64>>>())?;
    let extrapolated = weights.iter().zip(&ratios).map(|(w, e)| w * e.mean).sum();
    let extrapolated_std_error = weights
        .iter()
        .zip(&ratios)
        .map(|(w, e)| (w * e.std_error).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(DeltaStudy {
        point: *x,
        deltas: deltas.to_vec(),
        ratios,
        extrapolated,
        extrapolated_std_error,
    })
}

/// Weights `w` with `w . v = c_0` for the system `A c = v`, i.e. the first
/// row of `A^{-1}`.
fn first_row_of_inverse(a: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = a.len();
    // Solve A^T w = e_0.
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a[j][i]).collect()).collect();
    let mut b = vec![0.0; n];
    b[0] = 1.0;
    for c in 0..n {
        let piv = (c..n)
            .max_by(|x, y| m[*x][c].abs().total_cmp(&m[*y][c].abs()))
            .expect("non-empty");
        if m[piv][c].abs() < 1e-14 {
            return Err(Error::DegenerateSample("singular extrapolation system".into()));
        }
        m.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for j in c..n {
                m[r][j] -= f * m[c][j];
            }
            b[r] -= f * b[c];
        }
    }
    let mut w = vec![0.0; n];
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|j| m[c][j] * w[j]).sum();
        w[c] = (b[c] - s) / m[c][c];
    }
    Ok(w)
}

/// `E_{r x0} tau_{rV} / (r^alpha E_{x0} tau_V)` for each `r`. The run at
/// scale `r` measures its absorption height in units of `r`.
pub fn exit_time_scaling_check(
    sim: &Simulator,
    x0: &HPoint,
    v: &BoxDomain,
    r_list: &[f64],
    n_paths: u64,
) -> Result<RatioReport> {
    let alpha = sim.params().alpha;
    let at_scale = |r: f64| -> Result<EstimateWithCI> {
        let cfg = SimConfig {
            seed: derive_seed(sim.config().seed, r.to_bits()),
            ..sim.config().scaled(r, alpha)
        };
        sim.with_config(&cfg)?
            .estimate(&x0.scaled(r), &v.scaled(r), &Functional::ExitTime, n_paths)
    };
    let base = at_scale(1.0)?;
    let mut est = Vec::new();
    let mut values = Vec::new();
    let mut ses = Vec::new();
    for r in r_list {
        let e = at_scale(*r)?;
        let ratio = e.mean / (r.powf(alpha) * base.mean);
        let rel = if *r == 1.0 {
            0.0
        } else {
            ((e.std_error / e.mean).powi(2) + (base.std_error / base.mean).powi(2)).sqrt()
        };
        values.push(ratio);
        ses.push(ratio * rel);
        est.push(e);
    }
    let grid = r_list.iter().map(|r| x0.scaled(*r)).collect();
    let norm = r_list.iter().map(|r| r.powf(alpha) * base.mean).collect();
    Ok(RatioReport::from_values(grid, est, norm, values, ses))
}

/// Two-sample KS test between transported exit times from `(x0, V)` and
/// direct exit times from `(r x0, rV)`.
pub fn exit_time_ks_self_test(sim: &Simulator, x0: &HPoint, v: &BoxDomain, r: f64, n_paths: u64) -> Result<TestOutcome> {
    let alpha = sim.params().alpha;
    let base = reseeded(sim, 1)?.records(x0, v, n_paths)?;
    let cfg = SimConfig {
        seed: derive_seed(sim.config().seed, 2),
        ..sim.config().scaled(r, alpha)
    };
    let direct = sim.with_config(&cfg)?.records(&x0.scaled(r), &v.scaled(r), n_paths)?;
    let a: Vec<f64> = base.iter().map(|rec| scaling_transport(rec, r, alpha).exit_time).collect();
    let b: Vec<f64> = direct.iter().map(|rec| rec.exit_time).collect();
    ks_two_sample(&a, &b)
}

/// `E_x tau_U / x_d^{alpha-1}` over the given heights on the axis, with
/// `U = U(r)`.
pub fn exit_time_decay(sim: &Simulator, heights: &[f64], r: f64, n_paths: u64) -> Result<RatioReport> {
    let alpha = require_recurrent_regime(sim, "exit_time_decay")?;
    let d = sim.params().d;
    let dom = BoxDomain::strip(r);
    let grid: Vec<HPoint> = heights.iter().map(|h| HPoint::on_axis(d, *h)).collect();
    let mut est = Vec::new();
    for (i, x) in grid.iter().enumerate() {
        est.push(reseeded(sim, i as u64)?.estimate(x, &dom, &Functional::ExitTime, n_paths)?);
    }
    let norm = heights.iter().map(|h| h.powf(alpha - 1.0)).collect();
    Ok(RatioReport::new(grid, est, norm))
}

/// The harmonic function `f(x) = P_x(Y_{tau_V} in target)` with
/// `V = D_w(r/2, r/2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicProbe {
    pub w: Vec<f64>,
    pub r: f64,
    pub target: BoxDomain,
}

impl HarmonicProbe {
    /// `w = 0`, `r = 1` and the target `D(1, 1)`.
    pub fn standard(d: usize) -> Self {
        Self {
            w: vec![0.0; d - 1],
            r: 1.0,
            target: BoxDomain::axis_box(d, 1.0, 1.0),
        }
    }

    pub fn domain(&self) -> BoxDomain {
        BoxDomain::Box {
            center: self.w.clone(),
            a: 0.5 * self.r,
            b: 0.5 * self.r,
        }
    }

    fn estimates(&self, sim: &Simulator, grid: &[HPoint], n_paths: u64, tag: u64) -> Result<Vec<EstimateWithCI>> {
        let dom = self.domain();
        let f = Functional::ExitInto(self.target.clone());
        let mut out = Vec::new();
        for (i, x) in grid.iter().enumerate() {
            if !dom.contains(x) {
                return Err(Error::ConstraintViolation(format!("{x:?} is not in {dom:?}")));
            }
            let e = reseeded(sim, tag + i as u64)?.estimate(x, &dom, &f, n_paths)?;
            if e.mean == 0.0 {
                return Err(Error::DegenerateSample(format!("no path from {x:?} reached the target")));
            }
            out.push(e);
        }
        Ok(out)
    }
}

/// `P_x(exit into target) / x_d^{alpha-1}` on the grid; the sup/inf ratio is
/// the empirical boundary Harnack constant.
pub fn bhp_ratio(sim: &Simulator, probe: &HarmonicProbe, x_grid: &[HPoint], n_paths: u64) -> Result<RatioReport> {
    let alpha = require_recurrent_regime(sim, "bhp_ratio")?;
    let est = probe.estimates(sim, x_grid, n_paths, 0)?;
    let norm = x_grid.iter().map(|x| x.height().powf(alpha - 1.0)).collect();
    Ok(RatioReport::new(x_grid.to_vec(), est, norm))
}

/// `f(x) / f(x_hat)` on the grid, for the same `f` as [`bhp_ratio`].
pub fn carleson_check(
    sim: &Simulator,
    probe: &HarmonicProbe,
    x_grid: &[HPoint],
    x_hat: &HPoint,
    n_paths: u64,
) -> Result<RatioReport> {
    if x_hat.height() < 0.25 * probe.r {
        return Err(Error::ConstraintViolation("the reference point needs height at least r/4".into()));
    }
    let reference = probe.estimates(sim, std::slice::from_ref(x_hat), n_paths, 10_000)?[0];
    let est = probe.estimates(sim, x_grid, n_paths, 0)?;
    let mut values = Vec::new();
    let mut ses = Vec::new();
    for (x, e) in x_grid.iter().zip(&est) {
        let v = e.mean / reference.mean;
        let rel = if x == x_hat {
            0.0
        } else {
            ((e.std_error / e.mean).powi(2) + (reference.std_error / reference.mean).powi(2)).sqrt()
        };
        values.push(v);
        ses.push(v * rel);
    }
    // A grid point equal to the reference reuses its estimate.
    let values: Vec<f64> = x_grid.iter().zip(values).map(|(x, v)| if x == x_hat { 1.0 } else { v }).collect();
    let norm = vec![reference.mean; x_grid.len()];
    Ok(RatioReport::from_values(x_grid.to_vec(), est, norm, values, ses))
}

/// Volume of `B(y, rho)` intersected with the half-space.
pub fn ball_volume_in_halfspace(d: usize, y_d: f64, rho: f64) -> f64 {
    let unit = |n: usize| if n == 0 { 1.0 } else { sphere_area(n) / n as f64 };
    let full = unit(d) * rho.powi(d as i32);
    if y_d >= rho {
        return full;
    }
    // Remove the slab of the ball below the hyperplane, t in (y_d, rho).
    let n = d - 1;
    let cut = integrate_1d(
        |t| unit(n) * (rho * rho - t * t).max(0.0).powf(0.5 * n as f64),
        y_d,
        rho,
        &QuadSpec::constants(),
    )
    .map(|r| r.value)
    .unwrap_or(f64::NAN);
    full - cut
}

/// Occupation-time estimate of `G(x, y)`: the mean time spent in
/// `B(y, rho_g)` before absorption, divided by the ball's volume.
/// `rho_g` defaults to `|x - y| / 8`.
pub fn green_estimate(sim: &Simulator, x: &HPoint, y: &HPoint, rho_g: Option<f64>, n_paths: u64) -> Result<EstimateWithCI> {
    let dist = x.dist(y);
    if dist == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    if !x.is_interior() || !y.is_interior() {
        return Err(Error::ConstraintViolation("both points must be interior".into()));
    }
    let rho = rho_g.unwrap_or(dist / 8.0);
    if !(rho > 0.0 && rho <= 0.25 * dist) {
        return Err(Error::ConstraintViolation("the occupation ball needs 0 < rho_g <= |x - y| / 4".into()));
    }
    if dist < 10.0 * sim.config().absorption_height() {
        return Err(Error::ConstraintViolation("|x - y| must be at least ten absorption heights".into()));
    }
    let vol = ball_volume_in_halfspace(sim.params().d, y.height(), rho);
    let centre = *y;
    let phi: PointFn = Arc::new(move |z: &HPoint| (z.dist(&centre) < rho) as u8 as f64);
    let e = sim.estimate(x, &BoxDomain::HalfSpace, &Functional::Occupation(phi), n_paths)?;
    Ok(EstimateWithCI::from_moments(e.mean / vol, e.std_error / vol, e.n_samples, e.n_excluded))
}

/// `G` averaged over both balls: the start is uniform on
/// `B(x, rho) ∩ H` and the occupation of `B(y, rho) ∩ H` is divided by its
/// volume. For a reversible process the result is symmetric in `(x, y)`.
pub fn green_ball_average(sim: &Simulator, x: &HPoint, y: &HPoint, rho: f64, n_paths: u64) -> Result<EstimateWithCI> {
    if n_paths < 2 {
        return Err(Error::Usage("at least two paths are required".into()));
    }
    if !x.is_interior() || !y.is_interior() {
        return Err(Error::ConstraintViolation("both points must be interior".into()));
    }
    if !(rho > 0.0 && 2.0 * rho < x.dist(y)) {
        return Err(Error::ConstraintViolation("the balls must be disjoint".into()));
    }
    let d = sim.params().d;
    let vol = ball_volume_in_halfspace(d, y.height(), rho);
    let (centre, start) = (*y, *x);
    let seed = sim.config().seed;
    let samples: Vec<Option<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let x0 = loop {
                let disp: Vec<f64> = (0..d).map(|_| rho * (2.0 * rng.random::<f64>() - 1.0)).collect();
                let p = start.add(&disp);
                if p.dist(&start) < rho && p.height() > 0.0 {
                    break p;
                }
            };
            let mut occ = 0.0;
            let rec = sim.run_with(&x0, &BoxDomain::HalfSpace, &mut rng, |z, h| {
                if z.dist(&centre) < rho {
                    occ += h;
                }
            });
            (rec.outcome != Outcome::StepCapReached).then_some(occ / vol)
        })
        .collect();
    let xs: Vec<f64> = samples.iter().flatten().copied().collect();
    EstimateWithCI::from_samples(&xs, n_paths - xs.len() as u64)
}

/// Two-sided bound form
/// `(x_d/|x-y| ∧ 1)^{alpha-1} (y_d/|x-y| ∧ 1)^{alpha-1} |x-y|^{alpha-d}`.
pub fn green_bound_form(alpha: f64, x: &HPoint, y: &HPoint) -> f64 {
    let r = x.dist(y);
    let d = x.dim() as f64;
    (x.height() / r).min(1.0).powf(alpha - 1.0) * (y.height() / r).min(1.0).powf(alpha - 1.0) * r.powf(alpha - d)
}

/// Twelve pairs: heights `(a, b) |x - y|` with `a in {0.1, 0.5, 2}` at
/// `|x - y| = 1` (three partners each) and the three equal-height pairs at
/// `|x - y| = 2`. The first point is the lower one.
pub fn green_pair_grid(d: usize) -> Vec<(HPoint, HPoint)> {
    assert!(d >= 2, "the pair grid needs a lateral direction");
    let mk = |a: f64, b: f64, rho: f64| {
        let lateral = (1.0 - (b - a) * (b - a)).max(0.0).sqrt() * rho;
        let mut yl = vec![0.0; d - 1];
        yl[0] = lateral;
        (
            HPoint::from_parts(&vec![0.0; d - 1], a * rho).expect("finite"),
            HPoint::from_parts(&yl, b * rho).expect("finite"),
        )
    };
    let mut out = Vec::new();
    for a in [0.1, 0.5, 2.0] {
        for db in [0.0, 0.5, 1.0] {
            out.push(mk(a, a + db, 1.0));
        }
    }
    for a in [0.1, 0.5, 2.0] {
        out.push(mk(a, a, 2.0));
    }
    out
}

/// `G_hat(x, y) / bound form` over the pairs.
pub fn green_ratio_sweep(sim: &Simulator, pairs: &[(HPoint, HPoint)], n_paths: u64) -> Result<RatioReport> {
    let alpha = sim.params().alpha;
    let [b1, b2, ..] = sim.params().beta;
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::ParameterOutOfRange("the Green sweep needs alpha in (1, 2)".into()));
    }
    let d = sim.params().d as f64;
    if !(d > (alpha + b1 + b2).min(2.0)) {
        return Err(Error::ParameterOutOfRange(format!(
            "transience needs d > (alpha + beta1 + beta2) ∧ 2 = {}",
            (alpha + b1 + b2).min(2.0)
        )));
    }
    let mut est = Vec::new();
    let mut norm = Vec::new();
    for (i, (x, y)) in pairs.iter().enumerate() {
        est.push(green_estimate(&reseeded(sim, i as u64)?, x, y, None, n_paths)?);
        norm.push(green_bound_form(alpha, x, y));
    }
    Ok(RatioReport::new(pairs.iter().map(|p| p.0).collect(), est, norm))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationReport {
    pub gamma: f64,
    pub heights: Vec<f64>,
    pub estimates: Vec<EstimateWithCI>,
    /// Log-log fit of the estimates against the heights.
    pub fit: ExponentFit,
    /// For `gamma = -1`: fit of `estimate / x_d^{alpha-1}` against
    /// `log(R / x_d)`.
    pub log_fit: Option<LinearFit>,
}

/// `E_x int_0^{tau_D} (Y_t^d)^gamma dt` on the axis with `D = U(R)`.
pub fn occupation_exponent(sim: &Simulator, gamma: f64, heights: &[f64], big_r: f64, n_paths: u64) -> Result<OccupationReport> {
    let alpha = sim.params().alpha;
    if gamma <= -alpha {
        return Err(Error::DivergentIntegrand(format!(
            "the occupation integral of x_d^{gamma} is infinite for gamma <= -alpha = {}",
            -alpha
        )));
    }
    if heights.iter().any(|h| !(*h > 0.0 && *h <= big_r / 10.0)) {
        return Err(Error::ConstraintViolation("heights must lie in (0, R/10]".into()));
    }
    let d = sim.params().d;
    let dom = BoxDomain::strip(big_r);
    let phi: PointFn = Arc::new(move |z: &HPoint| z.height().powf(gamma));
    let mut est = Vec::new();
    for (i, h) in heights.iter().enumerate() {
        let s = reseeded(sim, i as u64)?;
        est.push(s.estimate(&HPoint::on_axis(d, *h), &dom, &Functional::Occupation(phi.clone()), n_paths)?);
    }
    let means: Vec<f64> = est.iter().map(|e| e.mean).collect();
    let fit = fit_at_least_four(heights, &means)?;
    let log_fit = if gamma == -1.0 {
        let lx: Vec<f64> = heights.iter().map(|h| (big_r / h).ln()).collect();
        let y: Vec<f64> = heights.iter().zip(&means).map(|(h, m)| m / h.powf(alpha - 1.0)).collect();
        Some(linear_fit(&lx, &y)?)
    } else {
        None
    };
    Ok(OccupationReport {
        gamma,
        heights: heights.to_vec(),
        estimates: est,
        fit,
        log_fit,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifetimeReport {
    pub t_grid: Vec<f64>,
    /// `E[zeta ∧ T]`.
    pub estimates: Vec<EstimateWithCI>,
    /// Paired increments `E[zeta ∧ T_{k+1}] - E[zeta ∧ T_k]`.
    pub increments: Vec<EstimateWithCI>,
    pub fit: ExponentFit,
    /// Fraction of paths absorbed before the largest cap.
    pub absorbed_fraction: f64,
}

impl LifetimeReport {
    /// Strictly increasing, and the last increment at least half the
    /// previous one.
    pub fn no_plateau(&self) -> bool {
        let inc = &self.increments;
        inc.iter().all(|e| e.mean > 0.0) && (inc.len() < 2 || inc[inc.len() - 1].mean >= 0.5 * inc[inc.len() - 2].mean)
    }
}

/// `E[zeta ∧ T]` for each `T` from one set of half-space paths capped at the
/// largest `T`.
pub fn lifetime_divergence(sim: &Simulator, x0: &HPoint, t_grid: &[f64], n_paths: u64) -> Result<LifetimeReport> {
    require_recurrent_regime(sim, "lifetime_divergence")?;
    if t_grid.len() < 4 || t_grid.windows(2).any(|w| !(w[1] > w[0])) || !(t_grid[0] > 0.0) {
        return Err(Error::Usage("need at least four increasing positive times".into()));
    }
    let t_max = *t_grid.last().expect("non-empty");
    let cfg = SimConfig {
        time_cap: Some(t_max),
        ..sim.config().clone()
    };
    let recs = sim.with_config(&cfg)?.records(x0, &BoxDomain::HalfSpace, n_paths)?;
    let usable: Vec<f64> = recs
        .iter()
        .filter(|r| r.outcome != crate::sim::Outcome::StepCapReached)
        .map(|r| r.exit_time)
        .collect();
    let excluded = n_paths - usable.len() as u64;
    let mut estimates = Vec::new();
    for t in t_grid {
        let xs: Vec<f64> = usable.iter().map(|z| z.min(*t)).collect();
        estimates.push(EstimateWithCI::from_samples(&xs, excluded)?);
    }
    let mut increments = Vec::new();
    for w in t_grid.windows(2) {
        let xs: Vec<f64> = usable.iter().map(|z| z.min(w[1]) - z.min(w[0])).collect();
        increments.push(EstimateWithCI::from_samples(&xs, excluded)?);
    }
    let means: Vec<f64> = estimates.iter().map(|e| e.mean).collect();
    let fit = fit_at_least_four(t_grid, &means)?;
    let absorbed = recs
        .iter()
        .filter(|r| r.outcome == crate::sim::Outcome::AbsorbedAtBoundary)
        .count();
    Ok(LifetimeReport {
        t_grid: t_grid.to_vec(),
        estimates,
        increments,
        fit,
        absorbed_fraction: absorbed as f64 / n_paths as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct N0Report {
    /// Smallest `n` with `P_x(tau_{B(x, n x_d)} = zeta) > 1/2`.
    pub n0: Option<u32>,
    pub probabilities: Vec<(u32, EstimateWithCI)>,
}

/// Scans `n = 1..=n_max` for the first ball `B(x, n x_d)` that the path
/// leaves by absorption with probability above one half.
pub fn n0_search(sim: &Simulator, x: &HPoint, n_max: u32, n_paths: u64) -> Result<N0Report> {
    let mut probabilities = Vec::new();
    for n in 1..=n_max {
        let ball = BoxDomain::Ball {
            center: *x,
            r: n as f64 * x.height(),
        };
        let e = reseeded(sim, n as u64)?.estimate(x, &ball, &Functional::Absorbed, n_paths)?;
        let found = e.mean > 0.5;
        probabilities.push((n, e));
        if found {
            return Ok(N0Report { n0: Some(n), probabilities });
        }
    }
    Ok(N0Report { n0: None, probabilities })
}

/// Fraction of half-space paths from `x0` that end by absorption.
pub fn absorbed_fraction(sim: &Simulator, x0: &HPoint, n_paths: u64) -> Result<f64> {
    let recs = sim.records(x0, &BoxDomain::HalfSpace, n_paths)?;
    Ok(recs
        .iter()
        .filter(|r| r.outcome == crate::sim::Outcome::AbsorbedAtBoundary)
        .count() as f64
        / n_paths as f64)
}
