//! The acceptance criteria as executable checks.
//!
//! Each criterion returns a [`CriterionResult`]. Monte Carlo checks use the
//! 95% intervals conservatively: a check passes only when the whole
//! interval satisfies the budget, fails when the whole interval violates
//! it, and is inconclusive otherwise.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, HPoint};
use crate::kernel::KernelParams;
use crate::nonlocal::{self, Bump, ProfileFunction};
use crate::potential::{self, derive_seed, HarmonicProbe};
use crate::quad::{integrate_pieces, integrate_semiinfinite, QuadSpec};
use crate::sim::{path_rng, SimConfig, Simulator, Truncation};
use crate::stats::chi_square_gof;

pub const ALL: [u32; 14] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Full,
    /// Ten times fewer Monte Carlo paths.
    Quick,
}

impl Profile {
    fn paths(self, n: u64) -> u64 {
        match self {
            Profile::Full => n,
            Profile::Quick => (n / 10).max(100),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Inconclusive => "inconclusive",
        }
    }

    /// The weakest of two statuses: any fail fails, then any inconclusive.
    fn and(self, other: Status) -> Status {
        match (self, other) {
            (Status::Fail, _) | (_, Status::Fail) => Status::Fail,
            (Status::Inconclusive, _) | (_, Status::Inconclusive) => Status::Inconclusive,
            _ => Status::Pass,
        }
    }

    fn from_bool(ok: bool) -> Status {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    /// `value <= budget` judged on the interval `[lo, hi]`.
    fn upper(lo: f64, hi: f64, budget: f64) -> Status {
        if hi <= budget {
            Status::Pass
        } else if lo > budget {
            Status::Fail
        } else {
            Status::Inconclusive
        }
    }

    /// `|value - target| <= tol` with standard error `se`.
    fn near(value: f64, se: f64, target: f64, tol: f64) -> Status {
        let dev = (value - target).abs();
        if dev + 1.96 * se <= tol {
            Status::Pass
        } else if dev - 1.96 * se > tol {
            Status::Fail
        } else {
            Status::Inconclusive
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub status: Status,
    pub measured: String,
    pub budget: String,
    pub details: Vec<String>,
    pub seconds: f64,
    pub runtime_budget_seconds: f64,
}

impl CriterionResult {
    /// One-line summary.
    pub fn line(&self) -> String {
        format!(
            "criterion {:02} {:<13} {}: {} (budget {}; {:.1}s of {:.0}s)",
            self.id,
            self.status.as_str().to_uppercase(),
            self.name,
            self.measured,
            self.budget,
            self.seconds,
            self.runtime_budget_seconds
        )
    }
}

struct Outcome {
    status: Status,
    measured: String,
    budget: String,
    details: Vec<String>,
}

const NAMES: [&str; 14] = [
    "zeros of C",
    "sign and monotonicity of C",
    "operator identity",
    "truncated operator bound",
    "Hardy inequality",
    "finite lifetime",
    "probabilistic harmonicity",
    "exit-time scaling",
    "exit-time boundary decay",
    "boundary Harnack and Carleson",
    "Green function",
    "occupation exponents",
    "infinite expected lifetime",
    "thinning exactness",
];

const RUNTIME: [f64; 14] = [
    30.0, 120.0, 300.0, 120.0, 300.0, 300.0, 600.0, 600.0, 600.0, 1800.0, 2700.0, 1200.0, 600.0, 300.0,
];

pub fn name(id: u32) -> Option<&'static str> {
    NAMES.get((id as usize).checked_sub(1)?).copied()
}

/// Runs one criterion. A criterion that exceeds its runtime budget fails.
pub fn run_criterion(id: u32, profile: Profile, seed: u64) -> Result<CriterionResult> {
    let nm = name(id).ok_or_else(|| Error::Usage(format!("unknown criterion {id}")))?;
    let start = Instant::now();
    let seed = derive_seed(seed, id as u64);
    let out = match id {
        1 => zeros_of_c(),
        2 => sign_and_monotonicity(),
        3 => operator_identity(),
        4 => truncated_bound(),
        5 => hardy(seed),
        6 => finite_lifetime(profile, seed),
        7 => harmonicity(profile, seed),
        8 => scaling(profile, seed),
        9 => exit_decay(profile, seed),
        10 => bhp(profile, seed),
        11 => green(profile, seed),
        12 => occupation(profile, seed),
        13 => lifetime(profile, seed),
        _ => thinning(profile, seed),
    };
    let seconds = start.elapsed().as_secs_f64();
    let runtime = RUNTIME[id as usize - 1];
    let out = out.unwrap_or_else(|e| Outcome {
        status: Status::Fail,
        measured: format!("error: {e}"),
        budget: String::new(),
        details: Vec::new(),
    });
    let mut details = out.details;
    let mut status = out.status;
    if seconds > runtime {
        details.push(format!("runtime {seconds:.1}s exceeds {runtime:.0}s"));
        status = Status::Fail;
    }
    Ok(CriterionResult {
        id,
        name: nm.into(),
        status,
        measured: out.measured,
        budget: out.budget,
        details,
        seconds,
        runtime_budget_seconds: runtime,
    })
}

fn sim(alpha: f64, d: usize, beta: [f64; 4], cfg: SimConfig) -> Result<Simulator> {
    Simulator::new(&KernelParams::new(alpha, d, beta), &cfg)
}

fn cfg(delta: f64, seed: u64) -> SimConfig {
    SimConfig {
        delta,
        seed,
        ..SimConfig::default()
    }
}

const BETA_ZERO: [f64; 4] = [0.0; 4];

fn zeros_of_c() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    let mut n = 0;
    for d in [1, 2] {
        for alpha in [0.8, 1.2, 1.5, 1.8] {
            for beta in [BETA_ZERO, [0.5, 0.0, 0.0, 0.0], [0.3, 0.4, 0.5, 0.5]] {
                let k = KernelParams::new(alpha, d, beta);
                for p in [0.0, alpha - 1.0] {
                    let c = nonlocal::constant_c(&k, p)?;
                    n += 1;
                    if c.abs() >= 1e-8 {
                        details.push(format!("d={d} alpha={alpha} beta={beta:?} p={p}: C={c:e}"));
                    }
                    worst = worst.max(c.abs());
                }
            }
        }
    }
    Ok(Outcome {
        status: Status::from_bool(worst < 1e-8),
        measured: format!("max |C| = {worst:.2e} over {n} evaluations (12 (alpha, beta) pairs, d in {{1,2}})"),
        budget: "< 1e-8".into(),
        details,
    })
}

fn sign_and_monotonicity() -> Result<Outcome> {
    let mut ok = true;
    let mut details = Vec::new();
    let mut checked = 0;
    let cases: Vec<(usize, f64, [f64; 4])> = [0.8, 1.2, 1.5, 1.8]
        .iter()
        .flat_map(|a| [(1, *a, BETA_ZERO), (1, *a, [0.5, 0.0, 0.0, 0.0]), (1, *a, [0.3, 0.4, 0.5, 0.5])])
        .chain([(2, 1.5, BETA_ZERO), (2, 1.5, [0.5, 0.3, 0.0, 0.0])])
        .collect();
    for (d, alpha, beta) in cases {
        let k = KernelParams::new(alpha, d, beta);
        let (lo, hi) = (k.p_lower(), k.p_upper());
        let grid: Vec<f64> = (1..=20).map(|i| lo + (hi - lo) * i as f64 / 21.0).collect();
        let cs = grid.iter().map(|p| nonlocal::constant_c(&k, *p)).collect::<Result<Vec<_>>>()?;
        checked += grid.len();
        if !cs.iter().all(|c| *c > 0.0) || !cs.windows(2).all(|w| w[1] > w[0]) {
            ok = false;
            details.push(format!("d={d} alpha={alpha} beta={beta:?}: {cs:?}"));
        }
        if alpha == 1.5 {
            for i in 1..=8 {
                let p = 0.5 * i as f64 / 9.0;
                let c = nonlocal::constant_c(&k, p)?;
                checked += 1;
                if !(c < 0.0) {
                    ok = false;
                    details.push(format!("d={d} beta={beta:?} p={p}: C={c} not negative"));
                }
            }
        }
    }
    Ok(Outcome {
        status: Status::from_bool(ok),
        measured: format!("{checked} values, sign and order {}", if ok { "as required" } else { "violated" }),
        budget: "C > 0 and increasing on ((alpha-1)+, alpha+beta1); C < 0 on (0, alpha-1)".into(),
        details,
    })
}

fn operator_identity() -> Result<Outcome> {
    let spec = QuadSpec::operator();
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for d in [1, 2] {
        for beta in [BETA_ZERO, [0.5, 0.3, 0.0, 0.0], [0.5, 0.4, 0.5, 0.5]] {
            let alpha = 1.5;
            let k = KernelParams::new(alpha, d, beta);
            for p in [0.3, alpha - 1.0, 1.2, 1.7_f64.min(k.p_upper() - 0.1)] {
                let c = nonlocal::constant_c(&k, p)?;
                for xd in [0.25, 1.0, 4.0] {
                    let x = HPoint::on_axis(d, xd);
                    let v = match nonlocal::pv_apply(&k, &ProfileFunction::power(p), &x, &spec) {
                        Ok(r) => r.value,
                        Err(e) => {
                            details.push(format!("d={d} beta={beta:?} p={p} x_d={xd}: {e}"));
                            worst = f64::INFINITY;
                            continue;
                        }
                    };
                    let scale = xd.powf(p - alpha);
                    // Relative to |C x^{p-alpha}|, or to x^{p-alpha} when C = 0.
                    let denom = if p == alpha - 1.0 { scale } else { (c * scale).abs() };
                    let err = (v - c * scale).abs() / denom;
                    if err > 1e-4 {
                        details.push(format!("d={d} beta={beta:?} p={p} x_d={xd}: rel err {err:e}"));
                    }
                    worst = worst.max(err);
                }
            }
        }
    }
    Ok(Outcome {
        status: Status::from_bool(worst <= 1e-4),
        measured: format!("max relative deviation {worst:.2e}"),
        budget: "<= 1e-4".into(),
        details,
    })
}

fn truncated_bound() -> Result<Outcome> {
    let spec = QuadSpec::operator();
    let mut worst: f64 = 1.0;
    let mut details = Vec::new();
    let mut ok = true;
    for (d, beta) in [(1, BETA_ZERO), (1, [0.5, 0.3, 0.0, 0.0]), (2, [0.5, 0.0, 0.0, 0.0])] {
        let alpha = 1.5;
        let k = KernelParams::new(alpha, d, beta);
        for p in [0.3, alpha - 1.0, 1.2] {
            let mut sups = Vec::new();
            for xd in [0.25, 0.5, 1.0, 2.0, 4.0] {
                let x = HPoint::on_axis(d, xd);
                let mut sup: f64 = 0.0;
                for j in 1..=10 {
                    let eps = 2f64.powi(-j);
                    if eps > 0.5 * xd {
                        continue;
                    }
                    let t = nonlocal::truncated_op(&k, p, &x, eps, &spec)?;
                    sup = sup.max(t.abs() / xd.powf(p - alpha));
                }
                sups.push(sup);
            }
            let max = sups.iter().copied().fold(0.0, f64::max);
            let min = sups.iter().copied().fold(f64::INFINITY, f64::min);
            let ratio = max / min;
            if !(max.is_finite() && min > 0.0 && ratio <= 5.0) {
                ok = false;
                details.push(format!("d={d} beta={beta:?} p={p}: sups {sups:?}"));
            }
            worst = worst.max(ratio);
        }
    }
    Ok(Outcome {
        status: Status::from_bool(ok),
        measured: format!("max over cases of max/min of the normalised sup = {worst:.3}"),
        budget: "finite, max/min <= 5".into(),
        details,
    })
}

fn random_bump(rng: &mut impl Rng) -> Result<Bump> {
    let a = 0.05 + 2.0 * rng.random::<f64>();
    let b = a + 0.1 + 3.0 * rng.random::<f64>();
    let h = 0.5 + rng.random::<f64>();
    if rng.random::<bool>() {
        Bump::smooth(a, b, h)
    } else {
        Bump::triangle(a, b, h)
    }
}

fn hardy(seed: u64) -> Result<Outcome> {
    let spec = QuadSpec::operator();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let bumps = (0..10).map(|_| random_bump(&mut rng)).collect::<Result<Vec<_>>>()?;
    let mut margin = f64::INFINITY;
    let mut details = Vec::new();
    for alpha in [1.2, 1.5, 1.8] {
        for beta in [BETA_ZERO, [0.5, 0.3, 0.0, 0.0]] {
            let k = KernelParams::new(alpha, 1, beta);
            let bound = nonlocal::hardy_bound(&k)?;
            for u in &bumps {
                let r = nonlocal::hardy_ratio(&k, u, &spec)?;
                let m = r - (bound.bound - 1e-3);
                if m < 0.0 {
                    details.push(format!("alpha={alpha} beta={beta:?} {u:?}: ratio {r} < {}", bound.bound));
                }
                margin = margin.min(m);
            }
        }
    }
    Ok(Outcome {
        status: Status::from_bool(margin >= 0.0),
        measured: format!("min over 60 cases of ratio - (bound - 1e-3) = {margin:.4}"),
        budget: ">= 0".into(),
        details,
    })
}

fn finite_lifetime(profile: Profile, seed: u64) -> Result<Outcome> {
    let n = profile.paths(10_000);
    let mut worst: f64 = 1.0;
    let mut details = Vec::new();
    for (i, beta) in [BETA_ZERO, [0.5, 0.0, 0.0, 0.0]].iter().enumerate() {
        let s = sim(1.5, 1, *beta, cfg(0.1, derive_seed(seed, i as u64)))?;
        let f = potential::absorbed_fraction(&s, &HPoint::on_axis(1, 1.0), n)?;
        details.push(format!("beta={beta:?}: absorbed fraction {f}"));
        worst = worst.min(f);
    }
    Ok(Outcome {
        status: Status::from_bool(worst >= 0.999),
        measured: format!("min absorbed fraction {worst} over {n} paths per kernel"),
        budget: ">= 0.999".into(),
        details,
    })
}

/// Truncation fraction for the harmonicity check; the bias grows like
/// `delta^{2-alpha}`.
pub const HARMONIC_DELTA: f64 = 0.02;
/// Truncation fraction for the exit-time, BHP and occupation checks.
pub const POTENTIAL_DELTA: f64 = 0.05;

fn harmonicity(profile: Profile, seed: u64) -> Result<Outcome> {
    let n = profile.paths(100_000);
    let grid: Vec<HPoint> = [0.25, 0.35, 0.45].iter().map(|h| HPoint::on_axis(1, *h)).collect();
    let budget = 0.05;
    let mut status = Status::Pass;
    let mut details = Vec::new();
    let mut worst: f64 = 0.0;
    for (i, beta) in [BETA_ZERO, [0.5, 0.3, 0.0, 0.0]].iter().enumerate() {
        let s = sim(1.5, 1, *beta, cfg(HARMONIC_DELTA, derive_seed(seed, i as u64)))?;
        let rep = potential::harmonicity_defect(&s, &grid, 1.0, n)?;
        for (v, se) in rep.values.iter().zip(&rep.std_errors) {
            // The interval widened by the bias budget must contain 1.
            status = status.and(Status::from_bool((v - 1.0).abs() <= 1.96 * se + budget));
            worst = worst.max((v - 1.0).abs());
        }
        details.push(format!("beta={beta:?}: ratios {:?} se {:?}", rep.values, rep.std_errors));
    }
    // Reported only: the bias across truncation levels and its extrapolation.
    let s = sim(1.5, 1, BETA_ZERO, cfg(0.1, derive_seed(seed, 7)))?;
    let study = potential::harmonicity_delta_study(&s, &HPoint::on_axis(1, 0.25), 1.0, &[0.2, 0.1, 0.05], n / 2)?;
    details.push(format!(
        "delta study at x_d=0.25: {:?} -> extrapolated {:.4} ± {:.4}",
        study.deltas.iter().zip(&study.ratios).map(|(d, r)| (*d, r.mean)).collect::<Vec<_>>(),
        study.extrapolated,
        study.extrapolated_std_error
    ));
    Ok(Outcome {
        status,
        measured: format!("max |ratio - 1| = {worst:.4} at delta = {HARMONIC_DELTA}"),
        budget: format!("95% CI widened by {budget} contains 1"),
        details,
    })
}

fn scaling(profile: Profile, seed: u64) -> Result<Outcome> {
    let n = profile.paths(100_000);
    let s = sim(1.5, 1, BETA_ZERO, cfg(0.1, seed))?;
    let x0 = HPoint::on_axis(1, 0.2);
    let v = BoxDomain::strip(1.0);
    let rep = potential::exit_time_scaling_check(&s, &x0, &v, &[0.5, 2.0, 4.0], n)?;
    let mut status = Status::Pass;
    for (lo, hi) in &rep.ci95 {
        let st = if *lo >= 0.95 && *hi <= 1.05 {
            Status::Pass
        } else if *hi < 0.95 || *lo > 1.05 {
            Status::Fail
        } else {
            Status::Inconclusive
        };
        status = status.and(st);
    }
    let ks = potential::exit_time_ks_self_test(&s, &x0, &v, 2.0, profile.paths(20_000))?;
    status = status.and(Status::from_bool(ks.p_value > 0.01));
    Ok(Outcome {
        status,
        measured: format!("ratios {:?}; KS p-value {:.3}", rep.values, ks.p_value),
        budget: "ratios in [0.95, 1.05]; KS p > 0.01".into(),
        details: vec![format!("ratio CIs {:?}", rep.ci95)],
    })
}

fn exit_decay(profile: Profile, seed: u64) -> Result<Outcome> {
    let n = profile.paths(100_000);
    let heights: Vec<f64> = (2..=7).map(|k| 2f64.powi(-k)).collect();
    let s = sim(1.5, 1, BETA_ZERO, cfg(POTENTIAL_DELTA, seed))?;
    let rep = potential::exit_time_decay(&s, &heights, 1.0, n)?;
    Ok(Outcome {
        status: Status::upper(rep.ci_ratio_lower, rep.ci_ratio_upper, 5.0),
        measured: format!("max/min = {:.3} (CI bounds {:.3}..{:.3})", rep.sup_inf_ratio, rep.ci_ratio_lower, rep.ci_ratio_upper),
        budget: "<= 5".into(),
        details: vec![format!("E tau / x_d^(alpha-1): {:?}", rep.values)],
    })
}

fn bhp(profile: Profile, seed: u64) -> Result<Outcome> {
    let n = profile.paths(100_000);
    let mut status = Status::Pass;
    let mut details = Vec::new();
    let (mut worst_bhp, mut worst_carleson, mut worst_slope): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut tag = 0;
    for d in [1, 2] {
        for beta in [BETA_ZERO, [0.5, 0.0, 0.0, 0.0], [0.3, 0.4, 0.0, 0.0]] {
            tag += 1;
            let s = sim(1.5, d, beta, cfg(POTENTIAL_DELTA, derive_seed(seed, tag)))?;
            let probe = HarmonicProbe::standard(d);
            let grid: Vec<HPoint> = (2..=7).map(|k| HPoint::on_axis(d, 2f64.powi(-k))).collect();
            let rep = potential::bhp_ratio(&s, &probe, &grid, n)?;
            status = status.and(Status::upper(rep.ci_ratio_lower, rep.ci_ratio_upper, 10.0));
            let fit = rep.height_exponent()?;
            status = status.and(Status::near(fit.slope, fit.slope_stderr, 0.5, 0.1));
            worst_bhp = worst_bhp.max(rep.sup_inf_ratio);
            worst_slope = worst_slope.max((fit.slope - 0.5).abs());
            details.push(format!(
                "d={d} beta={beta:?}: BHP ratio {:.3} (CI upper {:.3}), decay slope {:.4} ± {:.4}",
                rep.sup_inf_ratio, rep.ci_ratio_upper, fit.slope, fit.slope_stderr
            ));
            if beta == BETA_ZERO {
                // Carleson: points of B(0, 1/2) inside V against x_hat at height 1/4.
                let x_hat = HPoint::on_axis(d, 0.25);
                let mut cgrid: Vec<HPoint> = [0.45, 0.35, 0.25, 0.15, 0.05, 0.01].iter().map(|h| HPoint::on_axis(d, *h)).collect();
                if d == 2 {
                    cgrid.push(HPoint::new(&[0.3, 0.3]).expect("finite"));
                    cgrid.push(HPoint::new(&[-0.4, 0.1]).expect("finite"));
                }
                let c = potential::carleson_check(&s, &probe, &cgrid, &x_hat, n)?;
                status = status.and(Status::upper(c.max_lower(), c.max_upper(), 20.0));
                worst_carleson = worst_carleson.max(c.max_value());
                details.push(format!("d={d}: Carleson max ratio {:.3} (CI upper {:.3})", c.max_value(), c.max_upper()));
            }
        }
    }
    Ok(Outcome {
        status,
        measured: format!(
            "max BHP ratio {worst_bhp:.3}; max Carleson ratio {worst_carleson:.3}; max |slope - (alpha-1)| {worst_slope:.4}"
        ),
        budget: "BHP <= 10; Carleson <= 20; slope within 0.1".into(),
        details,
    })
}

/// Pair used for the symmetry check: heights 0.5 and 1 at distance 1.
fn green_symmetry_pair() -> (HPoint, HPoint) {
    potential::green_pair_grid(2)[4]
}

fn green(profile: Profile, seed: u64) -> Result<Outcome> {
    let n = profile.paths(GREEN_PATHS);
    let alpha = 1.5;
    // The symmetric truncation keeps the truncated process reversible, so its
    // Green function is symmetric like the untruncated one.
    let config = SimConfig {
        truncation: Truncation::Symmetric,
        ..cfg(GREEN_DELTA, seed)
    };
    let s = sim(alpha, 2, BETA_ZERO, config)?;
    let mut status = Status::Pass;
    let mut details = Vec::new();
    let pairs = potential::green_pair_grid(2);
    let sweep = potential::green_ratio_sweep(&s, &pairs, n)?;
    status = status.and(Status::upper(sweep.ci_ratio_lower, sweep.ci_ratio_upper, 20.0));
    details.push(format!("sweep ratios {:?}", sweep.values));
    let reseed = |tag: u64| s.with_config(&SimConfig { seed: derive_seed(seed, tag), ..s.config().clone() });
    // Symmetry, with both ends averaged over balls of radius |x - y| / 8.
    let (x, y) = green_symmetry_pair();
    let rho = x.dist(&y) / 8.0;
    let gxy = potential::green_ball_average(&reseed(100)?, &x, &y, rho, n)?;
    let gyx = potential::green_ball_average(&reseed(101)?, &y, &x, rho, n)?;
    let sym_se = (gxy.std_error.powi(2) + gyx.std_error.powi(2)).sqrt();
    let sym = Status::from_bool((gxy.mean - gyx.mean).abs() <= 1.96 * sym_se);
    status = status.and(sym);
    details.push(format!("symmetry: G(x,y) = {:.4} ± {:.4}, G(y,x) = {:.4} ± {:.4}", gxy.mean, gxy.std_error, gyx.mean, gyx.std_error));
    // Scaling: the |x - y| = 2 pairs against their unit-distance images.
    let mut worst_scale: f64 = 0.0;
    for (big, unit) in [(9, 0), (10, 3), (11, 6)] {
        let g2 = sweep.estimates[big];
        let g1 = sweep.estimates[unit];
        let pred = 2f64.powf(alpha - 2.0) * g1.mean;
        let se = (g2.std_error.powi(2) + (2f64.powf(alpha - 2.0) * g1.std_error).powi(2)).sqrt();
        let ok = (g2.mean - pred).abs() <= 1.96 * se;
        status = status.and(Status::from_bool(ok));
        worst_scale = worst_scale.max((g2.mean / pred - 1.0).abs());
        details.push(format!("scaling pair {big}: G = {:.4} vs predicted {:.4} ± {:.4}", g2.mean, pred, se));
    }
    // Boundary decay in x at fixed y.
    let y = HPoint::new(&[0.0, 1.0]).expect("finite");
    let hs: Vec<f64> = (2..=6).map(|k| 2f64.powi(-k)).collect();
    let mut g_norm = Vec::new();
    for (i, h) in hs.iter().enumerate() {
        let x = HPoint::new(&[1.0, *h]).expect("finite");
        let g = potential::green_estimate(&reseed(200 + i as u64)?, &x, &y, None, n)?;
        // Divide out every factor of the bound form except x_d^{alpha-1}.
        let r = x.dist(&y);
        let other = (y.height() / r).min(1.0).powf(alpha - 1.0) * r.powf(alpha - 2.0) * r.powf(1.0 - alpha);
        g_norm.push(g.mean / other);
    }
    let fit = crate::stats::exponent_fit(&hs, &g_norm)?;
    status = status.and(Status::near(fit.slope, fit.slope_stderr, alpha - 1.0, 0.1));
    details.push(format!("decay slope {:.4} ± {:.4}", fit.slope, fit.slope_stderr));
    Ok(Outcome {
        status,
        measured: format!(
            "sweep sup/inf {:.3} (CI upper {:.3}); symmetry diff {:.4}; max scaling deviation {:.3}; decay slope {:.4}",
            sweep.sup_inf_ratio,
            sweep.ci_ratio_upper,
            (gxy.mean - gyx.mean).abs(),
            worst_scale,
            fit.slope
        ),
        budget: "sweep <= 20; symmetry and scaling within CI; slope 0.5 ± 0.1".into(),
        details,
    })
}

/// Truncation fraction and paths per point for the Green checks.
pub const GREEN_DELTA: f64 = 0.05;
pub const GREEN_PATHS: u64 = 100_000;

fn occupation(profile: Profile, seed: u64) -> Result<Outcome> {
    let n = profile.paths(100_000);
    let alpha = 1.5;
    let config = SimConfig {
        eta_abs: 1e-10,
        ..cfg(POTENTIAL_DELTA, seed)
    };
    let s = sim(alpha, 1, BETA_ZERO, config)?;
    let heights: Vec<f64> = (10..=14).map(|k| 2f64.powi(-k)).collect();
    let mut status = Status::Pass;
    let mut details = Vec::new();
    let o0 = potential::occupation_exponent(&s, 0.0, &heights, 1.0, n)?;
    status = status.and(Status::near(o0.fit.slope, o0.fit.slope_stderr, alpha - 1.0, 0.1));
    let o12 = potential::occupation_exponent(&s, -1.2, &heights, 1.0, n)?;
    status = status.and(Status::near(o12.fit.slope, o12.fit.slope_stderr, alpha - 1.2, 0.1));
    let o1 = potential::occupation_exponent(&s, -1.0, &heights, 1.0, n)?;
    let lf = o1.log_fit.expect("gamma = -1 carries the log fit");
    let log_ok = lf.slope - 1.96 * lf.slope_stderr > 0.0 && lf.r_squared >= 0.9;
    status = status.and(Status::from_bool(log_ok));
    let divergent = matches!(
        potential::occupation_exponent(&s, -alpha, &heights, 1.0, n),
        Err(Error::DivergentIntegrand(_))
    ) && matches!(
        potential::occupation_exponent(&s, -1.7, &heights, 1.0, n),
        Err(Error::DivergentIntegrand(_))
    );
    status = status.and(Status::from_bool(divergent));
    details.push(format!("heights {heights:?}, absorption height 1e-10"));
    Ok(Outcome {
        status,
        measured: format!(
            "slope(gamma=0) {:.4} ± {:.4}; slope(gamma=-1.2) {:.4} ± {:.4}; gamma=-1 log coefficient {:.4} ± {:.4} (r2 {:.4}); gamma <= -alpha rejected: {divergent}",
            o0.fit.slope, o0.fit.slope_stderr, o12.fit.slope, o12.fit.slope_stderr, lf.slope, lf.slope_stderr, lf.r_squared
        ),
        budget: "slopes 0.5 and 0.3 within 0.1; b > 0 with r2 >= 0.9; DivergentIntegrand".into(),
        details,
    })
}

fn lifetime(profile: Profile, seed: u64) -> Result<Outcome> {
    let n = profile.paths(LIFETIME_PATHS);
    let s = sim(1.5, 1, BETA_ZERO, cfg(0.1, seed))?;
    let x0 = HPoint::on_axis(1, 1.0);
    let rep = potential::lifetime_divergence(&s, &x0, &[10.0, 20.0, 40.0, 80.0], n)?;
    let inc = &rep.increments;
    let positive = inc.iter().all(|e| e.ci95.0 > 0.0);
    let last = inc[inc.len() - 1];
    let prev = inc[inc.len() - 2];
    // Plateau test on the paired difference last - prev / 2.
    let diff = last.mean - 0.5 * prev.mean;
    let diff_se = (last.std_error.powi(2) + (0.5 * prev.std_error).powi(2)).sqrt();
    let plateau = if diff - 1.96 * diff_se >= 0.0 {
        Status::Pass
    } else if diff + 1.96 * diff_se < 0.0 {
        Status::Fail
    } else {
        Status::Inconclusive
    };
    let mut status = plateau.and(if positive { Status::Pass } else { Status::Inconclusive });
    let n0 = potential::n0_search(&s, &x0, 64, profile.paths(10_000))?;
    status = status.and(Status::from_bool(n0.n0.is_some()));
    Ok(Outcome {
        status,
        measured: format!(
            "E[zeta ∧ T] = {:?}; increments {:?}; n0 = {:?}",
            rep.estimates.iter().map(|e| e.mean).collect::<Vec<_>>(),
            inc.iter().map(|e| e.mean).collect::<Vec<_>>(),
            n0.n0
        ),
        budget: "increments > 0, last >= previous / 2; n0 exists".into(),
        details: vec![
            format!("log-log growth exponent {:.3}", rep.fit.slope),
            format!("absorbed before T=80: {:.4}", rep.absorbed_fraction),
        ],
    })
}

pub const LIFETIME_PATHS: u64 = 100_000;

/// Probabilities of the first accepted jump from `x = 1` falling into each
/// bin, by quadrature of `J(1, y) 1{|y - 1| > eps, y > 0}`.
fn first_jump_bins(k: &KernelParams, eps: f64, per_side: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let alpha = k.alpha;
    let spec = QuadSpec::constants();
    let dens = |y: f64| (y - 1.0).abs().powf(-1.0 - alpha) * k.model_b_reduced(1.0, y, (y - 1.0).abs());
    // Right side: equal-probability edges of the dominating law.
    let right: Vec<f64> = (0..per_side)
        .map(|i| 1.0 + eps * (1.0 - i as f64 / per_side as f64).powf(-1.0 / alpha))
        .collect();
    // Left side: y in (0, 1 - eps), edges from u in (eps^alpha, 1].
    let u_min = eps.powf(alpha);
    let left: Vec<f64> = (0..=per_side)
        .map(|i| {
            if i == per_side {
                return 0.0;
            }
            let u = 1.0 - (1.0 - u_min) * i as f64 / per_side as f64;
            (1.0 - eps * u.powf(-1.0 / alpha)).max(0.0)
        })
        .collect();
    let mut edges: Vec<f64> = left.iter().rev().copied().collect();
    let mut probs = Vec::new();
    for w in edges.windows(2) {
        probs.push(integrate_pieces(dens, &[w[0], w[1]], &spec)?.value);
    }
    for w in right.windows(2) {
        probs.push(integrate_pieces(dens, &[w[0], w[1]], &spec)?.value);
    }
    let last = *right.last().expect("non-empty");
    probs.push(integrate_semiinfinite(dens, last, &spec, 1.0 + alpha)?.value);
    edges.extend(right);
    Ok((edges, probs))
}

fn thinning(profile: Profile, seed: u64) -> Result<Outcome> {
    let n = profile.paths(1_000_000);
    let eps_frac = 0.25;
    let mut status = Status::Pass;
    let mut details = Vec::new();
    let mut min_p: f64 = 1.0;
    for (i, beta) in [BETA_ZERO, [0.5, 0.3, 0.5, 0.5]].iter().enumerate() {
        let k = KernelParams::new(1.5, 1, *beta);
        let s = Simulator::new(&k, &cfg(eps_frac, derive_seed(seed, i as u64)))?;
        let (edges, probs) = first_jump_bins(&k, eps_frac, 25)?;
        let mid = 25; // edges[mid] = 1 - eps, edges[mid + 1] = 1 + eps
        let mut counts = vec![0u64; probs.len()];
        let mut rng = path_rng(s.config().seed, 0);
        let x = HPoint::on_axis(1, 1.0);
        for _ in 0..n {
            let (_, y) = s.first_jump(&x, &mut rng);
            let yv = y.height();
            let bin = if yv < 1.0 {
                edges[..=mid].partition_point(|e| *e <= yv) - 1
            } else {
                mid + edges[mid + 1..].partition_point(|e| *e <= yv) - 1
            };
            counts[bin.min(probs.len() - 1)] += 1;
        }
        let t = chi_square_gof(&counts, &probs)?;
        status = status.and(Status::from_bool(t.p_value > 0.01));
        min_p = min_p.min(t.p_value);
        details.push(format!("beta={beta:?}: chi2 {:.2} on {} bins, p = {:.4}", t.statistic, probs.len(), t.p_value));
    }
    Ok(Outcome {
        status,
        measured: format!("min p-value {min_p:.4} over {n} first jumps per kernel"),
        budget: "p > 0.01".into(),
        details,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_rules() {
        assert_eq!(Status::upper(1.0, 2.0, 3.0), Status::Pass);
        assert_eq!(Status::upper(4.0, 5.0, 3.0), Status::Fail);
        assert_eq!(Status::upper(2.0, 4.0, 3.0), Status::Inconclusive);
        assert_eq!(Status::near(0.45, 0.01, 0.5, 0.1), Status::Pass);
        assert_eq!(Status::near(0.3, 0.01, 0.5, 0.1), Status::Fail);
        assert_eq!(Status::near(0.41, 0.01, 0.5, 0.1), Status::Inconclusive);
        assert_eq!(Status::Pass.and(Status::Inconclusive), Status::Inconclusive);
        assert_eq!(Status::Inconclusive.and(Status::Fail), Status::Fail);
    }

    #[test]
    fn first_jump_bins_are_a_partition() {
        let k = KernelParams::new(1.5, 1, [0.0; 4]);
        let (edges, probs) = first_jump_bins(&k, 0.25, 25).unwrap();
        assert_eq!(probs.len(), 50);
        assert_eq!(edges.len(), 51);
        assert_eq!(edges[0], 0.0);
        assert!((edges[25] - 0.75).abs() < 1e-12 && (edges[26] - 1.25).abs() < 1e-12);
        // For B = 1 the right side is equiprobable with mass eps^{-alpha}/alpha.
        let side = 0.25f64.powf(-1.5) / 1.5;
        for p in &probs[25..] {
            assert!((p - side / 25.0).abs() < 1e-8 * side, "{p}");
        }
    }

    #[test]
    fn deterministic_criteria_pass() {
        for id in [1, 2] {
            let r = run_criterion(id, Profile::Quick, 0).unwrap();
            assert_eq!(r.status, Status::Pass, "{}", r.line());
        }
        assert!(run_criterion(15, Profile::Quick, 0).is_err());
    }
}
