//! Exact-thinning simulation of the truncated jump process.
//!
//! From a state `x` the process jumps with intensity
//! `J(x, y) 1{|y - x| > eps(x), y_d > 0}` where `eps(x) = delta x_d`.
//! Proposals are drawn from the isotropic measure `M_B |z|^{-d-alpha}` on
//! `|z| > eps` and accepted with probability `B(x, y) / M_B`; a rejected
//! proposal advances the clock only. Paths stop on leaving the domain, on
//! dropping below the absorption height, or on a cap.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sphere_area, BoxDomain, HPoint, MAX_DIM};
use crate::kernel::KernelParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Truncation fraction: jumps shorter than `delta * x_d` are dropped.
    pub delta: f64,
    /// Absorption threshold on `x_d`, in units of `ref_length`.
    pub eta_abs: f64,
    pub ref_length: f64,
    pub max_steps: u64,
    pub seed: u64,
    pub time_cap: Option<f64>,
    pub truncation: Truncation,
}

/// Which jumps the truncated process drops.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// `|y - x| <= delta * x_d`, measured from the current state.
    #[default]
    FromState,
    /// `|y - x| <= delta * max(x_d, y_d)`. The kept kernel is symmetric, so
    /// the truncated process is reversible for Lebesgue measure.
    Symmetric,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            eta_abs: 1e-4,
            ref_length: 1.0,
            max_steps: 10_000_000,
            seed: 0,
            time_cap: None,
            truncation: Truncation::FromState,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConstraintViolation(m.into()));
        if !(self.delta > 0.0 && self.delta <= 0.5) {
            return bad("delta must lie in (0, 1/2]");
        }
        if !(self.eta_abs > 0.0 && self.eta_abs.is_finite()) {
            return bad("eta_abs must be positive");
        }
        if !(self.ref_length > 0.0 && self.ref_length.is_finite()) {
            return bad("ref_length must be positive");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        if let Some(t) = self.time_cap {
            if !(t > 0.0) {
                return bad("time_cap must be positive");
            }
        }
        Ok(())
    }

    /// Absolute absorption height `eta_abs * ref_length`.
    pub fn absorption_height(&self) -> f64 {
        self.eta_abs * self.ref_length
    }

    /// The configuration for the image of a run under `x -> r x`.
    pub fn scaled(&self, r: f64, alpha: f64) -> Self {
        Self {
            ref_length: self.ref_length * r,
            time_cap: self.time_cap.map(|t| t * r.powf(alpha)),
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    ExitedDomain,
    AbsorbedAtBoundary,
    StepCapReached,
    TimeCapReached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    /// First state outside the domain, the state below the absorption
    /// height, or the state when a cap was hit.
    pub exit_position: HPoint,
    pub exit_time: f64,
    pub outcome: Outcome,
    pub steps: u64,
}

impl ExitRecord {
    /// Terminal point of the path: absorbed paths are projected onto the
    /// boundary hyperplane.
    pub fn terminal_point(&self) -> HPoint {
        let mut p = self.exit_position;
        if self.outcome == Outcome::AbsorbedAtBoundary {
            let d = p.dim();
            p.coords_mut()[d - 1] = 0.0;
        }
        p
    }
}

/// Image of a record under the scaling `Y -> r Y_{r^{-alpha} t}`.
pub fn scaling_transport(record: &ExitRecord, r: f64, alpha: f64) -> ExitRecord {
    ExitRecord {
        exit_position: record.exit_position.scaled(r),
        exit_time: record.exit_time * r.powf(alpha),
        ..record.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: u64,
    /// Paths dropped because the functional is undefined on a capped path.
    pub n_excluded: u64,
    pub ci95: (f64, f64),
}

impl EstimateWithCI {
    pub fn from_samples(xs: &[f64], n_excluded: u64) -> Result<Self> {
        if xs.len() < 2 {
            return Err(Error::DegenerateSample(format!(
                "{} usable paths ({} excluded)",
                xs.len(),
                n_excluded
            )));
        }
        let (mean, std_error) = crate::stats::mean_and_stderr(xs)?;
        Ok(Self {
            mean,
            std_error,
            n_samples: xs.len() as u64,
            n_excluded,
            ci95: (mean - 1.96 * std_error, mean + 1.96 * std_error),
        })
    }

    /// Builds the interval from a mean and standard error.
    pub fn from_moments(mean: f64, std_error: f64, n_samples: u64, n_excluded: u64) -> Self {
        Self {
            mean,
            std_error,
            n_samples,
            n_excluded,
            ci95: (mean - 1.96 * std_error, mean + 1.96 * std_error),
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.ci95.0 <= v && v <= self.ci95.1
    }
}

pub type PointFn = Arc<dyn Fn(&HPoint) -> f64 + Send + Sync>;

/// Path functionals accepted by [`Simulator::estimate`].
#[derive(Clone)]
pub enum Functional {
    /// `tau ∧ zeta`, or the time cap on capped paths.
    ExitTime,
    /// Indicator that the path left the domain into the given set.
    ExitInto(BoxDomain),
    /// Indicator that the path was absorbed at the boundary.
    Absorbed,
    /// `f` at the terminal point (absorbed paths use the boundary projection).
    Terminal(PointFn),
    /// `sum holding * phi(state)`, the left-endpoint path integral.
    Occupation(PointFn),
}

impl std::fmt::Debug for Functional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Functional::ExitTime => f.write_str("ExitTime"),
            Functional::ExitInto(d) => write!(f, "ExitInto({d:?})"),
            Functional::Absorbed => f.write_str("Absorbed"),
            Functional::Terminal(_) => f.write_str("Terminal(..)"),
            Functional::Occupation(_) => f.write_str("Occupation(..)"),
        }
    }
}

impl Functional {
    fn value(&self, rec: &ExitRecord, occupation: f64) -> Option<f64> {
        let capped = matches!(rec.outcome, Outcome::StepCapReached | Outcome::TimeCapReached);
        match self {
            Functional::Absorbed => Some((rec.outcome == Outcome::AbsorbedAtBoundary) as u8 as f64),
            Functional::ExitTime | Functional::Occupation(_) => {
                if rec.outcome == Outcome::StepCapReached {
                    None
                } else if matches!(self, Functional::ExitTime) {
                    Some(rec.exit_time)
                } else {
                    Some(occupation)
                }
            }
            _ if capped => None,
            Functional::ExitInto(set) => {
                let hit = rec.outcome == Outcome::ExitedDomain && set.contains(&rec.exit_position);
                Some(hit as u8 as f64)
            }
            Functional::Terminal(f) => Some(f(&rec.terminal_point())),
        }
    }
}

/// Per-path random stream: the ChaCha8 key comes from the run seed and the
/// stream id is the path index, so paths do not depend on scheduling.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Isotropic displacement with density proportional to `|z|^{-d-alpha}` on
/// `|z| > eps`, written into `out[..d]`.
fn propose_into<R: Rng + ?Sized>(d: usize, alpha: f64, eps: f64, rng: &mut R, out: &mut [f64]) {
    // 1 - U lies in (0, 1].
    let u: f64 = 1.0 - rng.random::<f64>();
    let r = eps * u.powf(-1.0 / alpha);
    match d {
        1 => out[0] = if rng.random::<bool>() { r } else { -r },
        2 => {
            let a = std::f64::consts::TAU * rng.random::<f64>();
            let (s, c) = a.sin_cos();
            out[0] = r * c;
            out[1] = r * s;
        }
        _ => loop {
            let mut n2 = 0.0;
            for o in out[..d].iter_mut() {
                *o = rng.sample(StandardNormal);
                n2 += *o * *o;
            }
            if n2 > 0.0 {
                let s = r / n2.sqrt();
                out[..d].iter_mut().for_each(|o| *o *= s);
                break;
            }
        },
    }
}

/// Displacement sampled from the dominating measure; see [`Simulator`].
pub fn propose_jump<R: Rng + ?Sized>(params: &KernelParams, eps: f64, rng: &mut R) -> Vec<f64> {
    let mut z = vec![0.0; params.d];
    propose_into(params.d, params.alpha, eps, rng, &mut z);
    z
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub holding_time: f64,
    /// `None` when the proposal was rejected.
    pub next: Option<HPoint>,
}

/// Immutable simulation context: parameters, configuration and the kernel
/// envelope.
#[derive(Clone, Debug)]
pub struct Simulator {
    params: KernelParams,
    config: SimConfig,
    envelope: f64,
    /// `M_B |S^{d-1}| / alpha`, so that the proposal rate is this times
    /// `eps^{-alpha}`.
    rate_coeff: f64,
}

impl Simulator {
    pub fn new(params: &KernelParams, config: &SimConfig) -> Result<Self> {
        let params = params.clone().validate()?;
        config.validate()?;
        if params.d > MAX_DIM {
            return Err(Error::ConstraintViolation(format!("d must be at most {MAX_DIM}")));
        }
        let envelope = params.kernel_envelope()?;
        let rate_coeff = envelope * sphere_area(params.d) / params.alpha;
        Ok(Self {
            params,
            config: config.clone(),
            envelope,
            rate_coeff,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn envelope(&self) -> f64 {
        self.envelope
    }

    /// A copy with a different configuration, reusing the envelope.
    pub fn with_config(&self, config: &SimConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            ..self.clone()
        })
    }

    /// Truncation radius at `x`.
    #[inline]
    pub fn eps(&self, x: &HPoint) -> f64 {
        self.config.delta * x.height()
    }

    /// Total proposal rate `Lambda(x) = M_B |S^{d-1}| eps^{-alpha} / alpha`.
    #[inline]
    pub fn proposal_rate(&self, x: &HPoint) -> f64 {
        self.rate_coeff * self.eps(x).powf(-self.params.alpha)
    }

    /// One thinning step from `x`.
    #[inline]
    pub fn step<R: Rng + ?Sized>(&self, x: &HPoint, rng: &mut R) -> Step {
        let eps = self.eps(x);
        let holding_time: f64 = rng.sample::<f64, _>(Exp1) / (self.rate_coeff * eps.powf(-self.params.alpha));
        let d = self.params.d;
        let mut z = [0.0; MAX_DIM];
        propose_into(d, self.params.alpha, eps, rng, &mut z);
        let y = x.add(&z[..d]);
        let u: f64 = rng.random();
        if !(y.height() > 0.0) {
            return Step { holding_time, next: None };
        }
        if self.config.truncation == Truncation::Symmetric && x.dist(&y) <= self.config.delta * y.height() {
            return Step { holding_time, next: None };
        }
        let b = self.params.model_b(x, &y);
        assert!(b <= self.envelope, "kernel value {b} exceeds the envelope {}", self.envelope);
        let next = (u * self.envelope < b).then_some(y);
        Step { holding_time, next }
    }

    /// Runs from `x0` until exit, absorption or a cap. The visitor sees
    /// every holding interval as `(state, duration)`.
    pub fn run_with<R, V>(&self, x0: &HPoint, domain: &BoxDomain, rng: &mut R, mut visit: V) -> ExitRecord
    where
        R: Rng + ?Sized,
        V: FnMut(&HPoint, f64),
    {
        let eta = self.config.absorption_height();
        let cap = self.config.time_cap.unwrap_or(f64::INFINITY);
        let mut x = *x0;
        let mut t = 0.0;
        let mut steps = 0u64;
        let record = |x: HPoint, t: f64, outcome, steps| ExitRecord {
            exit_position: x,
            exit_time: t,
            outcome,
            steps,
        };
        if !domain.contains(&x) {
            return record(x, 0.0, Outcome::ExitedDomain, 0);
        }
        if x.height() < eta {
            return record(x, 0.0, Outcome::AbsorbedAtBoundary, 0);
        }
        loop {
            if steps >= self.config.max_steps {
                return record(x, t, Outcome::StepCapReached, steps);
            }
            let s = self.step(&x, rng);
            steps += 1;
            if t + s.holding_time >= cap {
                visit(&x, cap - t);
                return record(x, cap, Outcome::TimeCapReached, steps);
            }
            visit(&x, s.holding_time);
            t += s.holding_time;
            if let Some(y) = s.next {
                x = y;
                if !domain.contains(&x) {
                    return record(x, t, Outcome::ExitedDomain, steps);
                }
                if x.height() < eta {
                    return record(x, t, Outcome::AbsorbedAtBoundary, steps);
                }
            }
        }
    }

    pub fn run_until_exit<R: Rng + ?Sized>(&self, x0: &HPoint, domain: &BoxDomain, rng: &mut R) -> ExitRecord {
        self.run_with(x0, domain, rng, |_, _| {})
    }

    /// Runs until the first accepted jump and returns its time and target.
    pub fn first_jump<R: Rng + ?Sized>(&self, x: &HPoint, rng: &mut R) -> (f64, HPoint) {
        let mut t = 0.0;
        loop {
            let s = self.step(x, rng);
            t += s.holding_time;
            if let Some(y) = s.next {
                return (t, y);
            }
        }
    }

    /// Exit records of paths `0..n` (path `i` uses stream `i`).
    pub fn records(&self, x0: &HPoint, domain: &BoxDomain, n_paths: u64) -> Result<Vec<ExitRecord>> {
        self.check_start(x0, domain)?;
        let seed = self.config.seed;
        Ok((0..n_paths)
            .into_par_iter()
            .map(|i| self.run_until_exit(x0, domain, &mut path_rng(seed, i)))
            .collect())
    }

    /// Several functionals evaluated on the same `n_paths` paths.
    pub fn estimate_many(
        &self,
        x0: &HPoint,
        domain: &BoxDomain,
        functionals: &[Functional],
        n_paths: u64,
    ) -> Result<Vec<EstimateWithCI>> {
        if n_paths < 2 {
            return Err(Error::Usage("at least two paths are required".into()));
        }
        self.check_start(x0, domain)?;
        let seed = self.config.seed;
        let occupations: Vec<&PointFn> = functionals
            .iter()
            .filter_map(|f| match f {
                Functional::Occupation(phi) => Some(phi),
                _ => None,
            })
            .collect();
        // Collecting in index order keeps the reduction independent of the
        // number of worker threads.
        let rows: Vec<Vec<Option<f64>>> = (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let mut acc = vec![0.0; occupations.len()];
                let rec = self.run_with(x0, domain, &mut path_rng(seed, i), |x, h| {
                    for (a, phi) in acc.iter_mut().zip(&occupations) {
                        *a += h * phi(x);
                    }
                });
                let mut k = 0;
                functionals
                    .iter()
                    .map(|f| {
                        let occ = if matches!(f, Functional::Occupation(_)) {
                            k += 1;
                            acc[k - 1]
                        } else {
                            0.0
                        };
                        f.value(&rec, occ)
                    })
                    .collect()
            })
            .collect();
        (0..functionals.len())
            .map(|j| {
                let xs: Vec<f64> = rows.iter().filter_map(|r| r[j]).collect();
                let excluded = n_paths - xs.len() as u64;
                EstimateWithCI::from_samples(&xs, excluded)
            })
            .collect()
    }

    pub fn estimate(
        &self,
        x0: &HPoint,
        domain: &BoxDomain,
        functional: &Functional,
        n_paths: u64,
    ) -> Result<EstimateWithCI> {
        Ok(self.estimate_many(x0, domain, std::slice::from_ref(functional), n_paths)?[0])
    }

    fn check_start(&self, x0: &HPoint, domain: &BoxDomain) -> Result<()> {
        if x0.dim() != self.params.d {
            return Err(Error::ConstraintViolation(format!(
                "start point has dimension {}, kernel has {}",
                x0.dim(),
                self.params.d
            )));
        }
        domain.validate(self.params.d)?;
        if !x0.is_interior() || !domain.contains(x0) {
            return Err(Error::ConstraintViolation(format!("start point {x0:?} is not inside the domain")));
        }
        Ok(())
    }

    /// Writes every step of paths `0..n_paths` as CSV rows
    /// `path_id, step, t, x_1..x_d, accepted`, gzip-compressed on request.
    pub fn dump_paths(&self, file: &Path, gzip: bool, x0: &HPoint, domain: &BoxDomain, n_paths: u64) -> Result<()> {
        self.check_start(x0, domain)?;
        let out = std::fs::File::create(file)?;
        let sink: Box<dyn Write> = if gzip {
            Box::new(flate2::write::GzEncoder::new(out, flate2::Compression::default()))
        } else {
            Box::new(std::io::BufWriter::new(out))
        };
        let mut w = csv::Writer::from_writer(sink);
        let d = self.params.d;
        let mut header = vec!["path_id".to_string(), "step".into(), "t".into()];
        header.extend((1..=d).map(|i| format!("x_{i}")));
        header.push("accepted".into());
        w.write_record(&header)?;
        let eta = self.config.absorption_height();
        for i in 0..n_paths {
            let mut rng = path_rng(self.config.seed, i);
            let mut x = *x0;
            let mut t = 0.0;
            let row = |step: u64, t: f64, x: &HPoint, acc: bool| {
                let mut r = vec![i.to_string(), step.to_string(), format!("{t:e}")];
                r.extend(x.coords().iter().map(|c| format!("{c:e}")));
                r.push((acc as u8).to_string());
                r
            };
            w.write_record(row(0, 0.0, &x, true))?;
            for step in 1..=self.config.max_steps {
                if !domain.contains(&x) || x.height() < eta {
                    break;
                }
                let s = self.step(&x, &mut rng);
                t += s.holding_time;
                if self.config.time_cap.is_some_and(|c| t >= c) {
                    break;
                }
                if let Some(y) = s.next {
                    x = y;
                }
                w.write_record(row(step, t, &x, s.next.is_some()))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Convenience wrapper around [`Simulator::run_until_exit`].
pub fn run_until_exit<R: Rng + ?Sized>(
    params: &KernelParams,
    config: &SimConfig,
    x0: &HPoint,
    domain: &BoxDomain,
    rng: &mut R,
) -> Result<ExitRecord> {
    Ok(Simulator::new(params, config)?.run_until_exit(x0, domain, rng))
}

/// Convenience wrapper around [`Simulator::estimate`].
pub fn estimate(
    params: &KernelParams,
    config: &SimConfig,
    x0: &HPoint,
    domain: &BoxDomain,
    functional: &Functional,
    n_paths: u64,
) -> Result<EstimateWithCI> {
    Simulator::new(params, config)?.estimate(x0, domain, functional, n_paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(alpha: f64, d: usize, beta: [f64; 4], delta: f64) -> Simulator {
        let cfg = SimConfig {
            delta,
            seed: 3,
            ..SimConfig::default()
        };
        Simulator::new(&KernelParams::new(alpha, d, beta), &cfg).unwrap()
    }

    #[test]
    fn proposal_tail_and_support() {
        let (alpha, eps) = (1.5, 0.3);
        let mut rng = path_rng(1, 0);
        let n = 1_000_000;
        let mut far = 0u64;
        let mut mean = [0.0f64; 3];
        for _ in 0..n {
            let z = propose_jump(&KernelParams::new(alpha, 3, [0.0; 4]), eps, &mut rng);
            let r = z.iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!(r >= eps * (1.0 - 1e-12));
            far += (r > 2.0 * eps) as u64;
            for (m, c) in mean.iter_mut().zip(&z) {
                *m += c / r;
            }
        }
        let p = 2f64.powf(-alpha);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((far as f64 / n as f64 - p).abs() < 3.0 * se);
        // Unit direction components have variance 1/3.
        let se_dir = (1.0 / 3.0 / n as f64).sqrt();
        assert!(mean.iter().all(|m| (m / n as f64).abs() < 3.0 * se_dir), "{mean:?}");
    }

    #[test]
    fn steps_below_the_boundary_are_rejected() {
        // With delta = 1/2 some proposals from x_d = 1 land below zero.
        let s = sim(1.5, 1, [0.0; 4], 0.5);
        let x = HPoint::on_axis(1, 1.0);
        let mut rng = path_rng(2, 0);
        let (mut below, mut acc) = (0, 0);
        for _ in 0..200_000 {
            let mut probe = rng.clone();
            let eps = s.eps(&x);
            let _: f64 = probe.sample(Exp1);
            let z = propose_jump(s.params(), eps, &mut probe);
            let st = s.step(&x, &mut rng);
            if x.height() + z[0] <= 0.0 {
                below += 1;
                assert!(st.next.is_none());
            } else if st.next.is_some() {
                acc += 1;
            }
        }
        assert!(below > 0);
        // Above the boundary the acceptance probability is 1/1.05.
        let total = 200_000 - below;
        let p = 1.0 / crate::kernel::ENVELOPE_SAFETY;
        let se = (p * (1.0 - p) / total as f64).sqrt();
        assert!((acc as f64 / total as f64 - p).abs() < 3.0 * se);
    }

    #[test]
    fn acceptance_rate_matches_quadrature() {
        use crate::quad::{integrate_pieces, integrate_semiinfinite, QuadSpec};
        let s = sim(1.5, 2, [0.5, 0.0, 0.0, 0.0], 0.1);
        let x = HPoint::on_axis(2, 1.0);
        let eps = 0.1;
        let alpha = 1.5;
        // Polar coordinates around x: the angular integral of B at radius r.
        let spec = QuadSpec::constants();
        let angular = |r: f64| {
            let f = |th: f64| {
                let yd = 1.0 + r * th.sin();
                if yd <= 0.0 {
                    0.0
                } else {
                    s.params().model_b_reduced(1.0, yd, r)
                }
            };
            let mut br = vec![-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2, 1.5 * std::f64::consts::PI];
            if r > 1.0 {
                let a = (-1.0 / r).asin();
                br = vec![a, std::f64::consts::FRAC_PI_2, std::f64::consts::PI - a];
            }
            integrate_pieces(f, &br, &spec).unwrap().value
        };
        let radial = |r: f64| angular(r) * r.powf(-1.0 - alpha);
        let mass = integrate_pieces(radial, &[eps, 0.5, 1.0], &spec).unwrap().value
            + integrate_pieces(radial, &[1.0, 2.0, 4.0], &spec).unwrap().value
            + integrate_semiinfinite(radial, 4.0, &spec, 1.0 + alpha).unwrap().value;
        let p = mass / s.proposal_rate(&x);
        let mut rng = path_rng(9, 0);
        let n = 1_000_000;
        let acc = (0..n).filter(|_| s.step(&x, &mut rng).next.is_some()).count();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((acc as f64 / n as f64 - p).abs() < 3.0 * se, "{} vs {p}", acc as f64 / n as f64);
    }

    #[test]
    fn degenerate_starts() {
        let s = sim(1.5, 1, [0.0; 4], 0.1);
        let mut rng = path_rng(0, 0);
        let r = s.run_until_exit(&HPoint::on_axis(1, 5e-5), &BoxDomain::HalfSpace, &mut rng);
        assert_eq!(r.outcome, Outcome::AbsorbedAtBoundary);
        assert_eq!((r.exit_time, r.steps), (0.0, 0));
    }

    #[test]
    fn records_are_deterministic_and_consistent() {
        let s = sim(1.5, 2, [0.5, 0.3, 0.0, 0.0], 0.2);
        let dom = BoxDomain::strip(1.0);
        let x0 = HPoint::on_axis(2, 0.2);
        let a = s.records(&x0, &dom, 200).unwrap();
        let b = s.records(&x0, &dom, 200).unwrap();
        assert_eq!(a, b);
        let eta = s.config().absorption_height();
        for r in &a {
            assert!(r.exit_time >= 0.0);
            match r.outcome {
                Outcome::ExitedDomain => assert!(!dom.contains(&r.exit_position)),
                Outcome::AbsorbedAtBoundary => assert!(r.exit_position.height() < eta),
                _ => panic!("unexpected cap"),
            }
        }
        // The pool size does not change the paths.
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| s.records(&x0, &dom, 200).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn constant_functional_has_zero_error() {
        let s = sim(1.5, 1, [0.0; 4], 0.2);
        let one: PointFn = Arc::new(|_| 1.0);
        let e = s
            .estimate(&HPoint::on_axis(1, 0.3), &BoxDomain::strip(1.0), &Functional::Terminal(one), 100)
            .unwrap();
        assert_eq!((e.mean, e.std_error, e.n_samples), (1.0, 0.0, 100));
        assert_eq!(e.ci95, (1.0, 1.0));
    }

    #[test]
    fn estimate_rejects_bad_input() {
        let s = sim(1.5, 1, [0.0; 4], 0.2);
        let dom = BoxDomain::strip(1.0);
        assert!(matches!(
            s.estimate(&HPoint::on_axis(1, 0.3), &dom, &Functional::ExitTime, 1),
            Err(Error::Usage(_))
        ));
        assert!(s.estimate(&HPoint::on_axis(1, 0.7), &dom, &Functional::ExitTime, 10).is_err());
        let capped = s.with_config(&SimConfig { max_steps: 1, ..s.config().clone() }).unwrap();
        let e = capped.estimate(&HPoint::on_axis(1, 1.0), &BoxDomain::HalfSpace, &Functional::ExitTime, 50);
        assert!(matches!(e, Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn time_cap_truncates_exit_time() {
        let s = sim(1.5, 1, [0.0; 4], 0.2);
        let cfg = SimConfig { time_cap: Some(1e-3), ..s.config().clone() };
        let s = s.with_config(&cfg).unwrap();
        let recs = s.records(&HPoint::on_axis(1, 1.0), &BoxDomain::HalfSpace, 50).unwrap();
        assert!(recs.iter().all(|r| r.exit_time <= 1e-3));
        assert!(recs.iter().any(|r| r.outcome == Outcome::TimeCapReached));
    }

    #[test]
    fn symmetric_truncation_acceptance_matches_closed_form() {
        // d = 1, beta = 0, x = 1: upward proposals of length r <= delta / (1 - delta)
        // are dropped, downward ones beyond the boundary are rejected.
        let delta = 0.2;
        let s = sim(1.5, 1, [0.0; 4], delta);
        let s = s
            .with_config(&SimConfig { truncation: Truncation::Symmetric, ..s.config().clone() })
            .unwrap();
        let x = HPoint::on_axis(1, 1.0);
        let mut rng = path_rng(3, 0);
        let n = 200_000;
        let mut accepted = 0;
        for _ in 0..n {
            if let Some(y) = s.step(&x, &mut rng).next {
                assert!(x.dist(&y) > delta * x.height().max(y.height()));
                accepted += 1;
            }
        }
        let alpha: f64 = 1.5;
        let expected = 0.5 * ((1.0 - delta).powf(alpha) + 1.0 - delta.powf(alpha)) / s.envelope();
        let rate = accepted as f64 / n as f64;
        let se = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((rate - expected).abs() < 4.0 * se, "{rate} vs {expected}");
    }

    #[test]
    fn transport_scales_time_and_position() {
        let r = ExitRecord {
            exit_position: HPoint::new(&[0.5, 0.25]).unwrap(),
            exit_time: 3.0,
            outcome: Outcome::ExitedDomain,
            steps: 7,
        };
        assert_eq!(scaling_transport(&r, 1.0, 1.5), r);
        let t = scaling_transport(&r, 2.0, 1.5);
        assert_eq!(t.exit_time, 3.0 * 2f64.powf(1.5));
        assert_eq!(t.exit_position.coords(), &[1.0, 0.5]);
        assert_eq!(t.steps, 7);
    }

    #[test]
    fn path_dump_round_trip() {
        let s = sim(1.5, 2, [0.0; 4], 0.3);
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("paths.csv.gz");
        s.dump_paths(&file, true, &HPoint::on_axis(2, 0.2), &BoxDomain::strip(1.0), 3).unwrap();
        let mut text = String::new();
        use std::io::Read;
        flate2::read::GzDecoder::new(std::fs::File::open(&file).unwrap())
            .read_to_string(&mut text)
            .unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "path_id,step,t,x_1,x_2,accepted");
        let ids: std::collections::BTreeSet<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(ids.len(), 3);
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig { delta: 0.6, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig { eta_abs: 0.0, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig { time_cap: Some(-1.0), ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig::default().validate().is_ok());
    }
}
