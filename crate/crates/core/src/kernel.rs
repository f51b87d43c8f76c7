//! The model boundary function `B(x, y)` and the jump kernel
//! `J(x, y) = |x - y|^{-d-alpha} B(x, y)`.
//!
//! `B` depends on the pair `(x, y)` only through the smaller height
//! `m = x_d ∧ y_d`, the larger height `M = x_d ∨ y_d` and the distance
//! `r = |x - y|`:
//!
//! ```text
//! B~ = (m/r ∧ 1)^b1 (M/r ∧ 1)^b2 log(1 + (M∧r)/(m∧r))^b3 log(1 + r/(M∧r))^b4
//! ```
//!
//! The model kernel used throughout the crate is `B~ / (log 2)^(b3+b4)`,
//! which equals one on the diagonal.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::geometry::{BoxDomain, HPoint, MAX_DIM};

/// Safety factor applied on top of the numerically located supremum of `B`.
pub const ENVELOPE_SAFETY: f64 = 1.05;

/// Kernel parameter bundle: stability index, dimension, boundary exponents
/// and the declared Hölder exponent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub alpha: f64,
    pub d: usize,
    pub beta: [f64; 4],
    #[serde(default = "default_theta")]
    pub theta: f64,
}

fn default_theta() -> f64 {
    1.0
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 36.0 {
        x + (-x).exp()
    } else if x < -36.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

impl KernelParams {
    /// Parameter bundle with the default Hölder exponent `theta = 1`.
    pub fn new(alpha: f64, d: usize, beta: [f64; 4]) -> Self {
        Self {
            alpha,
            d,
            beta,
            theta: default_theta(),
        }
    }

    pub fn validate(self) -> Result<Self> {
        let fail = |m: &str| Err(Error::ConstraintViolation(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return fail("alpha must lie in (0, 2)");
        }
        if self.d < 1 {
            return fail("d >= 1 required");
        }
        if self.d > MAX_DIM {
            return Err(Error::ConstraintViolation(format!(
                "d <= {MAX_DIM} supported"
            )));
        }
        if self.beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return fail("beta exponents must be finite and non-negative");
        }
        let [b1, b2, b3, b4] = self.beta;
        if b3 > 0.0 && b1 <= 0.0 {
            return fail("beta1 > 0 required when beta3 > 0");
        }
        if b4 > 0.0 && b2 <= 0.0 {
            return fail("beta2 > 0 required when beta4 > 0");
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return fail("theta must be positive");
        }
        if self.alpha >= 1.0 && self.theta <= self.alpha - 1.0 {
            return fail("theta > alpha - 1 required when alpha >= 1");
        }
        Ok(self)
    }

    /// `B ≡ 1` (the censored stable case).
    #[inline]
    pub fn is_isotropic(&self) -> bool {
        self.beta.iter().all(|b| *b == 0.0)
    }

    /// `(alpha - 1)_+` lower end of the positivity range of the constant.
    pub fn p_lower(&self) -> f64 {
        (self.alpha - 1.0).max(0.0)
    }

    /// Upper end `alpha + beta1` of the admissible exponent range.
    pub fn p_upper(&self) -> f64 {
        self.alpha + self.beta[0]
    }

    /// `ln B` for the normalised model kernel, with the smaller height given
    /// as a logarithm so that heights below the floating-point range can be
    /// handled. `hi` is the larger height and `dist` the distance `|x - y|`.
    #[inline]
    pub fn ln_model_b_reduced(&self, ln_lo: f64, hi: f64, dist: f64) -> f64 {
        if self.is_isotropic() || dist == 0.0 {
            return 0.0;
        }
        let [b1, b2, b3, b4] = self.beta;
        let ln_r = dist.ln();
        let mut acc = 0.0;
        if b1 > 0.0 {
            acc += b1 * (ln_lo - ln_r).min(0.0);
        }
        if b2 > 0.0 {
            acc += b2 * (hi.ln() - ln_r).min(0.0);
        }
        let ln_hi_r = hi.min(dist).ln();
        if b3 > 0.0 {
            let f3 = softplus(ln_hi_r - ln_lo.min(ln_r));
            acc += b3 * (f3 / LN_2).ln();
        }
        if b4 > 0.0 {
            let f4 = softplus(ln_r - ln_hi_r);
            acc += b4 * (f4 / LN_2).ln();
        }
        acc
    }

    /// Normalised model kernel as a function of the two heights and the
    /// distance.
    #[inline]
    pub fn model_b_reduced(&self, xd: f64, yd: f64, dist: f64) -> f64 {
        if self.is_isotropic() {
            return 1.0;
        }
        let (lo, hi) = if xd <= yd { (xd, yd) } else { (yd, xd) };
        self.ln_model_b_reduced(lo.ln(), hi, dist).exp()
    }

    /// `B - 1`, accurate when `B` is close to one.
    #[inline]
    pub fn model_b_excess_reduced(&self, xd: f64, yd: f64, dist: f64) -> f64 {
        if self.is_isotropic() {
            return 0.0;
        }
        let (lo, hi) = if xd <= yd { (xd, yd) } else { (yd, xd) };
        self.ln_model_b_reduced(lo.ln(), hi, dist).exp_m1()
    }

    fn normalisation(&self) -> f64 {
        LN_2.powf(self.beta[2] + self.beta[3])
    }

    /// Un-normalised comparison function `B~(x, y)`.
    pub fn btilde(&self, x: &HPoint, y: &HPoint) -> Result<f64> {
        let r = x.dist(y);
        if r == 0.0 {
            return Err(Error::CoincidentPoints);
        }
        Ok(self.model_b_reduced(x.height(), y.height(), r) * self.normalisation())
    }

    /// Normalised model kernel; equals one on the diagonal.
    pub fn model_b(&self, x: &HPoint, y: &HPoint) -> f64 {
        self.model_b_reduced(x.height(), y.height(), x.dist(y))
    }

    pub fn jump_kernel(&self, x: &HPoint, y: &HPoint) -> Result<f64> {
        let r = x.dist(y);
        if r == 0.0 {
            return Err(Error::CoincidentPoints);
        }
        Ok(r.powf(-(self.d as f64) - self.alpha) * self.model_b_reduced(x.height(), y.height(), r))
    }

    /// Upper bound `M_B >= sup B` found by maximising `ln B` over the two
    /// clipped ratio variables `a = m/r ∧ 1 <= b = M/r ∧ 1`, inflated by
    /// [`ENVELOPE_SAFETY`].
    pub fn kernel_envelope(&self) -> Result<f64> {
        if self.is_isotropic() {
            return Ok(ENVELOPE_SAFETY);
        }
        // With r = 1 the pair (m, M) = (a, b) realises the clipped ratios.
        let f = |u: f64, v: f64| self.ln_model_b_reduced(u, v.exp(), 1.0);
        const SPAN: f64 = 40.0;
        const STEP: f64 = 0.25;
        let n = (SPAN / STEP) as usize;
        let (mut bu, mut bv, mut best) = (0.0, 0.0, f64::NEG_INFINITY);
        for i in 0..=n {
            let v = -(i as f64) * STEP;
            for j in i..=n {
                let u = -(j as f64) * STEP;
                let val = f(u, v);
                if val > best {
                    (bu, bv, best) = (u, v, val);
                }
            }
        }
        if !best.is_finite() {
            return Err(Error::EnvelopeSearchFailure(
                "non-finite kernel value on the search grid".into(),
            ));
        }
        // Coordinate-wise golden-section refinement inside the grid cell.
        for _ in 0..8 {
            let lo_u = (bu - STEP).max(-2.0 * SPAN);
            let hi_u = (bu + STEP).min(bv);
            (bu, best) = golden_max(|u| f(u, bv), lo_u, hi_u, (bu, best));
            let lo_v = (bv - STEP).max(bu);
            let hi_v = (bv + STEP).min(0.0);
            (bv, best) = golden_max(|v| f(bu, v), lo_v, hi_v, (bv, best));
        }
        // A maximiser pinned to the lower edge must not keep increasing.
        if bu <= -SPAN + STEP {
            let far = f(-4.0 * SPAN, bv);
            if far > best + 1e-12 {
                return Err(Error::EnvelopeSearchFailure(format!(
                    "ln B still increasing at the search edge ({far} > {best})"
                )));
            }
        }
        if bv <= -SPAN + STEP {
            let far = f(-4.0 * SPAN, -4.0 * SPAN);
            if far > best + 1e-12 {
                return Err(Error::EnvelopeSearchFailure(
                    "ln B still increasing along the diagonal edge".into(),
                ));
            }
        }
        Ok(ENVELOPE_SAFETY * best.exp().max(1.0))
    }
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, start: (f64, f64)) -> (f64, f64) {
    let (mut best_x, mut best_v) = start;
    if !(b > a) {
        return (best_x, best_v);
    }
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    for (x, v) in [(c, fc), (d, fd)] {
        if v > best_v {
            best_x = x;
            best_v = v;
        }
    }
    (best_x, best_v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p1(h: f64) -> HPoint {
        HPoint::on_axis(1, h)
    }

    #[test]
    fn validate_examples() {
        assert!(KernelParams::new(1.5, 2, [0.5, 0.0, 0.0, 0.0]).validate().is_ok());
        let e = KernelParams::new(1.5, 1, [0.0, 0.0, 1.0, 0.0]).validate();
        assert!(matches!(e, Err(Error::ConstraintViolation(m)) if m.contains("beta1")));
        let e = KernelParams::new(2.1, 1, [0.0; 4]).validate();
        assert!(matches!(e, Err(Error::ConstraintViolation(m)) if m.contains("alpha")));
        let e = KernelParams::new(1.0, 1, [0.0, 0.0, 0.0, 0.2]).validate();
        assert!(matches!(e, Err(Error::ConstraintViolation(m)) if m.contains("beta2")));
        let mut k = KernelParams::new(1.8, 1, [0.0; 4]);
        k.theta = 0.5;
        assert!(k.validate().is_err());
        assert!(KernelParams::new(1.5, 0, [0.0; 4]).validate().is_err());
    }

    #[test]
    fn btilde_examples() {
        let k0 = KernelParams::new(1.5, 1, [0.0; 4]);
        assert_eq!(k0.btilde(&p1(0.3), &p1(2.0)).unwrap(), 1.0);

        let k = KernelParams::new(1.5, 1, [1.0, 1.0, 0.0, 0.0]);
        assert_relative_eq!(k.btilde(&p1(0.5), &p1(1.5)).unwrap(), 0.5, max_relative = 1e-14);

        let k = KernelParams::new(1.5, 1, [1.0, 0.0, 1.0, 0.0]);
        assert_relative_eq!(
            k.btilde(&p1(0.1), &p1(1.1)).unwrap(),
            0.1 * 11f64.ln(),
            max_relative = 1e-13
        );
        assert!(matches!(k.btilde(&p1(1.0), &p1(1.0)), Err(Error::CoincidentPoints)));
    }

    #[test]
    fn model_b_is_one_on_the_diagonal() {
        let k = KernelParams::new(1.5, 2, [0.5, 0.4, 0.5, 0.5]);
        let x = HPoint::new(&[0.3, 0.7]).unwrap();
        assert_eq!(k.model_b(&x, &x), 1.0);
        // The normalised formula tends to one as y -> x.
        let y = HPoint::new(&[0.3, 0.7 + 1e-9]).unwrap();
        assert_relative_eq!(k.model_b(&x, &y), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn jump_kernel_examples() {
        let k = KernelParams::new(1.5, 1, [0.0; 4]);
        assert_eq!(k.jump_kernel(&p1(1.0), &p1(2.0)).unwrap(), 1.0);
        let k = KernelParams::new(1.5, 2, [0.5, 0.3, 0.0, 0.0]);
        let x = HPoint::new(&[0.1, 0.4]).unwrap();
        let y = HPoint::new(&[-0.7, 1.3]).unwrap();
        let a = 2.0;
        assert_relative_eq!(
            k.jump_kernel(&x.scaled(a), &y.scaled(a)).unwrap(),
            a.powf(-3.5) * k.jump_kernel(&x, &y).unwrap(),
            max_relative = 1e-13
        );
    }

    #[test]
    fn envelope_examples() {
        assert_eq!(KernelParams::new(1.5, 1, [0.0; 4]).kernel_envelope().unwrap(), 1.05);
        let e = KernelParams::new(1.5, 1, [1.0, 0.0, 0.0, 0.0]).kernel_envelope().unwrap();
        assert_relative_eq!(e, 1.05, max_relative = 1e-12);

        // Independent oracle for beta = (1,0,1,0): dense 1-D grid for the
        // normalised t log(1 + 1/t) / log 2 over (0, 1].
        let oracle = (1..=200_000)
            .map(|i| {
                let t = i as f64 / 200_000.0;
                t * (1.0 + 1.0 / t).ln() / LN_2
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let e = KernelParams::new(1.5, 1, [1.0, 0.0, 1.0, 0.0]).kernel_envelope().unwrap();
        assert_relative_eq!(e, 1.05 * oracle, max_relative = 1e-9);
    }

    #[test]
    fn envelope_dominates_degenerate_kernels() {
        // beta4 drives the supremum above the diagonal value.
        let k = KernelParams::new(1.2, 1, [0.1, 0.05, 0.0, 2.0]);
        let m = k.kernel_envelope().unwrap();
        assert!(m > 1.05);
        for i in 1..400 {
            for j in 1..=i {
                let (a, b) = ((j as f64 / 400.0).powi(3), (i as f64 / 400.0).powi(3));
                assert!(k.model_b_reduced(a, b, 1.0) <= m);
            }
        }
    }

    fn arb_kernel() -> impl Strategy<Value = KernelParams> {
        (
            0.2f64..1.95,
            1usize..=3,
            0.0f64..1.0,
            0.0f64..1.0,
            0.0f64..1.0,
            0.0f64..1.0,
        )
            .prop_map(|(alpha, d, b1, b2, b3, b4)| {
                let b3 = if b1 > 0.05 { b3 } else { 0.0 };
                let b4 = if b2 > 0.05 { b4 } else { 0.0 };
                let mut k = KernelParams::new(alpha, d, [b1, b2, b3, b4]);
                k.theta = 1.0;
                k
            })
    }

    fn arb_point(d: usize) -> impl Strategy<Value = HPoint> {
        (proptest::collection::vec(-4.0f64..4.0, d - 1), 1e-3f64..5.0)
            .prop_map(|(lat, h)| HPoint::from_parts(&lat, h).unwrap())
    }

    fn arb_case() -> impl Strategy<Value = (KernelParams, HPoint, HPoint)> {
        arb_kernel().prop_flat_map(|k| {
            let d = k.d;
            (Just(k), arb_point(d), arb_point(d))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn symmetric_exactly((k, x, y) in arb_case()) {
            prop_assert_eq!(k.model_b(&x, &y), k.model_b(&y, &x));
        }

        #[test]
        fn scale_invariant((k, x, y) in arb_case(), a in prop::sample::select(vec![0.5, 2.0, 10.0])) {
            let b0 = k.model_b(&x, &y);
            let b1 = k.model_b(&x.scaled(a), &y.scaled(a));
            prop_assert!((b0 - b1).abs() <= 1e-13 * b0.max(1e-300) + 1e-300);
        }

        #[test]
        fn bounded_by_envelope((k, x, y) in arb_case()) {
            let m = k.kernel_envelope().unwrap();
            let b = k.model_b(&x, &y);
            prop_assert!(b > 0.0 && b <= m);
        }

        #[test]
        fn log_correction_only_increases_the_kernel((k, x, y) in arb_case()) {
            let mut k0 = k.clone();
            k0.beta[3] = 0.0;
            // With the diagonal normalisation the beta4 factor is >= 1.
            prop_assert!(k0.model_b(&x, &y) <= k.model_b(&x, &y) * (1.0 + 1e-14));
            // Un-normalised form: (log 2)^b4 B~_{b1,b2,b3,0} <= B~.
            if x.dist(&y) > 0.0 {
                let lhs = LN_2.powf(k.beta[3]) * k0.btilde(&x, &y).unwrap();
                prop_assert!(lhs <= k.btilde(&x, &y).unwrap() * (1.0 + 1e-14));
            }
        }
    }

    #[test]
    fn lateral_translation_invariance_is_exact() {
        let k = KernelParams::new(1.5, 3, [0.5, 0.4, 0.5, 0.5]);
        let x = HPoint::new(&[0.25, -0.5, 0.75]).unwrap();
        let y = HPoint::new(&[1.5, 0.125, 0.0625]).unwrap();
        for z in [[1.0, 2.0, 0.0], [-4.0, 8.0, 0.0], [0.5, -0.25, 0.0]] {
            assert_eq!(k.model_b(&x.add(&z), &y.add(&z)), k.model_b(&x, &y));
        }
    }

    #[test]
    fn isotropic_kernel_is_identically_one() {
        let k = KernelParams::new(0.7, 2, [0.0; 4]);
        let x = HPoint::new(&[0.0, 1e-6]).unwrap();
        let y = HPoint::new(&[30.0, 2.0]).unwrap();
        assert_eq!(k.model_b(&x, &y), 1.0);
        assert_eq!(k.btilde(&x, &y).unwrap(), 1.0);
    }

    #[test]
    fn json_round_trip_schema() {
        let k: KernelParams =
            serde_json::from_str(r#"{"alpha":1.5,"d":2,"beta":[0.5,0,0,0],"theta":0.9}"#).unwrap();
        assert_eq!(k, KernelParams { alpha: 1.5, d: 2, beta: [0.5, 0.0, 0.0, 0.0], theta: 0.9 });
        let v: serde_json::Value = serde_json::to_value(&k).unwrap();
        assert_eq!(v["beta"][0], 0.5);
    }
}
