//! Points of the closed upper half-space and the exit domains used by the
//! simulator: lateral boxes `D_w(a, b)`, strips `U(r)`, balls and the whole
//! half-space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest spatial dimension supported by the fixed-size point type.
pub const MAX_DIM: usize = 8;

/// Surface area of the unit sphere in `R^n`, `2 pi^{n/2} / Gamma(n/2)`;
/// for `n = 1` this counts the two points `{-1, 1}`.
pub fn sphere_area(n: usize) -> f64 {
    let h = 0.5 * n as f64;
    2.0 * (h * std::f64::consts::PI.ln() - statrs::function::gamma::ln_gamma(h)).exp()
}

/// A point `x = (x~, x_d)` of `R^d`. The last coordinate is the distance to
/// the boundary hyperplane.
#[derive(Clone, Copy, PartialEq)]
pub struct HPoint {
    coords: [f64; MAX_DIM],
    dim: u8,
}

impl HPoint {
    pub fn new(coords: &[f64]) -> Result<Self> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(Error::ConstraintViolation(format!(
                "point dimension must be in 1..={MAX_DIM}, got {}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::ConstraintViolation("non-finite coordinate".into()));
        }
        let mut c = [0.0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Self {
            coords: c,
            dim: coords.len() as u8,
        })
    }

    /// The point `(0~, height)` on the vertical axis.
    pub fn on_axis(dim: usize, height: f64) -> Self {
        assert!((1..=MAX_DIM).contains(&dim));
        let mut c = [0.0; MAX_DIM];
        c[dim - 1] = height;
        Self {
            coords: c,
            dim: dim as u8,
        }
    }

    /// The point `(lateral, height)`; `lateral` must have `dim - 1` entries.
    pub fn from_parts(lateral: &[f64], height: f64) -> Result<Self> {
        let mut v = lateral.to_vec();
        v.push(height);
        Self::new(&v)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords[..self.dim as usize]
    }

    /// Boundary coordinate `x_d`.
    #[inline]
    pub fn height(&self) -> f64 {
        self.coords[self.dim as usize - 1]
    }

    #[inline]
    pub fn lateral(&self) -> &[f64] {
        &self.coords[..self.dim as usize - 1]
    }

    #[inline]
    pub fn is_interior(&self) -> bool {
        self.height() > 0.0
    }

    #[inline]
    pub fn dist(&self, other: &HPoint) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    #[inline]
    pub fn lateral_dist(&self, lateral: &[f64]) -> f64 {
        self.lateral()
            .iter()
            .zip(lateral)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    #[inline]
    pub fn add(&self, disp: &[f64]) -> HPoint {
        let mut out = *self;
        for (c, z) in out.coords_mut().iter_mut().zip(disp) {
            *c += z;
        }
        out
    }

    pub fn scaled(&self, r: f64) -> HPoint {
        let mut out = *self;
        out.coords_mut().iter_mut().for_each(|c| *c *= r);
        out
    }
}

impl std::fmt::Debug for HPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.coords()).finish()
    }
}

impl Serialize for HPoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for HPoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        HPoint::new(&v).map_err(serde::de::Error::custom)
    }
}

/// Exit domains inside the half-space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoxDomain {
    /// `D_w(a, b) = { |x~ - w~| < a, 0 < x_d < b }`.
    Box { center: Vec<f64>, a: f64, b: f64 },
    /// `U(r) = D_0(r/2, r/2)`.
    Strip { r: f64 },
    /// `B(c, r)` intersected with the half-space.
    Ball { center: HPoint, r: f64 },
    HalfSpace,
}

impl BoxDomain {
    pub fn boxed(center: &[f64], a: f64, b: f64) -> Result<Self> {
        let dom = BoxDomain::Box {
            center: center.to_vec(),
            a,
            b,
        };
        dom.validate(center.len() + 1)?;
        Ok(dom)
    }

    /// `D(a, b)` centred on the axis.
    pub fn axis_box(dim: usize, a: f64, b: f64) -> Self {
        BoxDomain::Box {
            center: vec![0.0; dim - 1],
            a,
            b,
        }
    }

    pub fn strip(r: f64) -> Self {
        BoxDomain::Strip { r }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(Error::ConstraintViolation(m));
        match self {
            BoxDomain::Box { center, a, b } => {
                if center.len() + 1 != dim {
                    return bad(format!(
                        "box centre has {} lateral coordinates, expected {}",
                        center.len(),
                        dim - 1
                    ));
                }
                if !(*a > 0.0 && *b > 0.0) {
                    return bad("box widths a, b must be positive".into());
                }
            }
            BoxDomain::Strip { r } => {
                if !(*r > 0.0) {
                    return bad("strip size r must be positive".into());
                }
            }
            BoxDomain::Ball { center, r } => {
                if center.dim() != dim {
                    return bad("ball centre dimension mismatch".into());
                }
                if !(*r > 0.0) {
                    return bad("ball radius must be positive".into());
                }
            }
            BoxDomain::HalfSpace => {}
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, x: &HPoint) -> bool {
        let h = x.height();
        if h <= 0.0 {
            return false;
        }
        match self {
            BoxDomain::Box { center, a, b } => h < *b && x.lateral_dist(center) < *a,
            BoxDomain::Strip { r } => {
                let half = 0.5 * r;
                h < half && x.lateral().iter().map(|c| c * c).sum::<f64>().sqrt() < half
            }
            BoxDomain::Ball { center, r } => x.dist(center) < *r,
            BoxDomain::HalfSpace => true,
        }
    }

    /// The image `rV` of the domain under `x -> r x`.
    pub fn scaled(&self, r: f64) -> Self {
        match self {
            BoxDomain::Box { center, a, b } => BoxDomain::Box {
                center: center.iter().map(|c| c * r).collect(),
                a: a * r,
                b: b * r,
            },
            BoxDomain::Strip { r: s } => BoxDomain::Strip { r: s * r },
            BoxDomain::Ball { center, r: rad } => BoxDomain::Ball {
                center: center.scaled(r),
                r: rad * r,
            },
            BoxDomain::HalfSpace => BoxDomain::HalfSpace,
        }
    }
}
