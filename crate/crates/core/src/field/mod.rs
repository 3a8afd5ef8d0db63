//! Scalar coefficient and data fields: constants, registered closed forms and
//! batch-evaluated custom fields.

mod catalog;
pub mod hyperdual;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use hyperdual::{HyperDual, Real};

use crate::error::{Result, WanError};

/// A named closed-form function instantiated for plain and hyper-dual numbers.
#[derive(Clone, Copy)]
pub struct ClosedForm {
    pub name: &'static str,
    /// Smallest point length the definition indexes into.
    pub min_dim: usize,
    /// Whether the last coordinate is read as time.
    pub time_dependent: bool,
    f: fn(&[f64]) -> f64,
    hd: fn(&[HyperDual]) -> HyperDual,
}

impl ClosedForm {
    pub fn lookup(name: &str) -> Result<Self> {
        catalog::CATALOG
            .iter()
            .find(|c| c.name == name)
            .copied()
            .ok_or_else(|| WanError::config(format!("unknown closed-form field '{name}'")))
    }

    pub fn names() -> impl Iterator<Item = &'static str> {
        catalog::CATALOG.iter().map(|c| c.name)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    pub fn hyper(&self, x: &[HyperDual]) -> HyperDual {
        (self.hd)(x)
    }
}

impl fmt::Debug for ClosedForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ClosedForm({})", self.name)
    }
}

impl PartialEq for ClosedForm {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

/// A field evaluated on whole batches, e.g. data that depends on a network.
pub trait BatchField: Send + Sync {
    fn label(&self) -> &str;
    /// Evaluates row-major `points` of width `dim`.
    fn eval_batch(&self, points: &[f64], dim: usize) -> Result<Vec<f64>>;
}

#[derive(Clone)]
pub enum ScalarField {
    Const(f64),
    Closed(ClosedForm),
    Custom(Arc<dyn BatchField>),
    /// `scale · inner + offset`.
    Affine {
        scale: f64,
        offset: f64,
        inner: Box<ScalarField>,
    },
    /// A time-dependent field frozen at time `t`, evaluated on spatial points.
    AtTime { inner: Box<ScalarField>, t: f64 },
    /// A spatial field evaluated on `(x, t)` points by ignoring `t`.
    Spatial(Box<ScalarField>),
}

impl ScalarField {
    pub fn named(name: &str) -> Result<Self> {
        ClosedForm::lookup(name).map(Self::Closed)
    }

    pub fn zero() -> Self {
        Self::Const(0.0)
    }

    pub fn affine(self, scale: f64, offset: f64) -> Self {
        if let Self::Const(v) = self {
            return Self::Const(scale * v + offset);
        }
        Self::Affine {
            scale,
            offset,
            inner: Box::new(self),
        }
    }

    /// Lifts a spatial field to `(x, t)` points.
    pub fn spatial(self) -> Self {
        match self {
            Self::Const(_) => self,
            other => Self::Spatial(Box::new(other)),
        }
    }

    pub fn at_time(self, t: f64) -> Self {
        match self {
            Self::Const(_) => self,
            Self::Spatial(inner) => *inner,
            Self::Closed(c) if !c.time_dependent => self,
            other => Self::AtTime {
                inner: Box::new(other),
                t,
            },
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Const(v) if *v == 0.0)
    }

    /// Checks that the field can be evaluated on points of length `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Self::Const(v) if !v.is_finite() => Err(WanError::config("constant field is not finite")),
            Self::Const(_) | Self::Custom(_) => Ok(()),
            Self::Closed(c) if c.min_dim > dim => Err(WanError::config(format!(
                "field '{}' needs points of length ≥ {}, got {dim}",
                c.name, c.min_dim
            ))),
            Self::Closed(_) => Ok(()),
            Self::Affine { inner, .. } => inner.validate(dim),
            Self::AtTime { inner, .. } => inner.validate(dim + 1),
            Self::Spatial(_) if dim < 2 => Err(WanError::config("spatial lift needs a time coordinate")),
            Self::Spatial(inner) => inner.validate(dim - 1),
        }
    }

    /// Checks that a field used on `(x, t)` points reads `t` only through a
    /// time-aware definition, so spatial closed forms are not fed the time.
    pub fn validate_space_time(&self) -> Result<()> {
        match self {
            Self::Closed(c) if !c.time_dependent => Err(WanError::config(format!(
                "spatial field '{}' used in a time-dependent problem must be lifted with `spatial`",
                c.name
            ))),
            Self::Affine { inner, .. } => inner.validate_space_time(),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            Self::Const(v) => Ok(*v),
            Self::Closed(c) => Ok(c.value(x)),
            Self::Custom(f) => Ok(f.eval_batch(x, x.len())?[0]),
            Self::Affine { scale, offset, inner } => Ok(scale * inner.eval(x)? + offset),
            Self::AtTime { inner, t } => {
                let mut y = x.to_vec();
                y.push(*t);
                inner.eval(&y)
            }
            Self::Spatial(inner) => inner.eval(&x[..x.len() - 1]),
        }
    }

    /// Evaluates every row of `points` (width `dim`).
    pub fn eval_batch(&self, points: &[f64], dim: usize) -> Result<Vec<f64>> {
        match self {
            Self::Const(v) => Ok(vec![*v; points.len() / dim]),
            Self::Closed(c) => Ok(points.chunks_exact(dim).map(|p| c.value(p)).collect()),
            Self::Custom(f) => f.eval_batch(points, dim),
            Self::Affine { scale, offset, inner } => {
                let mut v = inner.eval_batch(points, dim)?;
                v.iter_mut().for_each(|e| *e = scale * *e + offset);
                Ok(v)
            }
            Self::AtTime { inner, t } => {
                let mut ext = Vec::with_capacity(points.len() / dim * (dim + 1));
                for p in points.chunks_exact(dim) {
                    ext.extend_from_slice(p);
                    ext.push(*t);
                }
                inner.eval_batch(&ext, dim + 1)
            }
            Self::Spatial(inner) => {
                let mut stripped = Vec::with_capacity(points.len() / dim * (dim - 1));
                for p in points.chunks_exact(dim) {
                    stripped.extend_from_slice(&p[..dim - 1]);
                }
                inner.eval_batch(&stripped, dim - 1)
            }
        }
    }

    /// Value with exact first and second derivatives along coordinates `i`
    /// and `j` (`None` seeds nothing). Unavailable for custom fields.
    pub fn jet(&self, x: &[f64], i: Option<usize>, j: Option<usize>) -> Option<HyperDual> {
        let seeded: Vec<HyperDual> = x
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                HyperDual::new(
                    v,
                    if Some(k) == i { 1.0 } else { 0.0 },
                    if Some(k) == j { 1.0 } else { 0.0 },
                    0.0,
                )
            })
            .collect();
        self.hyper(&seeded)
    }

    fn hyper(&self, x: &[HyperDual]) -> Option<HyperDual> {
        match self {
            Self::Const(v) => Some(HyperDual::cst(*v)),
            Self::Closed(c) => Some(c.hyper(x)),
            Self::Custom(_) => None,
            Self::Affine { scale, offset, inner } => inner.hyper(x).map(|h| h * *scale + *offset),
            Self::AtTime { inner, t } => {
                let mut y = x.to_vec();
                y.push(HyperDual::cst(*t));
                inner.hyper(&y)
            }
            Self::Spatial(inner) => inner.hyper(&x[..x.len() - 1]),
        }
    }

    pub fn partial(&self, x: &[f64], i: usize) -> Option<f64> {
        self.jet(x, Some(i), None).map(|h| h.a)
    }

    pub fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        (0..x.len()).map(|i| self.partial(x, i)).collect()
    }

    pub fn second(&self, x: &[f64], i: usize, j: usize) -> Option<f64> {
        self.jet(x, Some(i), Some(j)).map(|h| h.ab)
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Const(v) => write!(f, "{v}"),
            Self::Closed(c) => write!(f, "{}", c.name),
            Self::Custom(c) => write!(f, "custom({})", c.label()),
            Self::Affine { scale, offset, inner } => write!(f, "{scale}·{inner:?} + {offset}"),
            Self::AtTime { inner, t } => write!(f, "{inner:?}@t={t}"),
            Self::Spatial(inner) => write!(f, "spatial({inner:?})"),
        }
    }
}

impl From<f64> for ScalarField {
    fn from(v: f64) -> Self {
        Self::Const(v)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FieldRepr {
    Const(f64),
    Named(String),
    Affine {
        scale: f64,
        offset: f64,
        field: Box<FieldRepr>,
    },
    AtTime {
        t: f64,
        field: Box<FieldRepr>,
    },
    Spatial {
        spatial: Box<FieldRepr>,
    },
}

impl FieldRepr {
    fn from_field(f: &ScalarField) -> std::result::Result<Self, String> {
        Ok(match f {
            ScalarField::Const(v) => Self::Const(*v),
            ScalarField::Closed(c) => Self::Named(c.name.to_string()),
            ScalarField::Custom(c) => return Err(format!("custom field '{}' cannot be serialized", c.label())),
            ScalarField::Affine { scale, offset, inner } => Self::Affine {
                scale: *scale,
                offset: *offset,
                field: Box::new(Self::from_field(inner)?),
            },
            ScalarField::AtTime { inner, t } => Self::AtTime {
                t: *t,
                field: Box::new(Self::from_field(inner)?),
            },
            ScalarField::Spatial(inner) => Self::Spatial {
                spatial: Box::new(Self::from_field(inner)?),
            },
        })
    }

    fn into_field(self) -> Result<ScalarField> {
        Ok(match self {
            Self::Const(v) => ScalarField::Const(v),
            Self::Named(n) => ScalarField::named(&n)?,
            Self::Affine { scale, offset, field } => field.into_field()?.affine(scale, offset),
            Self::AtTime { t, field } => ScalarField::AtTime {
                inner: Box::new(field.into_field()?),
                t,
            },
            Self::Spatial { spatial } => spatial.into_field()?.spatial(),
        })
    }
}

impl Serialize for ScalarField {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FieldRepr::from_field(self).map_err(serde::ser::Error::custom)?.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ScalarField {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        FieldRepr::deserialize(d)?.into_field().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_and_values() {
        let f = ScalarField::named("sum_sin_half_pi").unwrap();
        assert!((f.eval(&[1.0, 1.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(ScalarField::named("nope").is_err());
        let w = ScalarField::named("eq_weak_exact").unwrap();
        for y in [0.0, 0.3, 1.0] {
            assert_eq!(w.eval(&[0.25, y]).unwrap(), 0.0625);
        }
    }

    #[test]
    fn names_are_unique() {
        let mut names: Vec<_> = ClosedForm::names().collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn jets_match_finite_differences() {
        let x = [0.3, -0.4, 0.2];
        for name in ClosedForm::names() {
            let f = ScalarField::named(name).unwrap();
            for i in 0..3 {
                let h = 1e-5;
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let fd = (f.eval(&xp).unwrap() - f.eval(&xm).unwrap()) / (2.0 * h);
                assert!((fd - f.partial(&x, i).unwrap()).abs() < 1e-8, "{name} ∂{i}");
                let fd2 = (f.eval(&xp).unwrap() - 2.0 * f.eval(&x).unwrap() + f.eval(&xm).unwrap()) / (h * h);
                assert!((fd2 - f.second(&x, i, i).unwrap()).abs() < 1e-4, "{name} ∂{i}{i}");
            }
        }
    }

    #[test]
    fn affine_and_time_slices() {
        let u = ScalarField::named("exp_parabolic_st_exact").unwrap();
        let slice = u.clone().at_time(0.5).affine(2.0, 1.0);
        let x = [0.4, 0.1];
        let direct = u.eval(&[0.4, 0.1, 0.5]).unwrap();
        assert_eq!(slice.eval(&x).unwrap(), 2.0 * direct + 1.0);
        assert_eq!(slice.eval_batch(&[0.4, 0.1, 0.4, 0.1], 2).unwrap(), vec![2.0 * direct + 1.0; 2]);
        assert_eq!(slice.partial(&x, 0).unwrap(), 2.0 * u.partial(&[0.4, 0.1, 0.5], 0).unwrap());
        slice.validate(2).unwrap();
    }

    #[test]
    fn spatial_lift_ignores_time() {
        let a = ScalarField::named("one_plus_norm_sq").unwrap();
        let lifted = a.clone().spatial();
        assert_eq!(lifted.eval(&[1.0, 2.0, 9.0]).unwrap(), 6.0);
        assert_eq!(lifted.eval_batch(&[1.0, 2.0, 9.0], 3).unwrap(), vec![6.0]);
        assert_eq!(lifted.gradient(&[1.0, 2.0, 9.0]).unwrap(), vec![2.0, 4.0, 0.0]);
        assert!(a.validate_space_time().is_err());
        lifted.validate_space_time().unwrap();
        assert_eq!(lifted.at_time(3.0).eval(&[1.0, 2.0]).unwrap(), 6.0);
        let json = serde_json::to_string(&a.spatial()).unwrap();
        assert!(serde_json::from_str::<ScalarField>(&json).unwrap().validate_space_time().is_ok());
    }

    #[test]
    fn serde_round_trip() {
        let f = ScalarField::named("heat_exact").unwrap().at_time(0.1).affine(0.5, 0.0);
        let json = serde_json::to_string(&f).unwrap();
        let back: ScalarField = serde_json::from_str(&json).unwrap();
        assert_eq!(format!("{f:?}"), format!("{back:?}"));
        let c: ScalarField = serde_json::from_str("-2.0").unwrap();
        assert!(matches!(c, ScalarField::Const(v) if v == -2.0));
        assert!(serde_json::from_str::<ScalarField>("\"missing\"").is_err());
    }

    #[test]
    fn dimension_validation() {
        let f = ScalarField::named("nonl_cube_exact").unwrap();
        assert!(f.validate(1).is_err());
        f.validate(2).unwrap();
    }
}
