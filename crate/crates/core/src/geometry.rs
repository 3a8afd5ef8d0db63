//! Domains, collocation samplers and the boundary-vanishing weight `w`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WanError};
use crate::rng::{stream_key, stream_rng, Stream};

/// Region on which a problem is posed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    /// The open box `(lo, hi)`.
    Hyperrectangle { lo: Vec<f64>, hi: Vec<f64> },
    /// `(outer_lo, outer_hi) \ [cut_lo, outer_hi)`: a box with the box at its
    /// upper corner removed, e.g. `(-1,1)^d \ [0,1)^d`.
    BoxMinusBox {
        outer_lo: Vec<f64>,
        outer_hi: Vec<f64>,
        cut_lo: Vec<f64>,
    },
    /// `spatial × [0, t_end]`; points carry the time as their last coordinate.
    TimeProduct { spatial: Box<Domain>, t_end: f64 },
}

impl Domain {
    pub fn unit_cube(d: usize) -> Self {
        Self::Hyperrectangle {
            lo: vec![0.0; d],
            hi: vec![1.0; d],
        }
    }

    pub fn cube(d: usize, lo: f64, hi: f64) -> Self {
        Self::Hyperrectangle {
            lo: vec![lo; d],
            hi: vec![hi; d],
        }
    }

    /// `(-1,1)^d \ [0,1)^d`.
    pub fn l_shape(d: usize) -> Self {
        Self::BoxMinusBox {
            outer_lo: vec![-1.0; d],
            outer_hi: vec![1.0; d],
            cut_lo: vec![0.0; d],
        }
    }

    pub fn with_time(self, t_end: f64) -> Self {
        Self::TimeProduct {
            spatial: Box::new(self),
            t_end,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Hyperrectangle { lo, hi } => check_box(lo, hi),
            Self::BoxMinusBox {
                outer_lo,
                outer_hi,
                cut_lo,
            } => {
                check_box(outer_lo, outer_hi)?;
                if cut_lo.len() != outer_lo.len() {
                    return Err(WanError::config("cut corner has the wrong dimension"));
                }
                if cut_lo.iter().zip(outer_lo).zip(outer_hi).any(|((c, l), h)| c <= l || c >= h) {
                    return Err(WanError::config("cut corner must lie strictly inside the outer box"));
                }
                Ok(())
            }
            Self::TimeProduct { spatial, t_end } => {
                if matches!(**spatial, Self::TimeProduct { .. }) {
                    return Err(WanError::config("nested time products are not supported"));
                }
                if !(*t_end > 0.0) {
                    return Err(WanError::config("time horizon must be positive"));
                }
                spatial.validate()
            }
        }
    }

    /// Dimension of the spatial region.
    pub fn spatial_dim(&self) -> usize {
        match self {
            Self::Hyperrectangle { lo, .. } => lo.len(),
            Self::BoxMinusBox { outer_lo, .. } => outer_lo.len(),
            Self::TimeProduct { spatial, .. } => spatial.spatial_dim(),
        }
    }

    /// Length of a point: the spatial dimension, plus one for time products.
    pub fn input_dim(&self) -> usize {
        self.spatial_dim() + usize::from(self.is_time_dependent())
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self, Self::TimeProduct { .. })
    }

    pub fn t_end(&self) -> Option<f64> {
        match self {
            Self::TimeProduct { t_end, .. } => Some(*t_end),
            _ => None,
        }
    }

    /// The spatial factor (the domain itself when static).
    pub fn spatial(&self) -> &Domain {
        match self {
            Self::TimeProduct { spatial, .. } => spatial,
            other => other,
        }
    }

    /// Lebesgue measure of the spatial region.
    pub fn volume(&self) -> f64 {
        match self {
            Self::Hyperrectangle { lo, hi } => lo.iter().zip(hi).map(|(l, h)| h - l).product(),
            Self::BoxMinusBox {
                outer_lo,
                outer_hi,
                cut_lo,
            } => {
                let outer: f64 = outer_lo.iter().zip(outer_hi).map(|(l, h)| h - l).product();
                let cut: f64 = cut_lo.iter().zip(outer_hi).map(|(l, h)| h - l).product();
                outer - cut
            }
            Self::TimeProduct { spatial, .. } => spatial.volume(),
        }
    }

    /// Measure of the full space-time region (`|Ω|·T`, or `|Ω|` when static).
    pub fn space_time_volume(&self) -> f64 {
        self.volume() * self.t_end().unwrap_or(1.0)
    }

    /// Bounding box of the spatial region.
    pub fn bounds(&self) -> (&[f64], &[f64]) {
        match self {
            Self::Hyperrectangle { lo, hi } => (lo, hi),
            Self::BoxMinusBox { outer_lo, outer_hi, .. } => (outer_lo, outer_hi),
            Self::TimeProduct { spatial, .. } => spatial.bounds(),
        }
    }

    /// Number of boundary faces used for stratified boundary sampling.
    ///
    /// For a box minus its corner box, faces are grouped by outward normal:
    /// the group with normal `+eᵢ` is the outer face `xᵢ = hiᵢ` with the
    /// removed patch replaced by the cut's face `xᵢ = cut_loᵢ`.
    pub fn face_count(&self) -> usize {
        2 * self.spatial_dim()
    }

    /// Whether the spatial part of `x` lies strictly inside the region.
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Self::Hyperrectangle { lo, hi } => (0..lo.len()).all(|i| x[i] > lo[i] && x[i] < hi[i]),
            Self::BoxMinusBox {
                outer_lo,
                outer_hi,
                cut_lo,
            } => {
                let in_outer = (0..outer_lo.len()).all(|i| x[i] > outer_lo[i] && x[i] < outer_hi[i]);
                in_outer && !in_cut(x, cut_lo, outer_hi)
            }
            Self::TimeProduct { spatial, t_end } => {
                let t = x[spatial.spatial_dim()];
                spatial.contains(x) && (0.0..=*t_end).contains(&t)
            }
        }
    }

    /// Whether the spatial part of `x` lies in the closure of the region.
    pub fn contains_closed(&self, x: &[f64]) -> bool {
        match self {
            Self::TimeProduct { spatial, .. } => spatial.contains_closed(x),
            Self::Hyperrectangle { lo, hi } => (0..lo.len()).all(|i| x[i] >= lo[i] && x[i] <= hi[i]),
            Self::BoxMinusBox {
                outer_lo,
                outer_hi,
                cut_lo,
            } => {
                let in_outer = (0..outer_lo.len()).all(|i| x[i] >= outer_lo[i] && x[i] <= outer_hi[i]);
                in_outer && !(0..cut_lo.len()).all(|i| x[i] > cut_lo[i])
            }
        }
    }

    /// Signed distance to the spatial boundary: positive inside, zero on it.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match self {
            Self::Hyperrectangle { lo, hi } => box_sd(x, lo, hi),
            Self::BoxMinusBox {
                outer_lo,
                outer_hi,
                cut_lo,
            } => {
                let outer = box_sd(x, outer_lo, outer_hi);
                if in_cut(x, cut_lo, outer_hi) {
                    let depth = (0..cut_lo.len()).map(|i| x[i] - cut_lo[i]).fold(f64::INFINITY, f64::min);
                    return -depth;
                }
                outer.min(dist_to_box(x, cut_lo, outer_hi))
            }
            Self::TimeProduct { spatial, .. } => spatial.signed_distance(x),
        }
    }

    /// Gradient of [`Domain::signed_distance`] with respect to the full point
    /// (the time component, if any, is zero).
    pub fn signed_distance_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.input_dim()];
        let spatial = self.spatial();
        match spatial {
            Self::Hyperrectangle { lo, hi } => box_sd_grad(x, lo, hi, &mut g),
            Self::BoxMinusBox {
                outer_lo,
                outer_hi,
                cut_lo,
            } => {
                let outer = box_sd(x, outer_lo, outer_hi);
                let cut = dist_to_box(x, cut_lo, outer_hi);
                if in_cut(x, cut_lo, outer_hi) || outer <= cut {
                    box_sd_grad(x, outer_lo, outer_hi, &mut g);
                    if in_cut(x, cut_lo, outer_hi) {
                        let (i, _) = (0..cut_lo.len())
                            .map(|i| (i, x[i] - cut_lo[i]))
                            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                        g.iter_mut().for_each(|v| *v = 0.0);
                        g[i] = -1.0;
                    }
                } else if cut > 0.0 {
                    for i in 0..cut_lo.len() {
                        let proj = x[i].clamp(cut_lo[i], outer_hi[i]);
                        g[i] = (x[i] - proj) / cut;
                    }
                } else {
                    let (i, _) = (0..cut_lo.len())
                        .map(|i| (i, (x[i] - cut_lo[i]).abs()))
                        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                    g[i] = -1.0;
                }
            }
            Self::TimeProduct { .. } => unreachable!("spatial() never returns a time product"),
        }
        g
    }

    /// Uniform points strictly inside the region, row-major `n × input_dim`.
    pub fn sample_interior<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let d = self.input_dim();
        let mut out = Vec::with_capacity(n * d);
        let mut x = vec![0.0; d];
        for _ in 0..n {
            self.draw_interior(rng, &mut x);
            out.extend_from_slice(&x);
        }
        out
    }

    fn draw_interior<R: Rng + ?Sized>(&self, rng: &mut R, x: &mut [f64]) {
        match self {
            Self::Hyperrectangle { lo, hi } => {
                for i in 0..lo.len() {
                    x[i] = open_uniform(rng, lo[i], hi[i]);
                }
            }
            Self::BoxMinusBox {
                outer_lo,
                outer_hi,
                cut_lo,
            } => loop {
                for i in 0..outer_lo.len() {
                    x[i] = open_uniform(rng, outer_lo[i], outer_hi[i]);
                }
                if !in_cut(x, cut_lo, outer_hi) {
                    break;
                }
            },
            Self::TimeProduct { spatial, t_end } => {
                spatial.draw_interior(rng, x);
                x[spatial.spatial_dim()] = rng.gen_range(0.0..*t_end);
            }
        }
    }

    /// Stratified uniform boundary points with unit outward normals.
    ///
    /// `n` must be divisible by [`Domain::face_count`]; points are emitted face
    /// by face (axis 0 low, axis 0 high, axis 1 low, ...). For time products the
    /// points cover `∂Ω × [0, T]` and the normals are spatial.
    pub fn sample_boundary<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        let faces = self.face_count();
        if n % faces != 0 {
            return Err(WanError::config(format!(
                "boundary sample count {n} is not divisible by the face count {faces}"
            )));
        }
        let per_face = n / faces;
        let d = self.input_dim();
        let ds = self.spatial_dim();
        let (lo, hi) = self.bounds();
        let mut points = Vec::with_capacity(n * d);
        let mut normals = Vec::with_capacity(n * ds);
        let mut x = vec![0.0; d];
        for face in 0..faces {
            let axis = face / 2;
            let upper = face % 2 == 1;
            for _ in 0..per_face {
                for i in 0..ds {
                    x[i] = rng.gen_range(lo[i]..hi[i]);
                }
                x[axis] = if upper { hi[axis] } else { lo[axis] };
                if upper {
                    if let Self::BoxMinusBox { cut_lo, outer_hi, .. } = self.spatial() {
                        let on_patch = (0..ds).all(|j| j == axis || (x[j] >= cut_lo[j] && x[j] < outer_hi[j]));
                        if on_patch {
                            x[axis] = cut_lo[axis];
                        }
                    }
                }
                if let Some(t_end) = self.t_end() {
                    x[ds] = rng.gen_range(0.0..=t_end);
                }
                points.extend_from_slice(&x);
                normals.extend((0..ds).map(|j| {
                    if j != axis {
                        0.0
                    } else if upper {
                        1.0
                    } else {
                        -1.0
                    }
                }));
            }
        }
        Ok((points, normals))
    }
}

fn check_box(lo: &[f64], hi: &[f64]) -> Result<()> {
    if lo.is_empty() || lo.len() != hi.len() {
        return Err(WanError::config("box corners must be non-empty and of equal length"));
    }
    if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
        return Err(WanError::config("box requires lo < hi componentwise"));
    }
    Ok(())
}

fn open_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    loop {
        let v = rng.gen_range(lo..hi);
        if v > lo {
            return v;
        }
    }
}

fn in_cut(x: &[f64], cut_lo: &[f64], hi: &[f64]) -> bool {
    (0..cut_lo.len()).all(|i| x[i] >= cut_lo[i] && x[i] < hi[i])
}

fn box_sd(x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut inside = f64::INFINITY;
    let mut outside = 0.0f64;
    let mut is_inside = true;
    for i in 0..lo.len() {
        let a = x[i] - lo[i];
        let b = hi[i] - x[i];
        inside = inside.min(a.min(b));
        let e = (-a).max(-b).max(0.0);
        if e > 0.0 {
            is_inside = false;
        }
        outside += e * e;
    }
    if is_inside {
        inside
    } else {
        -outside.sqrt()
    }
}

fn box_sd_grad(x: &[f64], lo: &[f64], hi: &[f64], g: &mut [f64]) {
    let mut best = f64::INFINITY;
    let mut idx = 0;
    let mut sign = 1.0;
    for i in 0..lo.len() {
        if x[i] - lo[i] < best {
            best = x[i] - lo[i];
            idx = i;
            sign = 1.0;
        }
        if hi[i] - x[i] < best {
            best = hi[i] - x[i];
            idx = i;
            sign = -1.0;
        }
    }
    g[idx] = sign;
}

fn dist_to_box(x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    (0..lo.len())
        .map(|i| {
            let e = (lo[i] - x[i]).max(x[i] - hi[i]).max(0.0);
            e * e
        })
        .sum::<f64>()
        .sqrt()
}

/// Collocation points for one outer training iteration.
#[derive(Debug, Clone)]
pub struct CollocationBatch {
    /// Row-major interior points, `n_interior × input_dim`.
    pub interior: Vec<f64>,
    /// Row-major boundary points, `n_boundary × input_dim`.
    pub boundary: Vec<f64>,
    /// Unit outward normals, `n_boundary × spatial_dim`.
    pub normals: Vec<f64>,
    /// Initial-time points `(x, 0)`, `n_initial × input_dim`; empty when static.
    pub initial: Vec<f64>,
    pub input_dim: usize,
    pub spatial_dim: usize,
    /// Spatial measure `|Ω|`.
    pub volume: f64,
    pub t_end: Option<f64>,
    /// Key of the interior stream, recorded for provenance.
    pub seed_digest: u64,
}

impl CollocationBatch {
    /// Samples every point set of iteration `index` from independent streams.
    pub fn sample(domain: &Domain, n_interior: usize, n_boundary: usize, n_initial: usize, seed: u64, index: u64) -> Result<Self> {
        domain.validate()?;
        if n_interior == 0 {
            return Err(WanError::config("at least one interior point is required"));
        }
        let interior = domain.sample_interior(n_interior, &mut stream_rng(seed, Stream::Interior, index));
        let (boundary, normals) = domain.sample_boundary(n_boundary, &mut stream_rng(seed, Stream::Boundary, index))?;
        let initial = if domain.is_time_dependent() {
            let ds = domain.spatial_dim();
            let spatial = domain.spatial().sample_interior(n_initial, &mut stream_rng(seed, Stream::Initial, index));
            let mut out = Vec::with_capacity(n_initial * (ds + 1));
            for p in spatial.chunks(ds) {
                out.extend_from_slice(p);
                out.push(0.0);
            }
            out
        } else {
            Vec::new()
        };
        Ok(Self {
            interior,
            boundary,
            normals,
            initial,
            input_dim: domain.input_dim(),
            spatial_dim: domain.spatial_dim(),
            volume: domain.volume(),
            t_end: domain.t_end(),
            seed_digest: stream_key(seed, Stream::Interior, index),
        })
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len() / self.input_dim
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.len() / self.input_dim
    }

    pub fn n_initial(&self) -> usize {
        self.initial.len() / self.input_dim
    }

    pub fn interior_point(&self, p: usize) -> &[f64] {
        &self.interior[p * self.input_dim..(p + 1) * self.input_dim]
    }

    pub fn boundary_point(&self, p: usize) -> &[f64] {
        &self.boundary[p * self.input_dim..(p + 1) * self.input_dim]
    }

    pub fn normal(&self, p: usize) -> &[f64] {
        &self.normals[p * self.spatial_dim..(p + 1) * self.spatial_dim]
    }
}
