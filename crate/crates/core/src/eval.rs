//! Error metrics on a fixed evaluation set, and 2-D slice export.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WanError};
use crate::field::ScalarField;
use crate::geometry::Domain;
use crate::network::Network;
use crate::rng::{stream_key, stream_rng, Stream};

/// Grid nodes per axis of the default evaluation set.
pub const EVAL_RESOLUTION: usize = 100;

/// Extent of input coordinate `axis` (time is `[0, T]`).
fn axis_extent(domain: &Domain, axis: usize) -> (f64, f64) {
    let d = domain.spatial_dim();
    if axis < d {
        let (lo, hi) = domain.bounds();
        (lo[axis], hi[axis])
    } else {
        (0.0, domain.t_end().unwrap_or(1.0))
    }
}

/// Fixed evaluation points: a cell-centred grid over the first two input
/// coordinates, with the remaining coordinates drawn once per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    /// Row-major `len × input_dim`; rows follow `x2` slowest, `x1` fastest.
    pub points: Vec<f64>,
    pub input_dim: usize,
    pub resolution: usize,
    pub seed: u64,
    /// Key of the stream the tail coordinates came from.
    pub stream_key: u64,
    /// Cached exact values, when attached.
    pub exact: Option<Vec<f64>>,
}

/// [`EvalSet::new`] at the default resolution.
pub fn build_eval_set(domain: &Domain, seed: u64) -> Result<EvalSet> {
    EvalSet::new(domain, seed, EVAL_RESOLUTION)
}

impl EvalSet {
    /// Grid nodes whose tail coordinates cannot place them inside the domain
    /// (possible only when there are no tail coordinates) are dropped.
    pub fn new(domain: &Domain, seed: u64, resolution: usize) -> Result<Self> {
        domain.validate()?;
        if resolution == 0 {
            return Err(WanError::config("evaluation resolution must be positive"));
        }
        let dim = domain.input_dim();
        let mut rng = stream_rng(seed, Stream::Eval, 0);
        let mut points = Vec::with_capacity(resolution * resolution * dim);
        let mut x = vec![0.0; dim];
        if dim == 1 {
            let (lo, hi) = axis_extent(domain, 0);
            let n = resolution * resolution;
            for i in 0..n {
                points.push(lo + (i as f64 + 0.5) / n as f64 * (hi - lo));
            }
        } else {
            let extents: Vec<(f64, f64)> = (0..dim).map(|a| axis_extent(domain, a)).collect();
            let node = |k: usize, (lo, hi): (f64, f64)| lo + (k as f64 + 0.5) / resolution as f64 * (hi - lo);
            for j in 0..resolution {
                for i in 0..resolution {
                    x[0] = node(i, extents[0]);
                    x[1] = node(j, extents[1]);
                    if dim == 2 {
                        if domain.contains(&x) {
                            points.extend_from_slice(&x);
                        }
                        continue;
                    }
                    // Rejection on the tail; give up on nodes that never fit.
                    let mut accepted = false;
                    for _ in 0..10_000 {
                        for (a, &(lo, hi)) in extents.iter().enumerate().skip(2) {
                            x[a] = rng.gen_range(lo..hi);
                        }
                        if domain.contains(&x) {
                            accepted = true;
                            break;
                        }
                    }
                    if accepted {
                        points.extend_from_slice(&x);
                    }
                }
            }
        }
        Ok(Self {
            points,
            input_dim: dim,
            resolution,
            seed,
            stream_key: stream_key(seed, Stream::Eval, 0),
            exact: None,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Evaluates and caches `exact` on the set.
    pub fn attach_exact(&mut self, exact: &ScalarField) -> Result<()> {
        self.exact = Some(exact.eval_batch(&self.points, self.input_dim)?);
        Ok(())
    }

    /// Relative error of `u` against the cached exact values.
    pub fn relative_error(&self, u: &Network) -> Result<f64> {
        let exact = self
            .exact
            .as_ref()
            .ok_or_else(|| WanError::config("no exact solution attached to the evaluation set"))?;
        relative_l2(&u.values(&self.points)?, exact)
    }
}

/// `‖a − b‖₂ / ‖b‖₂`.
pub fn relative_l2(values: &[f64], reference: &[f64]) -> Result<f64> {
    if values.len() != reference.len() {
        return Err(WanError::DimensionMismatch {
            context: "relative error",
            expected: reference.len(),
            got: values.len(),
        });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (v, r) in values.iter().zip(reference) {
        num += (v - r) * (v - r);
        den += r * r;
    }
    if den == 0.0 {
        return Err(WanError::DegenerateReference);
    }
    Ok((num / den).sqrt())
}

pub fn relative_l2_error(u: &Network, exact: &ScalarField, set: &EvalSet) -> Result<f64> {
    let reference = match &set.exact {
        Some(e) => e.clone(),
        None => exact.eval_batch(&set.points, set.input_dim)?,
    };
    relative_l2(&u.values(&set.points)?, &reference)
}

/// Which coordinates vary over a slice and their ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    /// Full input vector; entries at the two free axes are ignored.
    pub fixed: Vec<f64>,
    pub axes: (usize, usize),
    /// Nodes per axis, endpoints included.
    pub resolution: usize,
    /// `(lo1, hi1, lo2, hi2)`; defaults to the domain's extent.
    pub extent: Option<[f64; 4]>,
}

impl SliceSpec {
    /// The `x1`–`x2` plane through the origin of the remaining coordinates
    /// (time set to its horizon).
    pub fn default_for(domain: &Domain, resolution: usize) -> Self {
        let mut fixed = vec![0.0; domain.input_dim()];
        if let Some(t) = domain.t_end() {
            fixed[domain.spatial_dim()] = t;
        }
        Self {
            fixed,
            axes: (0, 1),
            resolution,
            extent: None,
        }
    }
}

/// Values on a regular 2-D lattice, row-major with the first axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub nx: usize,
    pub ny: usize,
    pub axes: (usize, usize),
    pub extent: [f64; 4],
    pub values: Vec<f64>,
    /// `true` where the node lies in the closed domain.
    pub mask: Vec<bool>,
}

const GRID_MAGIC_RANK: u32 = 2;
const GRID_FLAG_MASK: u32 = 1;

impl Slice {
    pub fn coords(&self, k: usize) -> (f64, f64) {
        let (i, j) = (k % self.nx, k / self.nx);
        let at = |n: usize, idx: usize, lo: f64, hi: f64| if n == 1 { lo } else { lo + (hi - lo) * idx as f64 / (n - 1) as f64 };
        let [a0, a1, b0, b1] = self.extent;
        (at(self.nx, i, a0, a1), at(self.ny, j, b0, b1))
    }

    /// Index of the masked node with the largest value.
    pub fn argmax(&self) -> Option<usize> {
        (0..self.values.len())
            .filter(|&k| self.mask[k] && self.values[k].is_finite())
            .max_by(|&a, &b| self.values[a].total_cmp(&self.values[b]))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x1,x2,value,mask")?;
        for k in 0..self.values.len() {
            let (a, b) = self.coords(k);
            writeln!(w, "{a},{b},{},{}", self.values[k], u8::from(self.mask[k]))?;
        }
        Ok(())
    }

    /// Binary grid: a 16-byte header of little-endian `u32` fields
    /// `(rank = 2, nx, ny, flags)`, then the four `f64` extents, the
    /// `nx·ny` `f64` values and, when `flags & 1`, one mask byte per node.
    pub fn write_grid<W: Write>(&self, mut w: W) -> Result<()> {
        for v in [GRID_MAGIC_RANK, self.nx as u32, self.ny as u32, GRID_FLAG_MASK] {
            w.write_all(&v.to_le_bytes())?;
        }
        for e in self.extent {
            w.write_all(&e.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        let mask: Vec<u8> = self.mask.iter().map(|&m| u8::from(m)).collect();
        w.write_all(&mask)?;
        Ok(())
    }

    pub fn read_grid<R: Read>(mut r: R) -> Result<Self> {
        let mut u32s = [0u32; 4];
        let mut b4 = [0u8; 4];
        for v in &mut u32s {
            r.read_exact(&mut b4)?;
            *v = u32::from_le_bytes(b4);
        }
        let [rank, nx, ny, flags] = u32s;
        if rank != GRID_MAGIC_RANK {
            return Err(WanError::config(format!("grid rank {rank} is not 2")));
        }
        let (nx, ny) = (nx as usize, ny as usize);
        let mut b8 = [0u8; 8];
        let mut read_f64 = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut b8)?;
            Ok(f64::from_le_bytes(b8))
        };
        let mut extent = [0.0; 4];
        for e in &mut extent {
            *e = read_f64(&mut r)?;
        }
        let values = (0..nx * ny).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let mask = if flags & GRID_FLAG_MASK != 0 {
            let mut m = vec![0u8; nx * ny];
            r.read_exact(&mut m)?;
            m.into_iter().map(|b| b != 0).collect()
        } else {
            vec![true; nx * ny]
        };
        Ok(Self {
            nx,
            ny,
            axes: (0, 1),
            extent,
            values,
            mask,
        })
    }
}

fn slice_points(domain: &Domain, spec: &SliceSpec) -> Result<(Vec<f64>, [f64; 4], Vec<bool>)> {
    let dim = domain.input_dim();
    let (a, b) = spec.axes;
    if spec.fixed.len() != dim {
        return Err(WanError::DimensionMismatch {
            context: "slice coordinates",
            expected: dim,
            got: spec.fixed.len(),
        });
    }
    if a >= dim || b >= dim || a == b || spec.resolution == 0 {
        return Err(WanError::config("slice needs two distinct in-range axes and a positive resolution"));
    }
    let extent = spec.extent.unwrap_or_else(|| {
        let (l0, h0) = axis_extent(domain, a);
        let (l1, h1) = axis_extent(domain, b);
        [l0, h0, l1, h1]
    });
    let n = spec.resolution;
    let at = |idx: usize, lo: f64, hi: f64| if n == 1 { lo } else { lo + (hi - lo) * idx as f64 / (n - 1) as f64 };
    let mut points = Vec::with_capacity(n * n * dim);
    let mut mask = Vec::with_capacity(n * n);
    let mut x = spec.fixed.clone();
    let t_range = domain.t_end().map(|t| 0.0..=t);
    for j in 0..n {
        for i in 0..n {
            x[a] = at(i, extent[0], extent[1]);
            x[b] = at(j, extent[2], extent[3]);
            let in_time = t_range.as_ref().map_or(true, |r| r.contains(&x[domain.spatial_dim()]));
            mask.push(in_time && domain.contains_closed(&x));
            points.extend_from_slice(&x);
        }
    }
    Ok((points, extent, mask))
}

/// Network values on a 2-D slice; nodes outside the closed domain are
/// flagged in the mask, not rejected.
pub fn export_slice(u: &Network, domain: &Domain, spec: &SliceSpec) -> Result<Slice> {
    let (points, extent, mask) = slice_points(domain, spec)?;
    Ok(Slice {
        nx: spec.resolution,
        ny: spec.resolution,
        axes: spec.axes,
        extent,
        values: u.values(&points)?,
        mask,
    })
}

/// `|u − u*|` on a slice.
pub fn export_error_slice(u: &Network, exact: &ScalarField, domain: &Domain, spec: &SliceSpec) -> Result<Slice> {
    let (points, extent, mask) = slice_points(domain, spec)?;
    let reference = exact.eval_batch(&points, domain.input_dim())?;
    let values = u.values(&points)?.iter().zip(&reference).map(|(a, b)| (a - b).abs()).collect();
    Ok(Slice {
        nx: spec.resolution,
        ny: spec.resolution,
        axes: spec.axes,
        extent,
        values,
        mask,
    })
}

/// Exact values on a slice.
pub fn field_slice(field: &ScalarField, domain: &Domain, spec: &SliceSpec) -> Result<Slice> {
    let (points, extent, mask) = slice_points(domain, spec)?;
    Ok(Slice {
        nx: spec.resolution,
        ny: spec.resolution,
        axes: spec.axes,
        extent,
        values: field.eval_batch(&points, domain.input_dim())?,
        mask,
    })
}
