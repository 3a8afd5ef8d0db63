//! Batched network evaluation with forward input tangents and a hand-written
//! reverse pass through both the value and the tangent propagation.
//!
//! Each point owns `1 + d` consecutive rows of every layer matrix: the value
//! row followed by one tangent row per input coordinate. An affine layer then
//! acts on all rows with a single GEMM (the bias only touches value rows), and
//! an activation maps `(z, t) -> (σ(z), σ'(z)·t)` row-wise.

use crate::error::{Result, WanError};
use crate::network::{Activation, MlpSpec, ParamVector};

/// `c = a · b + beta·c` for row-major `a: m×k`, `b: k×n` given as strided views.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: every view stays inside its slice for the given strides; callers
    // pass contiguous row-major buffers or their transposes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Target number of layer rows per chunk. Points are processed in chunks so
/// each layer buffer stays cache-resident; the reverse pass recomputes the
/// chunk's forward pass instead of storing every layer for the whole batch.
const CHUNK_ROWS: usize = 2048;

fn chunk_len(stride: usize) -> usize {
    (CHUNK_ROWS / stride).max(1)
}

/// Outputs of a batched evaluation, plus the pre-activations needed to
/// differentiate them with respect to the parameters.
#[derive(Debug, Clone)]
pub struct BatchEval {
    n_points: usize,
    input_dim: usize,
    values: Vec<f64>,
    grads: Vec<f64>,
    cache: Option<Cache>,
}

/// What the reverse pass needs: the inputs, and per-chunk layer caches when
/// they fit in [`CACHE_BUDGET`] (otherwise each chunk is recomputed).
#[derive(Debug, Clone)]
struct Cache {
    points: Vec<f64>,
    chunks: Vec<Vec<LayerCache>>,
}

/// Bytes of layer caches kept across a forward/backward pair.
const CACHE_BUDGET: usize = 256 << 20;

/// Pre-activations of one hidden layer (all rows) and the activation's value
/// and first two derivatives at the value rows.
#[derive(Debug, Clone)]
struct LayerCache {
    pre: Vec<f64>,
    s: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl LayerCache {
    fn new(pre: Vec<f64>, act: Activation, width: usize, stride: usize) -> Self {
        let n = pre.len() / (width * stride);
        let mut s = Vec::with_capacity(n * width);
        let mut s1 = Vec::with_capacity(n * width);
        let mut s2 = Vec::with_capacity(n * width);
        for q in 0..n {
            for &z in &pre[q * stride * width..(q * stride + 1) * width] {
                let (a, b, c) = act.eval(z);
                s.push(a);
                s1.push(b);
                s2.push(c);
            }
        }
        Self { pre, s, s1, s2 }
    }

    /// The layer's output `(σ(z), σ'(z)·t)` for all rows.
    fn output(&self, width: usize, stride: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.pre.len()];
        let n = self.s.len() / width;
        for q in 0..n {
            let vrow = q * stride * width;
            let sv = &self.s[q * width..(q + 1) * width];
            let s1 = &self.s1[q * width..(q + 1) * width];
            out[vrow..vrow + width].copy_from_slice(sv);
            for k in 1..stride {
                let r = vrow + k * width;
                for ((o, &t), &d) in out[r..r + width].iter_mut().zip(&self.pre[r..r + width]).zip(s1) {
                    *o = d * t;
                }
            }
        }
        out
    }
}

impl BatchEval {
    /// Wraps externally computed values and input gradients. The result
    /// carries no cache and cannot be differentiated in the parameters.
    pub fn from_parts(input_dim: usize, values: Vec<f64>, grads: Vec<f64>) -> Result<Self> {
        if input_dim == 0 || grads.len() != values.len() * input_dim {
            return Err(WanError::DimensionMismatch {
                context: "batch gradients",
                expected: values.len() * input_dim,
                got: grads.len(),
            });
        }
        Ok(Self {
            n_points: values.len(),
            input_dim,
            values,
            grads,
            cache: None,
        })
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        self.n_points == 0
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Input gradients, row-major `n × d`.
    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn value(&self, p: usize) -> f64 {
        self.values[p]
    }

    pub fn grad(&self, p: usize) -> &[f64] {
        &self.grads[p * self.input_dim..(p + 1) * self.input_dim]
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    /// Gradient of `Σ_p bar_v[p]·u(x_p) + Σ_{p,i} bar_g[p,i]·∂ᵢu(x_p)` with
    /// respect to the parameters.
    pub fn backward(&self, spec: &MlpSpec, params: &ParamVector, bar_v: &[f64], bar_g: &[f64]) -> Result<Vec<f64>> {
        let cache = self.cache.as_ref().ok_or_else(|| {
            WanError::config("network evaluation was run without a cache; cannot differentiate")
        })?;
        let n = self.n_points;
        let d = self.input_dim;
        if bar_v.len() != n || bar_g.len() != n * d {
            return Err(WanError::DimensionMismatch {
                context: "backward adjoints",
                expected: n * (1 + d),
                got: bar_v.len() + bar_g.len(),
            });
        }
        let p = params.as_slice();
        let mut grad = vec![0.0; spec.param_count()];
        let chunk = chunk_len(1 + d);
        let mut lo = 0;
        while lo < n {
            let hi = (lo + chunk).min(n);
            let x0 = input_rows(&cache.points[lo * d..hi * d], d);
            let mut fresh = Vec::new();
            let (caches, x_last) = match cache.chunks.get(lo / chunk) {
                Some(kept) => {
                    let x_last = match (kept.last(), spec.hidden_widths.last()) {
                        (Some(lc), Some(&w)) => lc.output(w, 1 + d),
                        _ => x0.clone(),
                    };
                    (kept, x_last)
                }
                None => {
                    let x_last = hidden_pass(spec, p, x0.clone(), hi - lo, Some(&mut fresh))?;
                    (&fresh, x_last)
                }
            };
            backward_chunk(
                spec,
                p,
                &x0,
                caches,
                &x_last,
                &bar_v[lo..hi],
                &bar_g[lo * d..hi * d],
                &mut grad,
            );
            lo = hi;
        }
        finish(grad)
    }
}

#[allow(clippy::too_many_arguments)]
fn backward_chunk(
    spec: &MlpSpec,
    p: &[f64],
    x0: &[f64],
    caches: &[LayerCache],
    x_last: &[f64],
    bar_v: &[f64],
    bar_g: &[f64],
    grad: &mut [f64],
) {
    let n = bar_v.len();
    let d = spec.input_dim;
    let stride = 1 + d;
    let rows = n * stride;
    let shapes = spec.layer_shapes();
    let offsets = spec.layer_offsets();
    let n_hidden = spec.hidden_widths.len();

    // Output layer.
    let (fin, _) = shapes[n_hidden];
    let off = offsets[n_hidden];
    let mut ybar = vec![0.0; rows];
    for q in 0..n {
        ybar[q * stride] = bar_v[q];
        ybar[q * stride + 1..(q + 1) * stride].copy_from_slice(&bar_g[q * d..(q + 1) * d]);
    }
    {
        let (wg, bg) = grad[off..off + fin + 1].split_at_mut(fin);
        gemm(1, rows, fin, &ybar, 1, 1, x_last, fin as isize, 1, 1.0, wg);
        bg[0] += bar_v.iter().sum::<f64>();
    }
    if n_hidden == 0 {
        return;
    }
    let w_out = &p[off..off + fin];
    let mut xbar = vec![0.0; rows * fin];
    for (r, &yb) in ybar.iter().enumerate() {
        if yb != 0.0 {
            for (xb, &w) in xbar[r * fin..(r + 1) * fin].iter_mut().zip(w_out) {
                *xb = yb * w;
            }
        }
    }

    for l in (0..n_hidden).rev() {
        let (fin, fout) = shapes[l];
        let off = offsets[l];
        let lc = &caches[l];
        let pre = &lc.pre;
        let mut ybar = vec![0.0; rows * fout];
        for q in 0..n {
            let vrow = q * stride * fout;
            for j in 0..fout {
                let s1 = lc.s1[q * fout + j];
                let s2 = lc.s2[q * fout + j];
                let mut zbar = xbar[vrow + j] * s1;
                for k in 1..stride {
                    let idx = vrow + k * fout + j;
                    zbar += xbar[idx] * s2 * pre[idx];
                    ybar[idx] = xbar[idx] * s1;
                }
                ybar[vrow + j] = zbar;
            }
        }
        let x_in = if l == 0 {
            x0.to_vec()
        } else {
            caches[l - 1].output(spec.hidden_widths[l - 1], stride)
        };
        {
            let (wg, bg) = grad[off..off + fin * fout + fout].split_at_mut(fin * fout);
            gemm(fout, rows, fin, &ybar, 1, fout as isize, &x_in, fin as isize, 1, 1.0, wg);
            for q in 0..n {
                let vrow = q * stride * fout;
                for (b, &y) in bg.iter_mut().zip(&ybar[vrow..vrow + fout]) {
                    *b += y;
                }
            }
        }
        if l > 0 {
            let w = &p[off..off + fin * fout];
            let mut next = vec![0.0; rows * fin];
            gemm(rows, fout, fin, &ybar, fout as isize, 1, w, fin as isize, 1, 0.0, &mut next);
            xbar = next;
        }
    }
}

fn finish(grad: Vec<f64>) -> Result<Vec<f64>> {
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(WanError::non_finite(format!("parameter gradient component {i}"), None));
    }
    Ok(grad)
}

fn activate(pre: &[f64], act: Activation, width: usize, stride: usize) -> Vec<f64> {
    let mut out = vec![0.0; pre.len()];
    let n = pre.len() / (width * stride);
    let mut s1 = vec![0.0; width];
    for q in 0..n {
        let vrow = q * stride * width;
        for j in 0..width {
            let (s, d) = act.eval1(pre[vrow + j]);
            out[vrow + j] = s;
            s1[j] = d;
        }
        for k in 1..stride {
            let r = vrow + k * width;
            for ((o, &t), &d) in out[r..r + width].iter_mut().zip(&pre[r..r + width]).zip(&s1) {
                *o = d * t;
            }
        }
    }
    out
}

/// Layer-0 rows for a chunk: each point's coordinates followed by the unit
/// tangent rows.
fn input_rows(points: &[f64], d: usize) -> Vec<f64> {
    let n = points.len() / d;
    let stride = 1 + d;
    let mut x = vec![0.0; n * stride * d];
    for q in 0..n {
        let base = q * stride * d;
        x[base..base + d].copy_from_slice(&points[q * d..(q + 1) * d]);
        for k in 0..d {
            x[base + (1 + k) * d + k] = 1.0;
        }
    }
    x
}

/// Runs the hidden layers on one chunk and returns the last hidden output.
fn hidden_pass(
    spec: &MlpSpec,
    p: &[f64],
    mut x: Vec<f64>,
    n: usize,
    mut caches: Option<&mut Vec<LayerCache>>,
) -> Result<Vec<f64>> {
    let stride = 1 + spec.input_dim;
    let rows = n * stride;
    let shapes = spec.layer_shapes();
    let offsets = spec.layer_offsets();
    for (l, &act) in spec.activations.iter().enumerate() {
        let (fin, fout) = shapes[l];
        let off = offsets[l];
        let w = &p[off..off + fin * fout];
        let b = &p[off + fin * fout..off + fin * fout + fout];
        let mut y = vec![0.0; rows * fout];
        gemm(rows, fin, fout, &x, fin as isize, 1, w, 1, fin as isize, 0.0, &mut y);
        for q in 0..n {
            let vrow = q * stride * fout;
            for (yv, &bj) in y[vrow..vrow + fout].iter_mut().zip(b) {
                *yv += bj;
            }
        }
        let value_rows_finite = (0..n).all(|q| y[q * stride * fout..(q * stride + 1) * fout].iter().all(|v| v.is_finite()));
        if !value_rows_finite {
            return Err(WanError::non_finite("network forward pass", Some(l)));
        }
        match caches.as_deref_mut() {
            Some(caches) => {
                let lc = LayerCache::new(y, act, fout, stride);
                x = lc.output(fout, stride);
                caches.push(lc);
            }
            None => x = activate(&y, act, fout, stride),
        }
    }
    Ok(x)
}

/// Evaluates the network and its input gradient at `points` (row-major `n × d`).
pub fn forward(spec: &MlpSpec, params: &ParamVector, points: &[f64], keep_cache: bool) -> Result<BatchEval> {
    let d = spec.input_dim;
    if params.len() != spec.param_count() {
        return Err(WanError::DimensionMismatch {
            context: "parameter vector",
            expected: spec.param_count(),
            got: params.len(),
        });
    }
    if points.len() % d != 0 {
        return Err(WanError::DimensionMismatch {
            context: "input points",
            expected: d,
            got: points.len() % d,
        });
    }
    let n = points.len() / d;
    let stride = 1 + d;
    let p = params.as_slice();
    let l_out = spec.hidden_widths.len();
    let (fin, _) = spec.layer_shapes()[l_out];
    let off = spec.layer_offsets()[l_out];
    let w = &p[off..off + fin];
    let bias = p[off + fin];

    let mut values = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n * d);
    let width_sum: usize = spec.hidden_widths.iter().sum();
    let cache_bytes = 8 * width_sum * (n * stride + 3 * n);
    let keep_layers = keep_cache && cache_bytes <= CACHE_BUDGET;
    let mut chunks = Vec::new();
    let chunk = chunk_len(stride);
    let mut lo = 0;
    while lo < n {
        let hi = (lo + chunk).min(n);
        let m = hi - lo;
        let x0 = input_rows(&points[lo * d..hi * d], d);
        let x = if keep_layers {
            let mut caches = Vec::with_capacity(spec.hidden_widths.len());
            let x = hidden_pass(spec, p, x0, m, Some(&mut caches))?;
            chunks.push(caches);
            x
        } else {
            hidden_pass(spec, p, x0, m, None)?
        };
        let mut out = vec![0.0; m * stride];
        gemm(m * stride, fin, 1, &x, fin as isize, 1, w, 1, 1, 0.0, &mut out);
        for q in 0..m {
            values.push(out[q * stride] + bias);
            grads.extend_from_slice(&out[q * stride + 1..(q + 1) * stride]);
        }
        lo = hi;
    }
    if values.iter().chain(&grads).any(|v| !v.is_finite()) {
        return Err(WanError::non_finite("network output layer", Some(l_out)));
    }
    Ok(BatchEval {
        n_points: n,
        input_dim: d,
        values,
        grads,
        cache: keep_cache.then(|| Cache {
            points: points.to_vec(),
            chunks,
        }),
    })
}
