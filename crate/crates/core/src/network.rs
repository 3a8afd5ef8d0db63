//! Fully-connected network descriptions, activations and parameter storage.
//!
//! Parameters live in one flat vector. The canonical layer order is: for each
//! layer (hidden layers first, output layer last) the weight matrix in
//! row-major `[out][in]` order, immediately followed by its bias vector.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WanError};
use crate::rng::{stream_rng, Stream};

/// Hidden-layer activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Softplus,
    Elu,
    Sinc,
    /// Identity map. Not part of the default schedules; handy for linear test nets.
    Identity,
}

// Below this magnitude sinc and its derivatives use their Taylor series.
const SINC_SERIES_CUTOFF: f64 = 0.1;

impl Activation {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Self::Tanh),
            "softplus" => Ok(Self::Softplus),
            "elu" => Ok(Self::Elu),
            "sinc" => Ok(Self::Sinc),
            "identity" | "linear" => Ok(Self::Identity),
            other => Err(WanError::config(format!("unknown activation `{other}`"))),
        }
    }

    pub fn value(self, z: f64) -> f64 {
        self.eval(z).0
    }

    pub fn derivative(self, z: f64) -> f64 {
        self.eval(z).1
    }

    pub fn second_derivative(self, z: f64) -> f64 {
        self.eval(z).2
    }

    /// Value and first derivative at `z`.
    #[inline]
    pub fn eval1(self, z: f64) -> (f64, f64) {
        match self {
            Self::Tanh => {
                let s = fast_tanh(z);
                (s, 1.0 - s * s)
            }
            Self::Softplus => (softplus(z), sigmoid(z)),
            Self::Elu => {
                if z >= 0.0 {
                    (z, 1.0)
                } else {
                    let e = z.exp();
                    (e - 1.0, e)
                }
            }
            Self::Sinc => {
                let (v, d1, _) = sinc3(z);
                (v, d1)
            }
            Self::Identity => (z, 1.0),
        }
    }

    /// Value, first and second derivative at `z`.
    #[inline]
    pub fn eval(self, z: f64) -> (f64, f64, f64) {
        match self {
            Self::Tanh => {
                let s = fast_tanh(z);
                let d = 1.0 - s * s;
                (s, d, -2.0 * s * d)
            }
            Self::Softplus => {
                let sig = sigmoid(z);
                (softplus(z), sig, sig * (1.0 - sig))
            }
            Self::Elu => {
                if z >= 0.0 {
                    (z, 1.0, 0.0)
                } else {
                    let e = z.exp();
                    (e - 1.0, e, e)
                }
            }
            Self::Sinc => sinc3(z),
            Self::Identity => (z, 1.0, 0.0),
        }
    }
}

/// `tanh` through a single `exp`; the absolute error stays at a few ulp of 1.
#[inline]
fn fast_tanh(z: f64) -> f64 {
    if z.abs() < 0.25 {
        return z.tanh();
    }
    let t = (-2.0 * z.abs()).exp();
    ((1.0 - t) / (1.0 + t)).copysign(z)
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Tanh => "tanh",
            Self::Softplus => "softplus",
            Self::Elu => "elu",
            Self::Sinc => "sinc",
            Self::Identity => "identity",
        };
        f.write_str(s)
    }
}

/// `log(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn sinc3(z: f64) -> (f64, f64, f64) {
    if z.abs() < SINC_SERIES_CUTOFF {
        let z2 = z * z;
        let v = 1.0 - z2 / 6.0 * (1.0 - z2 / 20.0 * (1.0 - z2 / 42.0 * (1.0 - z2 / 72.0)));
        let d1 = z * (-1.0 / 3.0 + z2 * (1.0 / 30.0 - z2 * (1.0 / 840.0 - z2 * (1.0 / 45360.0 - z2 / 3991680.0))));
        let d2 = -1.0 / 3.0 + z2 * (1.0 / 10.0 - z2 * (1.0 / 168.0 - z2 * (1.0 / 6480.0 - z2 / 443520.0)));
        (v, d1, d2)
    } else {
        let (s, c) = z.sin_cos();
        let v = s / z;
        let d1 = (z * c - s) / (z * z);
        let d2 = ((2.0 - z * z) * s - 2.0 * z * c) / (z * z * z);
        (v, d1, d2)
    }
}

/// Architecture of a scalar-output fully-connected network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_widths,
            activations,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `layers` hidden layers of width `width`, all with the same activation.
    pub fn uniform(input_dim: usize, layers: usize, width: usize, act: Activation) -> Result<Self> {
        Self::new(input_dim, vec![width; layers], vec![act; layers])
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(WanError::config("network input dimension must be positive"));
        }
        if self.hidden_widths.len() != self.activations.len() {
            return Err(WanError::config(format!(
                "activation schedule has {} entries for {} hidden layers",
                self.activations.len(),
                self.hidden_widths.len()
            )));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(WanError::config("hidden layer widths must be positive"));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        1
    }

    /// Input/output widths of every affine layer, output layer included.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut fan_in = self.input_dim;
        for &w in &self.hidden_widths {
            shapes.push((fan_in, w));
            fan_in = w;
        }
        shapes.push((fan_in, 1));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Offset of each layer's weight block in the flat parameter vector.
    pub(crate) fn layer_offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.layer_shapes()
            .iter()
            .map(|(i, o)| {
                let start = off;
                off += i * o + o;
                start
            })
            .collect()
    }

    pub fn max_width(&self) -> usize {
        self.hidden_widths.iter().copied().max().unwrap_or(1).max(self.input_dim)
    }
}

/// Default solution network: 6 hidden layers of 40 units, tanh on layers
/// 1, 2, 4, 6 and softplus on layers 3 and 5.
pub fn default_u_spec(input_dim: usize) -> MlpSpec {
    default_u_spec_with(input_dim, Activation::Softplus)
}

/// Default solution network with a custom activation on layers 3 and 5
/// (the singular benchmark uses elu there).
pub fn default_u_spec_with(input_dim: usize, middle: Activation) -> MlpSpec {
    use Activation::Tanh;
    MlpSpec {
        input_dim,
        hidden_widths: vec![40; 6],
        activations: vec![Tanh, Tanh, middle, Tanh, middle, Tanh],
    }
}

/// Default test network: 8 hidden layers of 50 units with the schedule
/// tanh, sinc, softplus, tanh, sinc, softplus, sinc, softplus.
pub fn default_phi_spec(input_dim: usize) -> MlpSpec {
    use Activation::{Sinc, Softplus, Tanh};
    MlpSpec {
        input_dim,
        hidden_widths: vec![50; 8],
        activations: vec![Tanh, Sinc, Softplus, Tanh, Sinc, Softplus, Sinc, Softplus],
    }
}

/// Flat trainable parameters of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self(vec![0.0; spec.param_count()])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn check(&self, spec: &MlpSpec) -> Result<()> {
        if self.0.len() != spec.param_count() {
            return Err(WanError::DimensionMismatch {
                context: "parameter vector",
                expected: spec.param_count(),
                got: self.0.len(),
            });
        }
        if let Some(i) = self.0.iter().position(|v| !v.is_finite()) {
            return Err(WanError::non_finite(format!("parameter {i}"), None));
        }
        Ok(())
    }

    /// View of the output layer's weights and bias.
    pub fn output_layer_mut(&mut self, spec: &MlpSpec) -> &mut [f64] {
        let off = *spec.layer_offsets().last().unwrap();
        &mut self.0[off..]
    }
}

/// A network architecture together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: MlpSpec,
    pub params: ParamVector,
}

impl Network {
    pub fn new(spec: MlpSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        params.check(&spec)?;
        Ok(Self { spec, params })
    }

    pub fn init(spec: MlpSpec, seed: u64) -> Self {
        let params = init_params(&spec, seed);
        Self { spec, params }
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    /// Values and input gradients on a row-major point batch.
    pub fn eval(&self, points: &[f64]) -> Result<crate::diffcore::BatchEval> {
        crate::diffcore::forward(&self.spec, &self.params, points, false)
    }

    pub fn values(&self, points: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval(points)?.values().to_vec())
    }
}

/// Glorot-uniform weights and zero biases, fully determined by `seed`.
pub fn init_params(spec: &MlpSpec, seed: u64) -> ParamVector {
    let mut rng = stream_rng(seed, Stream::Init, 0);
    let mut p = Vec::with_capacity(spec.param_count());
    for (fan_in, fan_out) in spec.layer_shapes() {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        p.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)));
        p.extend(std::iter::repeat(0.0).take(fan_out));
    }
    ParamVector(p)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"WANPRM01";

/// Writes `spec` and `params` as a self-describing little-endian file:
/// 8-byte magic, u32 length of the JSON-encoded spec, the spec, u64 parameter
/// count, then the parameters as f64 in canonical layer order.
pub fn write_checkpoint<W: Write>(mut w: W, spec: &MlpSpec, params: &ParamVector) -> Result<()> {
    params.check(spec)?;
    let spec_json = serde_json::to_vec(spec)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(spec_json.len() as u32).to_le_bytes())?;
    w.write_all(&spec_json)?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(MlpSpec, ParamVector)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(WanError::config("not a parameter checkpoint (bad magic)"));
    }
    let mut len4 = [0u8; 4];
    r.read_exact(&mut len4)?;
    let mut spec_json = vec![0u8; u32::from_le_bytes(len4) as usize];
    r.read_exact(&mut spec_json)?;
    let spec: MlpSpec = serde_json::from_slice(&spec_json)?;
    spec.validate()?;
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8)?;
    let n = u64::from_le_bytes(len8) as usize;
    let mut params = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        params.push(f64::from_le_bytes(buf));
    }
    let params = ParamVector(params);
    params.check(&spec)?;
    Ok((spec, params))
}

pub fn save_checkpoint(path: impl AsRef<Path>, spec: &MlpSpec, params: &ParamVector) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(std::io::BufWriter::new(file), spec, params)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(MlpSpec, ParamVector)> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}
