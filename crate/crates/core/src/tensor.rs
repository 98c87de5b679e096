//! Dense channel-major feature maps and the per-pixel layers used by the
//! attention block: 1x1 convolution, inference batch norm, ReLU and sigmoid.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `channels x height x width` array stored channel-major, then row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureMapRepr", into = "FeatureMapRepr")]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FeatureMapRepr {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl TryFrom<FeatureMapRepr> for FeatureMap {
    type Error = Error;

    fn try_from(r: FeatureMapRepr) -> Result<Self> {
        FeatureMap::from_vec(r.channels, r.height, r.width, r.data)
    }
}

impl From<FeatureMap> for FeatureMapRepr {
    fn from(m: FeatureMap) -> Self {
        FeatureMapRepr {
            channels: m.channels,
            height: m.height,
            width: m.width,
            data: m.data,
        }
    }
}

const BINARY_MAGIC: &[u8; 4] = b"FMAP";

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        check_dims(channels, height, width)?;
        Self::from_vec(channels, height, width, vec![value; channels * height * width])
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(channels, height, width)?;
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite feature value {v}")));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a map from a generator called in storage order `(c, y, x)`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(channels, height, width)?;
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::from_vec(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of spatial positions, `height * width`.
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// The `height * width` plane of channel `c`.
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureMap {
        FeatureMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_dims(&self, other: &FeatureMap) -> bool {
        self.dims() == other.dims()
    }

    /// Largest absolute elementwise difference; dimensions must agree.
    pub fn max_abs_diff(&self, other: &FeatureMap) -> Result<f64> {
        if !self.same_dims(other) {
            return Err(Error::Dimension(format!("{:?} vs {:?}", self.dims(), other.dims())));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Little-endian binary form: `FMAP`, three `u32` dims, then `f64` data.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(BINARY_MAGIC)?;
        for d in [self.channels, self.height, self.width] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)
            .map_err(|e| Error::Schema(format!("reading feature map: {e}")))?;
        Self::from_binary_bytes(&buf)
    }

    pub fn from_binary_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 16 || &buf[..4] != BINARY_MAGIC {
            return Err(Error::Schema("missing FMAP header".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(buf[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let (c, h, w) = (dim(0) as usize, dim(1) as usize, dim(2) as usize);
        let body = &buf[16..];
        if body.len() != c * h * w * 8 {
            return Err(Error::Schema(format!(
                "feature map {c}x{h}x{w} expects {} data bytes, found {}",
                c * h * w * 8,
                body.len()
            )));
        }
        let data = body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::from_vec(c, h, w, data)
    }

    /// Parses either the binary form (detected by magic) or JSON.
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.starts_with(BINARY_MAGIC) {
            Self::from_binary_bytes(buf)
        } else {
            Ok(serde_json::from_slice(buf)?)
        }
    }
}

fn check_dims(channels: usize, height: usize, width: usize) -> Result<()> {
    if channels == 0 || height == 0 || width == 0 {
        return Err(Error::Dimension(format!(
            "feature map dims must be positive, got {channels}x{height}x{width}"
        )));
    }
    Ok(())
}

/// Weights of a 1x1 convolution; `weight` is `out_channels x in_channels`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1x1Params {
    pub out_channels: usize,
    pub in_channels: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1x1Params {
    pub fn new(out_channels: usize, in_channels: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let p = Conv1x1Params {
            out_channels,
            in_channels,
            weight,
            bias,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        Conv1x1Params {
            out_channels,
            in_channels,
            weight: vec![0.0; out_channels * in_channels],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn identity(channels: usize) -> Self {
        let mut p = Self::zeros(channels, channels);
        for c in 0..channels {
            p.weight[c * channels + c] = 1.0;
        }
        p
    }

    #[inline]
    pub fn w(&self, o: usize, i: usize) -> f64 {
        self.weight[o * self.in_channels + i]
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_channels == 0 || self.in_channels == 0 {
            return Err(Error::Dimension("conv channels must be positive".into()));
        }
        if self.weight.len() != self.out_channels * self.in_channels {
            return Err(Error::Dimension(format!(
                "conv weight has {} entries, expected {}x{}",
                self.weight.len(),
                self.out_channels,
                self.in_channels
            )));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::Dimension(format!(
                "conv bias has {} entries, expected {}",
                self.bias.len(),
                self.out_channels
            )));
        }
        if self.weight.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite conv parameter".into()));
        }
        Ok(())
    }
}

/// Inference-mode batch norm state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnParams {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
}

impl BnParams {
    /// `scale = 1, shift = 0, mean = 0, var = 1, eps = 0`: the identity map.
    pub fn identity(channels: usize) -> Self {
        BnParams {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 0.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.scale.len();
        if n == 0 {
            return Err(Error::Dimension("batch norm with zero channels".into()));
        }
        for (name, v) in [
            ("shift", &self.shift),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            if v.len() != n {
                return Err(Error::Dimension(format!(
                    "batch norm {name} has {} entries, scale has {n}",
                    v.len()
                )));
            }
        }
        let all = self
            .scale
            .iter()
            .chain(&self.shift)
            .chain(&self.running_mean)
            .chain(&self.running_var);
        if all.chain(std::iter::once(&self.eps)).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite batch norm parameter".into()));
        }
        if self.eps < 0.0 {
            return Err(Error::Domain(format!("batch norm eps {} < 0", self.eps)));
        }
        if let Some(v) = self.running_var.iter().find(|&&v| v < 0.0 || v + self.eps <= 0.0) {
            return Err(Error::Domain(format!(
                "batch norm variance {v} with eps {} is not positive",
                self.eps
            )));
        }
        Ok(())
    }

    /// Per-channel multiplier `scale / sqrt(var + eps)`.
    pub(crate) fn gain(&self, c: usize) -> f64 {
        self.scale[c] / (self.running_var[c] + self.eps).sqrt()
    }
}

pub fn conv1x1(x: &FeatureMap, p: &Conv1x1Params) -> Result<FeatureMap> {
    p.validate()?;
    if x.channels != p.in_channels {
        return Err(Error::Dimension(format!(
            "conv1x1 expects {} input channels, map has {}",
            p.in_channels, x.channels
        )));
    }
    let n = x.pixels();
    let mut out = vec![0.0; p.out_channels * n];
    for (o, plane) in out.chunks_mut(n).enumerate() {
        plane.fill(p.bias[o]);
        for c in 0..p.in_channels {
            let w = p.w(o, c);
            for (acc, v) in plane.iter_mut().zip(x.channel(c)) {
                *acc += w * v;
            }
        }
    }
    FeatureMap::from_vec(p.out_channels, x.height, x.width, out)
}

pub fn bn_inference(x: &FeatureMap, p: &BnParams) -> Result<FeatureMap> {
    p.validate()?;
    if p.channels() != x.channels {
        return Err(Error::Dimension(format!(
            "batch norm has {} channels, map has {}",
            p.channels(),
            x.channels
        )));
    }
    let n = x.pixels();
    let mut out = x.data.clone();
    for (c, plane) in out.chunks_mut(n).enumerate() {
        let gain = p.gain(c);
        for v in plane {
            *v = gain * (*v - p.running_mean[c]) + p.shift[c];
        }
    }
    FeatureMap::from_vec(x.channels, x.height, x.width, out)
}

pub fn relu(x: &FeatureMap) -> FeatureMap {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &FeatureMap) -> FeatureMap {
    x.map(sigmoid_scalar)
}

/// Logistic function evaluated without overflow for large `|v|`.
#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
