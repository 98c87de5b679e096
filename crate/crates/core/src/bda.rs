//! Background-denoising attention over one pyramid level.
//!
//! Given a pyramid feature `P` (`C x H x W`) and the deepest backbone map
//! `C5`, the block computes
//!
//! ```text
//! z     = sigmoid(conv_z(P))                       C  x H x W
//! P~    = relu(bn(conv_proj(P)))                   C' x H x W
//! u     = mean over pixels of conv_scene(C5)       C'
//! s     = sigmoid(sum_c' P~[c'] * u[c'])           1  x H x W
//! P_out = (1 + z) * P * s                          s broadcast over channels
//! ```
//!
//! [`bda_grad_input`] is the hand-derived vector-Jacobian product of that
//! composite with respect to both inputs; [`grad_check`] verifies it against
//! central finite differences.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::rng::PortableRng;
use crate::tensor::{bn_inference, conv1x1, relu, sigmoid, sigmoid_scalar, BnParams, Conv1x1Params, FeatureMap};

/// Central-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-6;
/// Absolute floor on the relative-error denominator.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdaParams {
    /// `C -> C`, produces the channel-importance gate.
    pub conv_z: Conv1x1Params,
    /// `C -> C'`, target projection.
    pub conv_proj: Conv1x1Params,
    pub bn_proj: BnParams,
    /// `C5 -> C'`, scene embedding.
    pub conv_scene: Conv1x1Params,
}

/// Channel counts and spatial size of a block instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BdaDims {
    pub channels: usize,
    pub scene_channels: usize,
    pub embed_channels: usize,
    pub height: usize,
    pub width: usize,
}

impl BdaDims {
    pub fn new(channels: usize, scene_channels: usize, embed_channels: usize, height: usize, width: usize) -> Self {
        BdaDims {
            channels,
            scene_channels,
            embed_channels,
            height,
            width,
        }
    }
}

impl BdaParams {
    /// All convolutions zero, batch norm identity.
    pub fn zeros(channels: usize, scene_channels: usize, embed_channels: usize) -> Self {
        BdaParams {
            conv_z: Conv1x1Params::zeros(channels, channels),
            conv_proj: Conv1x1Params::zeros(embed_channels, channels),
            bn_proj: BnParams::identity(embed_channels),
            conv_scene: Conv1x1Params::zeros(embed_channels, scene_channels),
        }
    }

    /// Convolution weights and biases uniform in `[-0.5, 0.5)`; batch norm
    /// statistics drawn from well-conditioned ranges.
    pub fn random(dims: &BdaDims, rng: &mut PortableRng) -> Self {
        let mut conv = |out: usize, inp: usize| {
            let weight = (0..out * inp).map(|_| rng.uniform(-0.5, 0.5)).collect();
            let bias = (0..out).map(|_| rng.uniform(-0.5, 0.5)).collect();
            Conv1x1Params {
                out_channels: out,
                in_channels: inp,
                weight,
                bias,
            }
        };
        let conv_z = conv(dims.channels, dims.channels);
        let conv_proj = conv(dims.embed_channels, dims.channels);
        let conv_scene = conv(dims.embed_channels, dims.scene_channels);
        let n = dims.embed_channels;
        let bn_proj = BnParams {
            scale: (0..n).map(|_| rng.uniform(0.5, 1.5)).collect(),
            shift: (0..n).map(|_| rng.uniform(-0.5, 0.5)).collect(),
            running_mean: (0..n).map(|_| rng.uniform(-0.5, 0.5)).collect(),
            running_var: (0..n).map(|_| rng.uniform(0.5, 1.5)).collect(),
            eps: 1e-5,
        };
        BdaParams {
            conv_z,
            conv_proj,
            bn_proj,
            conv_scene,
        }
    }

    pub fn channels(&self) -> usize {
        self.conv_z.in_channels
    }

    pub fn embed_channels(&self) -> usize {
        self.conv_proj.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        self.conv_z.validate()?;
        self.conv_proj.validate()?;
        self.bn_proj.validate()?;
        self.conv_scene.validate()?;
        if self.conv_z.out_channels != self.conv_z.in_channels {
            return Err(Error::Dimension(format!(
                "conv_z must be square, got {}x{}",
                self.conv_z.out_channels, self.conv_z.in_channels
            )));
        }
        if self.conv_proj.in_channels != self.conv_z.in_channels {
            return Err(Error::Dimension(format!(
                "conv_proj reads {} channels, conv_z reads {}",
                self.conv_proj.in_channels, self.conv_z.in_channels
            )));
        }
        let cp = self.conv_proj.out_channels;
        if self.conv_scene.out_channels != cp || self.bn_proj.channels() != cp {
            return Err(Error::Dimension(format!(
                "embedding widths disagree: conv_proj {cp}, conv_scene {}, bn {}",
                self.conv_scene.out_channels,
                self.bn_proj.channels()
            )));
        }
        Ok(())
    }

    fn check_inputs(&self, p_i: &FeatureMap, c5: &FeatureMap) -> Result<()> {
        self.validate()?;
        if p_i.channels() != self.channels() {
            return Err(Error::Dimension(format!(
                "P has {} channels, parameters expect {}",
                p_i.channels(),
                self.channels()
            )));
        }
        if c5.channels() != self.conv_scene.in_channels {
            return Err(Error::Dimension(format!(
                "C5 has {} channels, parameters expect {}",
                c5.channels(),
                self.conv_scene.in_channels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdaOutput {
    pub p_bd: FeatureMap,
    pub z: FeatureMap,
    pub s: FeatureMap,
    pub u: Vec<f64>,
    pub p_tilde: FeatureMap,
}

/// Global average of `conv_scene(c5)` over spatial positions.
fn scene_embedding(c5: &FeatureMap, conv_scene: &Conv1x1Params) -> Result<Vec<f64>> {
    let proj = conv1x1(c5, conv_scene)?;
    let n = proj.pixels() as f64;
    Ok((0..proj.channels())
        .map(|c| proj.channel(c).iter().sum::<f64>() / n)
        .collect())
}

pub fn bda_forward(p_i: &FeatureMap, c5: &FeatureMap, params: &BdaParams) -> Result<BdaOutput> {
    params.check_inputs(p_i, c5)?;
    let (c, h, w) = p_i.dims();
    let n = p_i.pixels();

    let z = sigmoid(&conv1x1(p_i, &params.conv_z)?);
    let p_tilde = relu(&bn_inference(&conv1x1(p_i, &params.conv_proj)?, &params.bn_proj)?);
    let u = scene_embedding(c5, &params.conv_scene)?;

    let mut logits = vec![0.0; n];
    for (cp, &uc) in u.iter().enumerate() {
        for (acc, v) in logits.iter_mut().zip(p_tilde.channel(cp)) {
            *acc += v * uc;
        }
    }
    let s: Vec<f64> = logits.into_iter().map(sigmoid_scalar).collect();

    let mut out = Vec::with_capacity(c * n);
    for ch in 0..c {
        for ((x, zv), sv) in p_i.channel(ch).iter().zip(z.channel(ch)).zip(&s) {
            out.push((1.0 + zv) * x * sv);
        }
    }

    Ok(BdaOutput {
        p_bd: FeatureMap::from_vec(c, h, w, out)?,
        z,
        s: FeatureMap::from_vec(1, h, w, s)?,
        u,
        p_tilde,
    })
}

/// Vector-Jacobian product of [`bda_forward`]'s `p_bd` with `upstream`,
/// returned as `(d/dP, d/dC5)`.
pub fn bda_grad_input(
    p_i: &FeatureMap,
    c5: &FeatureMap,
    params: &BdaParams,
    upstream: &FeatureMap,
) -> Result<(FeatureMap, FeatureMap)> {
    let fwd = bda_forward(p_i, c5, params)?;
    if !upstream.same_dims(&fwd.p_bd) {
        return Err(Error::Dimension(format!(
            "upstream {:?} does not match output {:?}",
            upstream.dims(),
            fwd.p_bd.dims()
        )));
    }
    let (c, h, w) = p_i.dims();
    let n = p_i.pixels();
    let cp = params.embed_channels();
    let s = fwd.s.as_slice();

    let mut grad_p = vec![0.0; c * n];
    // Gradient w.r.t. the sigmoid input of s, per pixel.
    let mut ds_logit = vec![0.0; n];
    // Gradient w.r.t. the sigmoid input of z.
    let mut dz_logit = vec![0.0; c * n];
    for ch in 0..c {
        let g = upstream.channel(ch);
        let x = p_i.channel(ch);
        let z = fwd.z.channel(ch);
        for k in 0..n {
            let idx = ch * n + k;
            let gate = (1.0 + z[k]) * s[k];
            grad_p[idx] = g[k] * gate;
            dz_logit[idx] = g[k] * x[k] * s[k] * z[k] * (1.0 - z[k]);
            ds_logit[k] += g[k] * (1.0 + z[k]) * x[k];
        }
    }
    for k in 0..n {
        ds_logit[k] *= s[k] * (1.0 - s[k]);
    }

    // z path: back through conv_z.
    for o in 0..c {
        for i in 0..c {
            let wt = params.conv_z.w(o, i);
            if wt == 0.0 {
                continue;
            }
            for k in 0..n {
                grad_p[i * n + k] += wt * dz_logit[o * n + k];
            }
        }
    }

    // P~ path: through the dot product with u, relu, batch norm and conv_proj.
    let mut du = vec![0.0; cp];
    for e in 0..cp {
        let pt = fwd.p_tilde.channel(e);
        let gain = params.bn_proj.gain(e);
        let mut d_pre = vec![0.0; n];
        for k in 0..n {
            du[e] += ds_logit[k] * pt[k];
            if pt[k] > 0.0 {
                d_pre[k] = ds_logit[k] * fwd.u[e] * gain;
            }
        }
        for i in 0..c {
            let wt = params.conv_proj.w(e, i);
            if wt == 0.0 {
                continue;
            }
            for k in 0..n {
                grad_p[i * n + k] += wt * d_pre[k];
            }
        }
    }

    // u path: the mean pool spreads du evenly over C5 positions.
    let n5 = c5.pixels();
    let mut grad_c5 = vec![0.0; c5.channels() * n5];
    for i in 0..c5.channels() {
        let mut acc = 0.0;
        for (e, due) in du.iter().enumerate() {
            acc += params.conv_scene.w(e, i) * due;
        }
        grad_c5[i * n5..(i + 1) * n5].fill(acc / n5 as f64);
    }

    Ok((
        FeatureMap::from_vec(c, h, w, grad_p)?,
        FeatureMap::from_vec(c5.channels(), c5.height(), c5.width(), grad_c5)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub pass: bool,
}

/// `|a - b| / max(|a|, |b|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Deterministic upstream gradient used when none is supplied.
pub fn default_upstream(dims: (usize, usize, usize)) -> FeatureMap {
    let mut rng = PortableRng::seed_from_u64(0x5eed_0bda);
    FeatureMap::from_fn(dims.0, dims.1, dims.2, |_, _, _| rng.uniform(-1.0, 1.0)).expect("dims come from a valid map")
}

/// Checks [`bda_grad_input`] against central differences using the fixed
/// upstream from [`default_upstream`].
pub fn grad_check(p_i: &FeatureMap, c5: &FeatureMap, params: &BdaParams, tolerance: f64) -> Result<GradCheckReport> {
    let upstream = default_upstream(p_i.dims());
    grad_check_with_upstream(p_i, c5, params, &upstream, tolerance)
}

pub fn grad_check_with_upstream(
    p_i: &FeatureMap,
    c5: &FeatureMap,
    params: &BdaParams,
    upstream: &FeatureMap,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (grad_p, grad_c5) = bda_grad_input(p_i, c5, params, upstream)?;
    let p_dd: Vec<Dd> = p_i.as_slice().iter().map(|&v| Dd::from(v)).collect();
    let c5_dd: Vec<Dd> = c5.as_slice().iter().map(|&v| Dd::from(v)).collect();

    // Each probe is an independent pair of forward passes in double-double
    // precision, so rounding stays far below the difference being measured.
    let probe = |which: Input, idx: usize| -> f64 {
        let shifted = |delta: f64| {
            let (mut p, mut c) = (p_dd.clone(), c5_dd.clone());
            match which {
                Input::Pyramid => p[idx] = p[idx] + delta,
                Input::Scene => c[idx] = c[idx] + delta,
            }
            forward_dd(&p, p_i.dims(), &c, c5.pixels(), params)
        };
        let (plus, minus) = (shifted(FD_STEP), shifted(-FD_STEP));
        let diff = upstream
            .as_slice()
            .iter()
            .zip(plus.iter().zip(&minus))
            .fold(Dd::ZERO, |acc, (&g, (&a, &b))| acc + (a - b) * g);
        diff.to_f64() / (2.0 * FD_STEP)
    };

    let coords: Vec<(Input, usize)> = (0..p_i.as_slice().len())
        .map(|i| (Input::Pyramid, i))
        .chain((0..c5.as_slice().len()).map(|i| (Input::Scene, i)))
        .collect();
    let max_rel_error = coords
        .par_iter()
        .map(|&(which, idx)| {
            let analytic = match which {
                Input::Pyramid => grad_p.as_slice()[idx],
                Input::Scene => grad_c5.as_slice()[idx],
            };
            relative_error(analytic, probe(which, idx))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max);

    Ok(GradCheckReport {
        max_rel_error,
        pass: max_rel_error < tolerance,
    })
}

/// [`bda_forward`]'s output map evaluated in double-double arithmetic.
/// Inputs are channel-major; parameters are validated by the caller.
fn forward_dd(p: &[Dd], dims: (usize, usize, usize), c5: &[Dd], n5: usize, params: &BdaParams) -> Vec<Dd> {
    let (c, h, w) = dims;
    let n = h * w;
    let conv = |x: &[Dd], conv: &Conv1x1Params, n: usize| -> Vec<Dd> {
        let mut out = vec![Dd::ZERO; conv.out_channels * n];
        for o in 0..conv.out_channels {
            for k in 0..n {
                let mut acc = Dd::from(conv.bias[o]);
                for i in 0..conv.in_channels {
                    acc = acc + x[i * n + k] * conv.w(o, i);
                }
                out[o * n + k] = acc;
            }
        }
        out
    };
    let z = conv(p, &params.conv_z, n);
    let proj = conv(p, &params.conv_proj, n);
    let scene = conv(c5, &params.conv_scene, n5);
    let bn = &params.bn_proj;
    let mut logits = vec![Dd::ZERO; n];
    for e in 0..params.embed_channels() {
        let u = scene[e * n5..(e + 1) * n5].iter().fold(Dd::ZERO, |a, &v| a + v) / n5 as f64;
        for k in 0..n {
            let pt = ((proj[e * n + k] + -bn.running_mean[e]) * bn.gain(e) + bn.shift[e]).max_zero();
            logits[k] = logits[k] + pt * u;
        }
    }
    let s: Vec<Dd> = logits.into_iter().map(Dd::sigmoid).collect();
    (0..c * n)
        .map(|idx| (z[idx].sigmoid() + 1.0) * p[idx] * s[idx % n])
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum Input {
    Pyramid,
    Scene,
}

/// A complete, reproducible block instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdaInstance {
    pub p_i: FeatureMap,
    pub c5: FeatureMap,
    pub params: BdaParams,
}

impl BdaInstance {
    /// Inputs uniform in `[-1, 1)`, parameters from [`BdaParams::random`].
    /// `C5` shares the spatial size of `P`.
    pub fn random(dims: &BdaDims, seed: u64) -> Result<Self> {
        let mut rng = PortableRng::seed_from_u64(seed);
        let params = BdaParams::random(dims, &mut rng);
        let p_i = FeatureMap::from_fn(dims.channels, dims.height, dims.width, |_, _, _| rng.uniform(-1.0, 1.0))?;
        let c5 = FeatureMap::from_fn(dims.scene_channels, dims.height, dims.width, |_, _, _| {
            rng.uniform(-1.0, 1.0)
        })?;
        Ok(BdaInstance { p_i, c5, params })
    }
}
