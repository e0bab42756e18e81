//! Residual fully-convolutional network with hand-rolled reverse-mode
//! differentiation.
//!
//! Two architecture presets are built from the same primitives:
//!
//! * `PAPER26`: 26 conv layers at 64 channels — three head convs (the
//!   third stride-2), ten residual blocks with dilations
//!   [1,1,2,2,4,4,8,8,16,1], a 2x transposed-conv upsample, and two tail
//!   convs. The final 64->3 conv is zero-initialized so the untrained
//!   network is the identity.
//! * `TOY8`: 8 conv layers at 16 channels, no down/upsampling, block
//!   dilations (1,2), (2,4), (4,1) — small enough for second-scale tests.
//!
//! The network predicts a residual; [`Network::forward_smooth`] adds it
//! to the input image.

mod layers;
mod model;
mod tensor;

pub use layers::{to_f32_grid, Conv, Norm, Param, Relu};
pub use model::{load_model, save_model, MODEL_VERSION};
pub use tensor::Tensor;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

/// Architecture preset identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    Paper26,
    Toy8,
}

impl PresetKind {
    pub fn tag(self) -> u8 {
        match self {
            PresetKind::Paper26 => 1,
            PresetKind::Toy8 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(PresetKind::Paper26),
            2 => Ok(PresetKind::Toy8),
            other => Err(Error::ModelFormat(format!("unknown preset tag {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PresetKind::Paper26 => "paper26",
            PresetKind::Toy8 => "toy8",
        }
    }
}

/// Conv (+ optional norm, optional ReLU) stage.
#[derive(Debug, Clone)]
pub struct ConvUnit {
    pub conv: Conv,
    pub norm: Option<Norm>,
    pub relu: Option<Relu>,
}

impl ConvUnit {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut y = self.conv.forward(x)?;
        if let Some(norm) = &mut self.norm {
            y = norm.forward(&y, train)?;
        }
        if let Some(relu) = &mut self.relu {
            y = relu.forward(&y);
        }
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.clone();
        if let Some(relu) = &self.relu {
            g = relu.backward(&g)?;
        }
        if let Some(norm) = &mut self.norm {
            g = norm.backward(&g)?;
        }
        self.conv.backward(&g)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.conv.weight, &mut self.conv.bias];
        if let Some(norm) = &mut self.norm {
            out.push(&mut norm.gain);
            out.push(&mut norm.shift);
        }
        out
    }
}

/// One network stage: a plain conv unit or a two-conv residual block
/// (y = relu(inner(x) + x)).
#[derive(Debug, Clone)]
pub enum Block {
    Unit(ConvUnit),
    Residual {
        a: ConvUnit,
        b: ConvUnit,
        relu: Relu,
    },
}

impl Block {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        match self {
            Block::Unit(u) => u.forward(x, train),
            Block::Residual { a, b, relu } => {
                let inner = b.forward(&a.forward(x, train)?, train)?;
                if inner.shape() != x.shape() {
                    return Err(Error::DimensionMismatch(
                        "residual block must preserve shape".into(),
                    ));
                }
                let mut sum = inner;
                for (s, xi) in sum.data_mut().iter_mut().zip(x.data()) {
                    *s += xi;
                }
                Ok(relu.forward(&sum))
            }
        }
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match self {
            Block::Unit(u) => u.backward(grad),
            Block::Residual { a, b, relu } => {
                let g_sum = relu.backward(grad)?;
                let g_inner = a.backward(&b.backward(&g_sum)?)?;
                let mut g_in = g_sum;
                for (gi, gs) in g_in.data_mut().iter_mut().zip(g_inner.data()) {
                    *gi += gs;
                }
                Ok(g_in)
            }
        }
    }

    fn units_mut(&mut self) -> Vec<&mut ConvUnit> {
        match self {
            Block::Unit(u) => vec![u],
            Block::Residual { a, b, .. } => vec![a, b],
        }
    }

    fn units(&self) -> Vec<&ConvUnit> {
        match self {
            Block::Unit(u) => vec![u],
            Block::Residual { a, b, .. } => vec![a, b],
        }
    }
}

/// The full residual network plus its Adam step counter.
#[derive(Debug, Clone)]
pub struct Network {
    pub preset: PresetKind,
    blocks: Vec<Block>,
    step: u64,
}

fn unit(
    rng: &mut Rng,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
    dilation: usize,
    norm: bool,
    relu: bool,
) -> ConvUnit {
    ConvUnit {
        conv: Conv::new(in_ch, out_ch, 3, stride, dilation, dilation, rng),
        norm: if norm { Some(Norm::new(out_ch)) } else { None },
        relu: if relu { Some(Relu::new()) } else { None },
    }
}

fn residual(rng: &mut Rng, ch: usize, dil_a: usize, dil_b: usize) -> Block {
    Block::Residual {
        a: unit(rng, ch, ch, 1, dil_a, true, true),
        b: unit(rng, ch, ch, 1, dil_b, true, false),
        relu: Relu::new(),
    }
}

/// Builds a freshly initialized network (He init, zero final layer).
pub fn build(preset: PresetKind, seed: u64) -> Network {
    let mut rng = Rng::new(seed);
    let mut blocks = Vec::new();
    match preset {
        PresetKind::Paper26 => {
            let ch = 64;
            blocks.push(Block::Unit(unit(&mut rng, 3, ch, 1, 1, true, true)));
            blocks.push(Block::Unit(unit(&mut rng, ch, ch, 1, 1, true, true)));
            blocks.push(Block::Unit(unit(&mut rng, ch, ch, 2, 1, true, true)));
            for &d in &[1usize, 1, 2, 2, 4, 4, 8, 8, 16, 1] {
                blocks.push(residual(&mut rng, ch, d, d));
            }
            blocks.push(Block::Unit(ConvUnit {
                conv: Conv::new_upsample(ch, ch, &mut rng),
                norm: Some(Norm::new(ch)),
                relu: Some(Relu::new()),
            }));
            blocks.push(Block::Unit(unit(&mut rng, ch, ch, 1, 1, true, true)));
            let mut last = unit(&mut rng, ch, 3, 1, 1, false, false);
            last.conv.zero_weights();
            blocks.push(Block::Unit(last));
        }
        PresetKind::Toy8 => {
            let ch = 16;
            blocks.push(Block::Unit(unit(&mut rng, 3, ch, 1, 1, true, true)));
            for &(da, db) in &[(1usize, 2usize), (2, 4), (4, 1)] {
                blocks.push(residual(&mut rng, ch, da, db));
            }
            let mut last = unit(&mut rng, ch, 3, 1, 1, false, false);
            last.conv.zero_weights();
            blocks.push(Block::Unit(last));
        }
    }
    Network {
        preset,
        blocks,
        step: 0,
    }
}

impl Network {
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut t = x.clone();
        for block in &mut self.blocks {
            t = block.forward(&t, train)?;
        }
        Ok(t)
    }

    /// Backpropagates a loss gradient at the output; returns the input
    /// gradient and accumulates parameter gradients.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.clone();
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// One Adam step over all parameters (global step counter).
    pub fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64) {
        self.step += 1;
        let t = self.step;
        for p in self.params_mut() {
            p.adam_step(t, lr, beta1, beta2, eps);
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.units_mut())
            .flat_map(|u| u.params_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.units()
            .iter()
            .map(|u| {
                u.conv.weight_count() + u.norm.as_ref().map_or(0, |n| n.weight_count())
            })
            .sum()
    }

    pub(crate) fn units(&self) -> Vec<&ConvUnit> {
        self.blocks.iter().flat_map(|b| b.units()).collect()
    }

    pub(crate) fn units_mut(&mut self) -> Vec<&mut ConvUnit> {
        self.blocks.iter_mut().flat_map(|b| b.units_mut()).collect()
    }

    /// (kernel, stride, dilation) of every conv in forward order.
    pub fn conv_chain(&self) -> Vec<(usize, usize, usize)> {
        self.units()
            .iter()
            .map(|u| (u.conv.k, u.conv.stride, u.conv.dilation))
            .collect()
    }

    /// Index (into `conv_chain`) of the transposed conv, if any.
    pub fn deconv_index(&self) -> Option<usize> {
        self.units().iter().position(|u| u.conv.transposed)
    }

    /// Residual smoothing: output = I + network(I), unclamped.
    pub fn forward_smooth(&mut self, img: &Image, train: bool) -> Result<Image> {
        if img.channels() != 3 {
            return Err(Error::InvalidArgument(
                "network input must have 3 channels".into(),
            ));
        }
        if self.preset == PresetKind::Paper26
            && (img.height() % 2 != 0 || img.width() % 2 != 0)
        {
            return Err(Error::InvalidArgument(format!(
                "paper26 needs even dimensions, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        let x = Tensor::from_image(img);
        let res = self.forward(&x, train)?;
        if res.shape() != x.shape() {
            return Err(Error::DimensionMismatch("residual vs input shape".into()));
        }
        let data: Vec<f64> = img
            .data()
            .iter()
            .zip(res.data())
            .map(|(i, r)| i + r)
            .collect();
        Image::new_unclamped(img.height(), img.width(), img.channels(), data)
    }

    /// SHA-256 over all optimizer moments, for checkpoint sidecars.
    pub fn moments_digest(&mut self) -> String {
        let mut hasher = Sha256::new();
        for p in self.params_mut() {
            let (m, v) = p.moments();
            for x in m.iter().chain(v) {
                hasher.update(x.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Receptive-field recurrence: rf += (k-1)*dilation*jump; jump *= stride.
pub fn receptive_field(chain: &[(usize, usize, usize)]) -> usize {
    let mut rf = 1usize;
    let mut jump = 1usize;
    for &(k, stride, dilation) in chain {
        rf += (k - 1) * dilation * jump;
        jump *= stride;
    }
    rf
}
