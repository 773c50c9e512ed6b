use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::attention::AttentionWindow;
use super::config::{Attention, DrawConfig};
use crate::error::{Error, Result};
use crate::losses::LatentState;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

const INIT_STD: f64 = 0.05;
const FORGET_BIAS: f64 = 1.0;

/// Named parameter slots. Attention slots exist only when attention is on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    EncRead,
    EncDec,
    EncRec,
    EncBias,
    MuWeight,
    MuBias,
    SigmaWeight,
    SigmaBias,
    DecLatent,
    DecRec,
    DecBias,
    WriteWeight,
    WriteBias,
    ReadAttnWeight,
    ReadAttnBias,
    WriteAttnWeight,
    WriteAttnBias,
}

impl Slot {
    const BASE: [Slot; 13] = [
        Slot::EncRead,
        Slot::EncDec,
        Slot::EncRec,
        Slot::EncBias,
        Slot::MuWeight,
        Slot::MuBias,
        Slot::SigmaWeight,
        Slot::SigmaBias,
        Slot::DecLatent,
        Slot::DecRec,
        Slot::DecBias,
        Slot::WriteWeight,
        Slot::WriteBias,
    ];
    const ATTENTION: [Slot; 4] = [
        Slot::ReadAttnWeight,
        Slot::ReadAttnBias,
        Slot::WriteAttnWeight,
        Slot::WriteAttnBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Slot::EncRead => "encoder.w_read",
            Slot::EncDec => "encoder.w_dec",
            Slot::EncRec => "encoder.w_rec",
            Slot::EncBias => "encoder.bias",
            Slot::MuWeight => "latent.w_mu",
            Slot::MuBias => "latent.b_mu",
            Slot::SigmaWeight => "latent.w_log_sigma",
            Slot::SigmaBias => "latent.b_log_sigma",
            Slot::DecLatent => "decoder.w_z",
            Slot::DecRec => "decoder.w_rec",
            Slot::DecBias => "decoder.bias",
            Slot::WriteWeight => "write.weight",
            Slot::WriteBias => "write.bias",
            Slot::ReadAttnWeight => "read_attention.weight",
            Slot::ReadAttnBias => "read_attention.bias",
            Slot::WriteAttnWeight => "write_attention.weight",
            Slot::WriteAttnBias => "write_attention.bias",
        }
    }

    pub fn is_bias(self) -> bool {
        matches!(
            self,
            Slot::EncBias
                | Slot::MuBias
                | Slot::SigmaBias
                | Slot::DecBias
                | Slot::WriteBias
                | Slot::ReadAttnBias
                | Slot::WriteAttnBias
        )
    }

    pub fn shape(self, cfg: &DrawConfig) -> [usize; 2] {
        let (he, hd, z) = (cfg.enc_hidden, cfg.dec_hidden, cfg.z_dim);
        match self {
            Slot::EncRead => [cfg.read_len(), 4 * he],
            Slot::EncDec => [hd, 4 * he],
            Slot::EncRec => [he, 4 * he],
            Slot::EncBias => [1, 4 * he],
            Slot::MuWeight | Slot::SigmaWeight => [he, z],
            Slot::MuBias | Slot::SigmaBias => [1, z],
            Slot::DecLatent => [z, 4 * hd],
            Slot::DecRec => [hd, 4 * hd],
            Slot::DecBias => [1, 4 * hd],
            Slot::WriteWeight => [hd, cfg.write_len()],
            Slot::WriteBias => [1, cfg.write_len()],
            Slot::ReadAttnWeight | Slot::WriteAttnWeight => [hd, 5],
            Slot::ReadAttnBias | Slot::WriteAttnBias => [1, 5],
        }
    }

    pub fn layout(cfg: &DrawConfig) -> Vec<Slot> {
        let mut slots = Slot::BASE.to_vec();
        if matches!(cfg.attention, Attention::Grid { .. }) {
            slots.extend(Slot::ATTENTION);
        }
        slots
    }
}

/// Learnable parameters of one direction-conditioned DRAW network.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawModel<S> {
    config: DrawConfig,
    slots: Vec<Slot>,
    params: Vec<Tensor<S>>,
}

/// Hidden and cell state of an LSTM.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros<S: Scalar>(g: &mut Graph<S>, hidden: usize) -> Self {
        Self {
            h: g.constant(Tensor::zeros([1, hidden])),
            c: g.constant(Tensor::zeros([1, hidden])),
        }
    }
}

/// One LSTM update. Gate pre-activations are `Σ xᵢ·Wᵢ + b`, laid out as
/// `[input | forget | output | candidate]` blocks of `hidden` columns.
pub fn lstm_step<S: Scalar>(
    g: &mut Graph<S>,
    terms: &[(Var, Var)],
    bias: Var,
    state: LstmState,
    hidden: usize,
) -> Result<LstmState> {
    let mut acc = bias;
    for &(x, w) in terms {
        let xw = g.matmul(x, w)?;
        acc = g.add(xw, acc)?;
    }
    let gate = |g: &mut Graph<S>, i: usize| g.slice_cols(acc, i * hidden, hidden);
    let (i_pre, f_pre, o_pre, c_pre) = (gate(g, 0)?, gate(g, 1)?, gate(g, 2)?, gate(g, 3)?);
    let i = g.sigmoid(i_pre);
    let f = g.sigmoid(f_pre);
    let o = g.sigmoid(o_pre);
    let cand = g.tanh(c_pre);
    let keep = g.mul(f, state.c)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok(LstmState { h, c })
}

/// Recorded forward pass: the graph plus handles into it.
#[derive(Debug)]
pub struct DrawPass<S> {
    pub graph: Graph<S>,
    /// One leaf per parameter, in [`DrawModel::slots`] order.
    pub params: Vec<Var>,
    pub target: Var,
    /// `sigmoid(c_T)`, shaped like a tile.
    pub output: Var,
    pub latents: LatentState,
    /// Canvas after each step, `c_1 .. c_T`.
    pub canvases: Vec<Var>,
}

impl<S: Scalar> DrawPass<S> {
    pub fn output_tile(&self) -> &Tensor<S> {
        self.graph.value(self.output)
    }
}

impl<S: Scalar> DrawModel<S> {
    /// Random initialization: weights ~ N(0, 0.05²), biases 0 except the
    /// LSTM forget-gate bias, which starts at 1.
    pub fn new<R: Rng + ?Sized>(config: DrawConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let slots = Slot::layout(&config);
        let params = slots
            .iter()
            .map(|&slot| {
                let shape = slot.shape(&config);
                if slot.is_bias() {
                    let mut b = Tensor::zeros(shape);
                    let hidden = match slot {
                        Slot::EncBias => config.enc_hidden,
                        Slot::DecBias => config.dec_hidden,
                        _ => 0,
                    };
                    for v in &mut b.data_mut()[hidden..2 * hidden] {
                        *v = S::of(FORGET_BIAS);
                    }
                    b
                } else {
                    Tensor::from_fn(shape, |_| S::of(normal.sample(rng)))
                }
            })
            .collect();
        Ok(Self {
            config,
            slots,
            params,
        })
    }

    /// All-zero parameters.
    pub fn zeros(config: DrawConfig) -> Result<Self> {
        config.validate()?;
        let slots = Slot::layout(&config);
        let params = slots
            .iter()
            .map(|s| Tensor::zeros(s.shape(&config)))
            .collect();
        Ok(Self {
            config,
            slots,
            params,
        })
    }

    /// Builds a model from explicit tensors in [`Slot::layout`] order.
    pub fn from_params(config: DrawConfig, params: Vec<Tensor<S>>) -> Result<Self> {
        config.validate()?;
        let slots = Slot::layout(&config);
        if params.len() != slots.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                params.len()
            )));
        }
        for (slot, p) in slots.iter().zip(&params) {
            if p.shape() != slot.shape(&config) {
                return Err(Error::Format(format!(
                    "parameter {} has shape {:?}, config requires {:?}",
                    slot.name(),
                    p.shape(),
                    slot.shape(&config)
                )));
            }
        }
        Ok(Self {
            config,
            slots,
            params,
        })
    }

    pub fn config(&self) -> &DrawConfig {
        &self.config
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn params(&self) -> &[Tensor<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.params
    }

    pub fn param(&self, slot: Slot) -> Option<&Tensor<S>> {
        self.slots
            .iter()
            .position(|&s| s == slot)
            .map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, slot: Slot) -> Option<&mut Tensor<S>> {
        self.slots
            .iter()
            .position(|&s| s == slot)
            .map(|i| &mut self.params[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(Tensor::all_finite)
    }

    /// Standard-normal reparameterization noise, one `1×z` tensor per step.
    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Tensor<S>> {
        (0..self.config.steps)
            .map(|_| {
                Tensor::from_fn([1, self.config.z_dim], |_| {
                    let e: f64 = StandardNormal.sample(rng);
                    S::of(e)
                })
            })
            .collect()
    }

    /// Runs `T` steps reading `input` with the error channel measured
    /// against `target`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: &Tensor<S>,
        target: &Tensor<S>,
        rng: &mut R,
    ) -> Result<DrawPass<S>> {
        let noise = self.draw_noise(rng);
        self.forward_with_noise(input, target, &noise)
    }

    pub fn forward_with_noise(
        &self,
        input: &Tensor<S>,
        target: &Tensor<S>,
        noise: &[Tensor<S>],
    ) -> Result<DrawPass<S>> {
        self.check_inputs(input, target, noise)?;
        self.record(self.params.iter().cloned(), input, target, noise)
    }

    /// Like [`forward`](Self::forward) but moves the parameters into the
    /// graph instead of copying them. The model is unusable until
    /// [`reclaim`](Self::reclaim) hands them back.
    pub fn forward_lent<R: Rng + ?Sized>(
        &mut self,
        input: &Tensor<S>,
        target: &Tensor<S>,
        rng: &mut R,
    ) -> Result<DrawPass<S>> {
        let noise = self.draw_noise(rng);
        self.check_inputs(input, target, &noise)?;
        let params = std::mem::take(&mut self.params);
        self.record(params.into_iter(), input, target, &noise)
    }

    /// Returns parameters lent to `pass` by [`forward_lent`](Self::forward_lent).
    pub fn reclaim(&mut self, pass: &mut DrawPass<S>) {
        self.params = pass
            .params
            .iter()
            .map(|&v| pass.graph.take_value(v))
            .collect();
    }

    fn check_inputs(
        &self,
        input: &Tensor<S>,
        target: &Tensor<S>,
        noise: &[Tensor<S>],
    ) -> Result<()> {
        let cfg = &self.config;
        let tile = cfg.tile_shape();
        for t in [input, target] {
            if t.shape() != tile {
                return Err(Error::shape(t.shape(), &tile));
            }
        }
        if noise.len() != cfg.steps || noise.iter().any(|e| e.shape() != [1, cfg.z_dim]) {
            return Err(Error::invalid(format!(
                "need {} noise tensors of shape [1, {}]",
                cfg.steps, cfg.z_dim
            )));
        }
        Ok(())
    }

    fn record(
        &self,
        leaves: impl Iterator<Item = Tensor<S>>,
        input: &Tensor<S>,
        target: &Tensor<S>,
        noise: &[Tensor<S>],
    ) -> Result<DrawPass<S>> {
        let cfg = &self.config;
        let tile = cfg.tile_shape();
        let mut g = Graph::new();
        let params: Vec<Var> = leaves.map(|p| g.leaf(p)).collect();
        let p = |slot: Slot| -> Var {
            let i = self
                .slots
                .iter()
                .position(|&s| s == slot)
                .expect("slot present");
            params[i]
        };

        let x = g.constant(input.clone());
        let target_var = g.constant(target.clone());
        let mut canvas = g.constant(Tensor::zeros(tile));
        let mut enc = LstmState::zeros(&mut g, cfg.enc_hidden);
        let mut dec = LstmState::zeros(&mut g, cfg.dec_hidden);
        let mut latents = LatentState::default();
        let mut canvases = Vec::with_capacity(cfg.steps);

        for eps in noise {
            let current = g.sigmoid(canvas);
            let err = g.sub(target_var, current)?;
            let r = self.read(&mut g, &p, x, err, dec.h)?;
            enc = lstm_step(
                &mut g,
                &[
                    (r, p(Slot::EncRead)),
                    (dec.h, p(Slot::EncDec)),
                    (enc.h, p(Slot::EncRec)),
                ],
                p(Slot::EncBias),
                enc,
                cfg.enc_hidden,
            )?;
            let (mu, sigma, z) = sample_latent(
                &mut g,
                enc.h,
                [
                    p(Slot::MuWeight),
                    p(Slot::MuBias),
                    p(Slot::SigmaWeight),
                    p(Slot::SigmaBias),
                ],
                eps,
            )?;
            latents.mu.push(mu);
            latents.sigma.push(sigma);
            latents.z.push(z);
            dec = lstm_step(
                &mut g,
                &[(z, p(Slot::DecLatent)), (dec.h, p(Slot::DecRec))],
                p(Slot::DecBias),
                dec,
                cfg.dec_hidden,
            )?;
            let inc = self.write(&mut g, &p, dec.h)?;
            canvas = g.add(canvas, inc)?;
            canvases.push(canvas);
        }
        let output = g.sigmoid(canvas);
        Ok(DrawPass {
            graph: g,
            params,
            target: target_var,
            output,
            latents,
            canvases,
        })
    }

    /// Generates a neighbour tile for `input`. No target exists at this point,
    /// so the error channel is measured against a zero tile.
    pub fn generate<R: Rng + ?Sized>(&self, input: &Tensor<S>, rng: &mut R) -> Result<Tensor<S>> {
        let zero = Tensor::zeros(self.config.tile_shape());
        let pass = self.forward(input, &zero, rng)?;
        Ok(pass.output_tile().clone())
    }

    fn read(
        &self,
        g: &mut Graph<S>,
        p: &impl Fn(Slot) -> Var,
        x: Var,
        err: Var,
        h_dec: Var,
    ) -> Result<Var> {
        let cfg = &self.config;
        match cfg.attention {
            Attention::Off => {
                let n = cfg.tile_len();
                let xf = g.reshape(x, [1, n])?;
                let ef = g.reshape(err, [1, n])?;
                g.concat_cols(&[xf, ef])
            }
            Attention::Grid { n } => {
                let hw = g.matmul(h_dec, p(Slot::ReadAttnWeight))?;
                let raw = g.add(hw, p(Slot::ReadAttnBias))?;
                let window = AttentionWindow::from_head(g, raw, n, cfg.tile_size, cfg.tile_size)?;
                let gx = window.read(g, x)?;
                let ge = window.read(g, err)?;
                g.concat_cols(&[gx, ge])
            }
        }
    }

    fn write(&self, g: &mut Graph<S>, p: &impl Fn(Slot) -> Var, h_dec: Var) -> Result<Var> {
        let cfg = &self.config;
        let hw = g.matmul(h_dec, p(Slot::WriteWeight))?;
        let patch = g.add(hw, p(Slot::WriteBias))?;
        match cfg.attention {
            Attention::Off => g.reshape(patch, cfg.tile_shape()),
            Attention::Grid { n } => {
                let aw = g.matmul(h_dec, p(Slot::WriteAttnWeight))?;
                let raw = g.add(aw, p(Slot::WriteAttnBias))?;
                let window = AttentionWindow::from_head(g, raw, n, cfg.tile_size, cfg.tile_size)?;
                window.write(g, patch, cfg.channels)
            }
        }
    }
}

/// Reparameterized sample: `μ = h·W_μ + b_μ`, `σ = exp(h·W_σ + b_σ)`,
/// `z = μ + σ ⊙ ε` with `ε` a constant node.
pub fn sample_latent<S: Scalar>(
    g: &mut Graph<S>,
    h_enc: Var,
    [w_mu, b_mu, w_sigma, b_sigma]: [Var; 4],
    eps: &Tensor<S>,
) -> Result<(Var, Var, Var)> {
    let m = g.matmul(h_enc, w_mu)?;
    let mu = g.add(m, b_mu)?;
    let s = g.matmul(h_enc, w_sigma)?;
    let log_sigma = g.add(s, b_sigma)?;
    let sigma = g.exp(log_sigma);
    let e = g.constant(eps.clone());
    let spread = g.mul(sigma, e)?;
    let z = g.add(mu, spread)?;
    Ok((mu, sigma, z))
}
