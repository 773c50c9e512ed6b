//! Leung-Malik filter bank and per-pixel filter responses.
//!
//! The default bank has 48 kernels: first and second derivatives of an
//! elongated Gaussian at 6 orientations and 3 scales, 8 Laplacian-of-Gaussian
//! kernels and 4 Gaussians. Derivative and LoG kernels are zero-mean; every
//! kernel has unit L1 norm.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::{Scalar, CLAMP_EPS};
use crate::tensor::{kernels, Graph, Tensor, Var};

pub const DEFAULT_SUPPORT: usize = 15;
pub const ORIENTATIONS: usize = 6;
pub const WEBER_CONSTANT: f64 = 0.03;

const ORIENTED_SCALES: [f64; 3] = [1.0, SQRT_2, 2.0];
const ISOTROPIC_SCALES: [f64; 4] = [1.0, SQRT_2, 2.0, 2.0 * SQRT_2];
const ELONGATION: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// First derivative of an oriented, elongated Gaussian.
    Edge,
    /// Second derivative of an oriented, elongated Gaussian.
    Bar,
    /// Laplacian of Gaussian.
    Log,
    Gauss,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::Edge,
        KernelKind::Bar,
        KernelKind::Log,
        KernelKind::Gauss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Edge => "edge",
            KernelKind::Bar => "bar",
            KernelKind::Log => "log",
            KernelKind::Gauss => "gauss",
        }
    }

    pub fn is_zero_mean(self) -> bool {
        !matches!(self, KernelKind::Gauss)
    }
}

/// Per-kernel metadata, as written to the export manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelInfo {
    pub index: usize,
    pub kind: KernelKind,
    pub scale: f64,
    pub orientation: f64,
    pub support: usize,
}

#[derive(Clone, Debug)]
pub struct FilterBank<S> {
    kernels: Arc<Tensor<S>>,
    kinds: Vec<KernelKind>,
    scales: Vec<f64>,
    orientations: Vec<f64>,
}

impl<S: Scalar> FilterBank<S> {
    /// The 48-kernel LM bank sampled on a `support × support` grid.
    pub fn leung_malik(support: usize) -> Result<Self> {
        if support.is_multiple_of(2) || support < 7 {
            return Err(Error::invalid(format!(
                "filter support must be odd and >= 7, got {support}"
            )));
        }
        let mut data = Vec::with_capacity(48 * support * support);
        let mut kinds = Vec::new();
        let mut scales = Vec::new();
        let mut orientations = Vec::new();

        for (kind, order) in [(KernelKind::Edge, 1), (KernelKind::Bar, 2)] {
            for &sigma in &ORIENTED_SCALES {
                for o in 0..ORIENTATIONS {
                    let theta = PI * o as f64 / ORIENTATIONS as f64;
                    let k = oriented_kernel(support, sigma, theta, order);
                    data.extend(zero_mean_l1(k));
                    kinds.push(kind);
                    scales.push(sigma);
                    orientations.push(theta);
                }
            }
        }
        for factor in [1.0, 3.0] {
            for &sigma in &ISOTROPIC_SCALES {
                data.extend(zero_mean_l1(log_kernel(support, factor * sigma)));
                kinds.push(KernelKind::Log);
                scales.push(factor * sigma);
                orientations.push(0.0);
            }
        }
        for &sigma in &ISOTROPIC_SCALES {
            data.extend(gaussian_kernel(support, sigma));
            kinds.push(KernelKind::Gauss);
            scales.push(sigma);
            orientations.push(0.0);
        }

        let n = kinds.len();
        let kernels = Tensor::new([n, support, support], data.into_iter().map(S::of).collect())?;
        Ok(Self {
            kernels: Arc::new(kernels),
            kinds,
            scales,
            orientations,
        })
    }

    /// Custom bank from explicit `K×k×k` kernels; metadata defaults to
    /// `Gauss` / scale 0 / orientation 0 when not given.
    pub fn from_kernels(kernels: Tensor<S>, kinds: Option<Vec<KernelKind>>) -> Result<Self> {
        let k = match *kernels.shape() {
            [k, a, b] if a == b && a % 2 == 1 => k,
            _ => {
                return Err(Error::invalid(format!(
                    "kernels must be K×k×k with odd k, got {:?}",
                    kernels.shape()
                )))
            }
        };
        let kinds = kinds.unwrap_or_else(|| vec![KernelKind::Gauss; k]);
        if kinds.len() != k {
            return Err(Error::invalid("one kind per kernel required"));
        }
        Ok(Self {
            kernels: Arc::new(kernels),
            kinds,
            scales: vec![0.0; k],
            orientations: vec![0.0; k],
        })
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn support(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernels(&self) -> &Arc<Tensor<S>> {
        &self.kernels
    }

    pub fn kernel(&self, i: usize) -> &[S] {
        let n = self.support() * self.support();
        &self.kernels.data()[i * n..(i + 1) * n]
    }

    pub fn kinds(&self) -> &[KernelKind] {
        &self.kinds
    }

    pub fn info(&self) -> Vec<KernelInfo> {
        (0..self.len())
            .map(|i| KernelInfo {
                index: i,
                kind: self.kinds[i],
                scale: self.scales[i],
                orientation: self.orientations[i],
                support: self.support(),
            })
            .collect()
    }

    /// Stable identifier of the kernel values, used to pair texton
    /// dictionaries with the bank that produced them.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.support() as u64).to_le_bytes());
        for v in self.kernels.data() {
            h.update(v.as_f64().to_le_bytes());
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Response channels grouped by kernel kind, for an input with
    /// `channels` colour channels. Kinds absent from the bank are skipped.
    pub fn kind_layers(&self, channels: usize) -> Vec<(KernelKind, Vec<usize>)> {
        let k = self.len();
        KernelKind::ALL
            .iter()
            .filter_map(|&kind| {
                let idx: Vec<usize> = (0..channels)
                    .flat_map(|c| {
                        self.kinds
                            .iter()
                            .enumerate()
                            .filter(move |(_, &kk)| kk == kind)
                            .map(move |(i, _)| c * k + i)
                    })
                    .collect();
                (!idx.is_empty()).then_some((kind, idx))
            })
            .collect()
    }

    /// Kernel `i` rescaled to `[0, 1]` as a `k×k×1` image.
    pub fn kernel_image(&self, i: usize) -> Tensor<S> {
        let ker = self.kernel(i);
        let lo = ker.iter().copied().fold(S::infinity(), S::min);
        let hi = ker.iter().copied().fold(S::neg_infinity(), S::max);
        let range = hi - lo;
        let ks = self.support();
        Tensor::from_fn([ks, ks, 1], |p| {
            if range > S::zero() {
                (ker[p] - lo) / range
            } else {
                S::of(0.5)
            }
        })
    }
}

/// Responses of every kernel on every channel, `H×W×L` with `L = K·C`.
#[derive(Clone, Debug)]
pub struct FeatureMapStack<S> {
    pub maps: Tensor<S>,
    /// Channel groups treated as separate layers (one group per kernel kind).
    pub layers: Vec<Vec<usize>>,
}

impl<S: Scalar> FeatureMapStack<S> {
    pub fn len(&self) -> usize {
        self.maps.shape()[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Vectorized size of each map (`H·W`).
    pub fn map_size(&self) -> usize {
        self.maps.shape()[0] * self.maps.shape()[1]
    }

    /// Per-pixel response vectors (`H·W` rows of length `L`).
    pub fn pixel_vectors(&self) -> impl Iterator<Item = &[S]> {
        self.maps.data().chunks(self.len())
    }
}

/// Standardizes an image to zero mean and unit (population) standard
/// deviation over all pixels and channels. A constant image maps to zeros.
pub fn normalize_image<S: Scalar>(g: &mut Graph<S>, image: Var) -> Result<Var> {
    let mean = g.mean(image);
    let centered = g.sub(image, mean)?;
    let sq = g.square(centered);
    let var = g.mean(sq);
    let eps = S::of(CLAMP_EPS);
    if g.value(var).item() < eps * eps {
        // Only rounding residue is left; dividing it by the clamp would
        // amplify noise instead of returning the flat image.
        return Ok(g.scale(centered, S::zero()));
    }
    let std = g.sqrt(var);
    g.div(centered, std)
}

/// Differentiable filter responses (no contrast normalization).
pub fn respond_var<S: Scalar>(g: &mut Graph<S>, bank: &FilterBank<S>, image: Var) -> Result<Var> {
    if bank.is_empty() {
        return Err(Error::invalid("empty filter bank"));
    }
    g.conv2d_same(image, Arc::clone(bank.kernels()))
}

/// Filter responses of a plain image. With `weber`, every pixel's response
/// vector `r` is rescaled by `ln(1 + |r|/0.03) / |r|`.
pub fn respond<S: Scalar>(
    bank: &FilterBank<S>,
    image: &Tensor<S>,
    weber: bool,
) -> Result<FeatureMapStack<S>> {
    let (h, w, c) = match *image.shape() {
        [h, w, c] => (h, w, c),
        _ => {
            return Err(Error::invalid(format!(
                "image must be H×W×C, got {:?}",
                image.shape()
            )))
        }
    };
    if bank.is_empty() {
        return Err(Error::invalid("empty filter bank"));
    }
    let dims = crate::tensor::conv_dims(h, w, c, bank.kernels())?;
    let mut data = kernels::conv2d_same(image.data(), bank.kernels().data(), dims);
    let l = dims.out_channels();
    if weber {
        let k = S::of(WEBER_CONSTANT);
        for px in data.chunks_mut(l) {
            let norm = px.iter().map(|&v| v * v).sum::<S>().sqrt();
            if norm > S::zero() {
                let f = (S::one() + norm / k).ln() / norm;
                px.iter_mut().for_each(|v| *v *= f);
            }
        }
    }
    let maps = Tensor::new([h, w, l], data)?;
    let layers = bank
        .kind_layers(c)
        .into_iter()
        .map(|(_, idx)| idx)
        .collect();
    Ok(FeatureMapStack { maps, layers })
}

/// Non-differentiable [`normalize_image`].
pub fn normalized<S: Scalar>(image: &Tensor<S>) -> Result<Tensor<S>> {
    let mut g = Graph::new();
    let x = g.constant(image.clone());
    let y = normalize_image(&mut g, x)?;
    Ok(g.value(y).clone())
}

fn gauss1d(sigma: f64, x: f64, order: u8) -> f64 {
    let var = sigma * sigma;
    let g = (-x * x / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
    match order {
        0 => g,
        1 => -g * x / var,
        _ => g * (x * x - var) / (var * var),
    }
}

fn grid(support: usize) -> impl Iterator<Item = (f64, f64)> {
    let h = (support / 2) as f64;
    (0..support).flat_map(move |r| (0..support).map(move |c| (c as f64 - h, r as f64 - h)))
}

/// Elongated Gaussian derivative: `order`-th derivative across the bar,
/// Gaussian with `3σ` along it, rotated by `theta`.
pub(crate) fn oriented_kernel(support: usize, sigma: f64, theta: f64, order: u8) -> Vec<f64> {
    let (s, c) = theta.sin_cos();
    grid(support)
        .map(|(x, y)| {
            let u = c * x - s * y;
            let v = s * x + c * y;
            gauss1d(ELONGATION * sigma, u, 0) * gauss1d(sigma, v, order)
        })
        .collect()
}

fn log_kernel(support: usize, sigma: f64) -> Vec<f64> {
    let var = sigma * sigma;
    grid(support)
        .map(|(x, y)| {
            let r2 = x * x + y * y;
            (r2 - 2.0 * var) / (var * var) * (-r2 / (2.0 * var)).exp()
        })
        .collect()
}

fn gaussian_kernel(support: usize, sigma: f64) -> Vec<f64> {
    let var = sigma * sigma;
    let raw: Vec<f64> = grid(support)
        .map(|(x, y)| (-(x * x + y * y) / (2.0 * var)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

fn zero_mean_l1(mut k: Vec<f64>) -> Vec<f64> {
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= mean);
    let l1: f64 = k.iter().map(|v| v.abs()).sum();
    k.iter_mut().for_each(|v| *v /= l1);
    k
}
