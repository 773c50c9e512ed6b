//! Reconstruction and latent losses. Every function records onto a
//! [`Graph`] and returns a single-element node.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filterbank::{
    normalize_image, respond_var, FeatureMapStack, FilterBank, DEFAULT_SUPPORT,
};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

pub const DEFAULT_LAMBDA_TV: f64 = 1e-3;
pub const DEFAULT_LAMBDA_COLOR: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    L2,
    /// Squared difference of filter-bank responses of standardized images.
    Fb,
    /// `Fb` plus total-variation and mean-colour regularizers.
    Fltbnk,
    Gram,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::CrossEntropy,
        LossKind::L2,
        LossKind::Fb,
        LossKind::Fltbnk,
        LossKind::Gram,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "ce",
            LossKind::L2 => "l2",
            LossKind::Fb => "fb",
            LossKind::Fltbnk => "fltbnk",
            LossKind::Gram => "gram",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" | "cross_entropy" | "cross-entropy" => Ok(LossKind::CrossEntropy),
            "l2" => Ok(LossKind::L2),
            "fb" => Ok(LossKind::Fb),
            "fltbnk" => Ok(LossKind::Fltbnk),
            "gram" | "vgg" => Ok(LossKind::Gram),
            other => Err(Error::invalid(format!("unknown loss '{other}'"))),
        }
    }
}

/// Which reconstruction loss to train with, and its weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub lambda_tv: f64,
    pub lambda_color: f64,
    /// One weight per feature layer of the Gram extractor.
    pub gram_weights: Vec<f64>,
    /// Support of the LM bank used by the filter-bank and Gram losses.
    pub filter_support: usize,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            lambda_tv: DEFAULT_LAMBDA_TV,
            lambda_color: DEFAULT_LAMBDA_COLOR,
            gram_weights: vec![0.25; 4],
            filter_support: DEFAULT_SUPPORT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_tv >= 0.0 && self.lambda_color >= 0.0) {
            return Err(Error::invalid("regularizer weights must be nonnegative"));
        }
        if self.gram_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("gram layer weights must be nonnegative"));
        }
        Ok(())
    }
}

/// A configured reconstruction loss, holding the filter bank it needs.
#[derive(Clone, Debug)]
pub struct ReconstructionLoss<S> {
    spec: LossSpec,
    bank: Option<FilterBank<S>>,
}

impl<S: Scalar> ReconstructionLoss<S> {
    pub fn new(spec: LossSpec) -> Result<Self> {
        spec.validate()?;
        let bank = match spec.kind {
            LossKind::Fb | LossKind::Fltbnk | LossKind::Gram => {
                Some(FilterBank::leung_malik(spec.filter_support)?)
            }
            _ => None,
        };
        if spec.kind == LossKind::Gram && spec.gram_weights.len() != 4 {
            return Err(Error::invalid(format!(
                "gram loss over LM kinds needs 4 layer weights, got {}",
                spec.gram_weights.len()
            )));
        }
        Ok(Self { spec, bank })
    }

    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }

    /// `L_c(target, output)`.
    pub fn evaluate(&self, g: &mut Graph<S>, target: Var, output: Var) -> Result<Var> {
        let bank = || {
            self.bank
                .as_ref()
                .expect("bank built for filter-bank losses")
        };
        match self.spec.kind {
            LossKind::L2 => l2_loss(g, target, output),
            LossKind::CrossEntropy => cross_entropy_loss(g, target, output),
            LossKind::Fb => fb_loss(g, target, output, bank()),
            LossKind::Fltbnk => fltbnk_loss(
                g,
                target,
                output,
                bank(),
                S::of(self.spec.lambda_tv),
                S::of(self.spec.lambda_color),
            ),
            LossKind::Gram => {
                let extractor = LmKindExtractor::new(bank().clone());
                let weights: Vec<S> = self.spec.gram_weights.iter().map(|&w| S::of(w)).collect();
                gram_loss(g, target, output, &extractor, &weights)
            }
        }
    }
}

fn same_shape<S: Scalar>(g: &Graph<S>, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(g.shape(a), g.shape(b)));
    }
    Ok(())
}

/// `Σ (y - ŷ)²`.
pub fn l2_loss<S: Scalar>(g: &mut Graph<S>, y: Var, y_hat: Var) -> Result<Var> {
    same_shape(g, y, y_hat)?;
    let d = g.sub(y, y_hat)?;
    let sq = g.square(d);
    Ok(g.sum(sq))
}

/// `-Σ [y ln ŷ + (1 - y) ln(1 - ŷ)]`, with the logarithms clamped at 1e-8.
pub fn cross_entropy_loss<S: Scalar>(g: &mut Graph<S>, y: Var, y_hat: Var) -> Result<Var> {
    same_shape(g, y, y_hat)?;
    for v in [y, y_hat] {
        if let Some(bad) = g
            .value(v)
            .data()
            .iter()
            .find(|&&x| !(x >= S::zero() && x <= S::one()))
        {
            return Err(Error::Domain(format!(
                "cross-entropy input {bad} outside [0, 1]"
            )));
        }
    }
    let log_p = g.log(y_hat);
    let q = g.affine(y_hat, -S::one(), S::one());
    let log_q = g.log(q);
    let y_c = g.affine(y, -S::one(), S::one());
    let a = g.mul(y, log_p)?;
    let b = g.mul(y_c, log_q)?;
    let s = g.add(a, b)?;
    let total = g.sum(s);
    Ok(g.neg(total))
}

/// Squared difference of LM responses of the standardized images.
pub fn fb_loss<S: Scalar>(
    g: &mut Graph<S>,
    y: Var,
    y_hat: Var,
    bank: &FilterBank<S>,
) -> Result<Var> {
    same_shape(g, y, y_hat)?;
    let ny = normalize_image(g, y)?;
    let ny_hat = normalize_image(g, y_hat)?;
    let ry = respond_var(g, bank, ny)?;
    let ry_hat = respond_var(g, bank, ny_hat)?;
    l2_loss(g, ry, ry_hat)
}

/// Squared total variation: `Σ (x[i+1,j] - x[i,j])² + (x[i,j+1] - x[i,j])²`
/// over all channels. Axes of length 1 contribute nothing.
pub fn tv_loss<S: Scalar>(g: &mut Graph<S>, image: Var) -> Result<Var> {
    let shape = g.shape(image).to_vec();
    if shape.len() != 3 {
        return Err(Error::invalid(format!(
            "tv_loss needs H×W×C, got {shape:?}"
        )));
    }
    let mut terms = Vec::new();
    for axis in [0, 1] {
        if shape[axis] >= 2 {
            let d = g.diff(image, axis)?;
            let sq = g.square(d);
            terms.push(g.sum(sq));
        }
    }
    if terms.is_empty() {
        let zero = g.scalar(S::zero());
        return Ok(zero);
    }
    g.add_all(&terms)
}

/// `Σ_c (mean_c(y) - mean_c(ŷ))²`.
pub fn color_reg<S: Scalar>(g: &mut Graph<S>, y: Var, y_hat: Var) -> Result<Var> {
    same_shape(g, y, y_hat)?;
    if g.shape(y).len() != 3 {
        return Err(Error::invalid(format!(
            "color_reg needs H×W×C, got {:?}",
            g.shape(y)
        )));
    }
    let my = g.reduce(crate::tensor::ReduceOp::Mean, y, Some(&[0, 1]))?;
    let my_hat = g.reduce(crate::tensor::ReduceOp::Mean, y_hat, Some(&[0, 1]))?;
    let d = g.sub(my, my_hat)?;
    let sq = g.square(d);
    Ok(g.sum(sq))
}

/// `fb + λ_tv·tv(ŷ) + λ_color·color_reg(y, ŷ)`.
pub fn fltbnk_loss<S: Scalar>(
    g: &mut Graph<S>,
    y: Var,
    y_hat: Var,
    bank: &FilterBank<S>,
    lambda_tv: S,
    lambda_color: S,
) -> Result<Var> {
    let fb = fb_loss(g, y, y_hat, bank)?;
    let tv = tv_loss(g, y_hat)?;
    let color = color_reg(g, y, y_hat)?;
    let tv = g.scale(tv, lambda_tv);
    let color = g.scale(color, lambda_color);
    g.add_all(&[fb, tv, color])
}

/// Gram matrix `F·Fᵀ` of an `N×M` feature matrix (one map per row).
pub fn gram<S: Scalar>(g: &mut Graph<S>, features: Var) -> Result<Var> {
    let ft = g.transpose(features)?;
    g.matmul(features, ft)
}

/// Gram matrix of one layer of a response stack.
pub fn gram_matrix<S: Scalar>(stack: &FeatureMapStack<S>, layer: usize) -> Result<Tensor<S>> {
    let channels = stack.layers.get(layer).ok_or_else(|| {
        Error::invalid(format!(
            "layer {layer} out of range ({} layers)",
            stack.layers.len()
        ))
    })?;
    let mut g = Graph::new();
    let maps = g.constant(stack.maps.clone());
    let f = g.gather_channels(maps, channels)?;
    let gm = gram(&mut g, f)?;
    Ok(g.value(gm).clone())
}

/// Produces per-layer feature matrices (`N_l × M_l`, one map per row).
pub trait FeatureExtractor<S: Scalar> {
    fn layer_count(&self) -> usize;
    fn extract(&self, g: &mut Graph<S>, image: Var) -> Result<Vec<Var>>;
}

/// LM responses on the raw image, split into one layer per kernel kind.
#[derive(Clone, Debug)]
pub struct LmKindExtractor<S> {
    bank: FilterBank<S>,
}

impl<S: Scalar> LmKindExtractor<S> {
    pub fn new(bank: FilterBank<S>) -> Self {
        Self { bank }
    }

    pub fn bank(&self) -> &FilterBank<S> {
        &self.bank
    }
}

impl<S: Scalar> FeatureExtractor<S> for LmKindExtractor<S> {
    fn layer_count(&self) -> usize {
        self.bank.kind_layers(1).len()
    }

    fn extract(&self, g: &mut Graph<S>, image: Var) -> Result<Vec<Var>> {
        let channels = match *g.shape(image) {
            [_, _, c] => c,
            _ => {
                return Err(Error::invalid(format!(
                    "extractor needs H×W×C, got {:?}",
                    g.shape(image)
                )))
            }
        };
        let maps = respond_var(g, &self.bank, image)?;
        self.bank
            .kind_layers(channels)
            .into_iter()
            .map(|(_, idx)| g.gather_channels(maps, &idx))
            .collect()
    }
}

/// `Σ_l w_l / (4 N_l² M_l²) · Σ_ij (G_ij - Ĝ_ij)²`.
pub fn gram_loss<S: Scalar>(
    g: &mut Graph<S>,
    x: Var,
    x_hat: Var,
    extractor: &dyn FeatureExtractor<S>,
    weights: &[S],
) -> Result<Var> {
    same_shape(g, x, x_hat)?;
    if weights.len() != extractor.layer_count() {
        return Err(Error::invalid(format!(
            "{} gram weights for {} layers",
            weights.len(),
            extractor.layer_count()
        )));
    }
    let fx = extractor.extract(g, x)?;
    let fx_hat = extractor.extract(g, x_hat)?;
    let mut terms = Vec::with_capacity(weights.len());
    for ((&a, &b), &w) in fx.iter().zip(&fx_hat).zip(weights) {
        terms.push(layer_distance(g, a, b, w)?);
    }
    g.add_all(&terms)
}

/// Weighted single-layer Gram distance between two `N×M` feature matrices.
pub fn layer_distance<S: Scalar>(g: &mut Graph<S>, f: Var, f_hat: Var, weight: S) -> Result<Var> {
    same_shape(g, f, f_hat)?;
    let (n, m) = match *g.shape(f) {
        [n, m] => (S::of_usize(n), S::of_usize(m)),
        _ => return Err(Error::invalid("feature matrices must be N×M")),
    };
    let ga = gram(g, f)?;
    let gb = gram(g, f_hat)?;
    let d = g.sub(ga, gb)?;
    let sq = g.square(d);
    let s = g.sum(sq);
    let norm = S::of(4.0) * n * n * m * m;
    Ok(g.scale(s, weight / norm))
}

/// Per-step posterior parameters and samples recorded during a forward pass.
#[derive(Clone, Debug, Default)]
pub struct LatentState {
    pub mu: Vec<Var>,
    pub sigma: Vec<Var>,
    pub z: Vec<Var>,
}

impl LatentState {
    pub fn steps(&self) -> usize {
        self.mu.len()
    }
}

/// Closed-form `KL(N(μ, σ²) ‖ N(0, 1))` summed over steps and latent
/// dimensions: `½ Σ (μ² + σ² - ln σ²) - T·d/2`.
pub fn kl_latent<S: Scalar>(g: &mut Graph<S>, latents: &LatentState) -> Result<Var> {
    if latents.mu.is_empty() || latents.mu.len() != latents.sigma.len() {
        return Err(Error::invalid(
            "latent state needs equal, nonzero numbers of μ and σ steps",
        ));
    }
    let mut per_step = Vec::with_capacity(latents.steps());
    let mut dims = 0usize;
    for (&mu, &sigma) in latents.mu.iter().zip(&latents.sigma) {
        same_shape(g, mu, sigma)?;
        if let Some(bad) = g.value(sigma).data().iter().find(|&&s| !(s > S::zero())) {
            return Err(Error::Domain(format!("σ must be positive, got {bad}")));
        }
        dims += g.value(mu).numel();
        let mu2 = g.square(mu);
        let s2 = g.square(sigma);
        let log_s = g.log(sigma);
        let log_s2 = g.scale(log_s, S::of(2.0));
        let a = g.add(mu2, s2)?;
        let b = g.sub(a, log_s2)?;
        per_step.push(g.sum(b));
    }
    let total = g.add_all(&per_step)?;
    Ok(g.affine(total, S::of(0.5), -S::of_usize(dims) * S::of(0.5)))
}

/// `L = L_c + L_z`.
pub fn total_loss<S: Scalar>(g: &mut Graph<S>, reconstruction: Var, latent: Var) -> Result<Var> {
    g.add(reconstruction, latent)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval2(
        y: &[f64],
        y_hat: &[f64],
        shape: &[usize],
        f: impl Fn(&mut Graph<f64>, Var, Var) -> Result<Var>,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_f64(shape, y).unwrap());
        let b = g.leaf(Tensor::from_f64(shape, y_hat).unwrap());
        let out = f(&mut g, a, b)?;
        Ok(g.value(out).item())
    }

    #[test]
    fn l2_simple_cases() {
        assert_eq!(eval2(&[1.0, 0.0], &[0.0, 0.0], &[2], l2_loss).unwrap(), 1.0);
        assert_eq!(eval2(&[0.3, 0.7], &[0.3, 0.7], &[2], l2_loss).unwrap(), 0.0);
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros([2]));
        let b = g.constant(Tensor::zeros([3]));
        assert!(matches!(
            l2_loss(&mut g, a, b),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn cross_entropy_cases() {
        let v = eval2(&[0.5], &[0.5], &[1], cross_entropy_loss).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        let v = eval2(&[1.0, 1.0], &[1.0, 1.0], &[2], cross_entropy_loss).unwrap();
        assert!(v.abs() <= 2.0 * 2e-8);
        let v = eval2(&[0.0], &[0.0], &[1], cross_entropy_loss).unwrap();
        assert!(v.abs() <= 2e-8);
        assert!(matches!(
            eval2(&[1.2], &[0.5], &[1], cross_entropy_loss),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn tv_cases() {
        let mut g = Graph::<f64>::new();
        let img = g.constant(Tensor::from_f64([2, 2, 1], &[0.0, 1.0, 0.0, 1.0]).unwrap());
        let tv = tv_loss(&mut g, img).unwrap();
        assert_eq!(g.value(tv).item(), 2.0);

        let row = g.constant(Tensor::from_f64([1, 3, 1], &[0.0, 1.0, 3.0]).unwrap());
        let tv = tv_loss(&mut g, row).unwrap();
        assert_eq!(g.value(tv).item(), 5.0);

        let c = g.constant(Tensor::full([4, 5, 3], 0.4));
        let tv = tv_loss(&mut g, c).unwrap();
        assert_eq!(g.value(tv).item(), 0.0);
    }

    #[test]
    fn color_reg_cases() {
        let y: Vec<f64> = (0..12)
            .map(|i| (i as f64 * 0.37).sin() * 0.3 + 0.5)
            .collect();
        let shifted: Vec<f64> = y.iter().map(|v| v + 0.1).collect();
        let v = eval2(&y, &shifted, &[2, 2, 3], color_reg).unwrap();
        assert!((v - 0.03).abs() < 1e-12);
        // Same per-channel means, different content.
        let a = [0.0, 1.0, 0.5, 1.0, 0.0, 0.5];
        let b = [1.0, 0.0, 0.5, 0.0, 1.0, 0.5];
        assert_eq!(eval2(&a, &b, &[1, 2, 3], color_reg).unwrap(), 0.0);
    }

    #[test]
    fn gram_small_cases() {
        let mut g = Graph::<f64>::new();
        let f = g.constant(Tensor::ones([1, 5]));
        let gm = gram(&mut g, f).unwrap();
        assert_eq!(g.value(gm).data(), &[5.0]);
        let f = g.constant(Tensor::from_f64([2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap());
        let gm = gram(&mut g, f).unwrap();
        assert_eq!(g.value(gm).data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn kl_cases() {
        let mut g = Graph::<f64>::new();
        let mut lat = LatentState::default();
        for _ in 0..3 {
            lat.mu.push(g.constant(Tensor::zeros([1, 4])));
            lat.sigma.push(g.constant(Tensor::ones([1, 4])));
        }
        let kl = kl_latent(&mut g, &lat).unwrap();
        assert_eq!(g.value(kl).item(), 0.0);

        let lat = LatentState {
            mu: vec![g.constant(Tensor::ones([1, 1]))],
            sigma: vec![g.constant(Tensor::ones([1, 1]))],
            z: vec![],
        };
        let kl = kl_latent(&mut g, &lat).unwrap();
        assert_eq!(g.value(kl).item(), 0.5);

        let lat = LatentState {
            mu: vec![g.constant(Tensor::ones([1, 1]))],
            sigma: vec![g.constant(Tensor::zeros([1, 1]))],
            z: vec![],
        };
        assert!(matches!(kl_latent(&mut g, &lat), Err(Error::Domain(_))));
    }

    #[test]
    fn total_is_plain_sum() {
        let mut g = Graph::<f64>::new();
        let a = g.scalar(1.5);
        let b = g.scalar(0.25);
        let t = total_loss(&mut g, a, b).unwrap();
        assert_eq!(g.value(t).item(), 1.75);
    }

    #[test]
    fn loss_kind_parsing() {
        for k in LossKind::ALL {
            assert_eq!(k.short_name().parse::<LossKind>().unwrap(), k);
        }
        assert!("vgg19".parse::<LossKind>().is_err());
    }
}
