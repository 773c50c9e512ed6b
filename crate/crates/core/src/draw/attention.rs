//! Separable Gaussian-grid attention for reading glimpses and writing patches.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Var};

/// Filter matrices and intensity for one read or write window.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWindow {
    /// `N×W` horizontal filters.
    pub fx: Var,
    /// `N×H` vertical filters.
    pub fy: Var,
    /// Scalar intensity `γ`.
    pub gamma: Var,
    pub n: usize,
}

impl AttentionWindow {
    /// Window from explicit scalar nodes: grid centre `(gx, gy)` in pixel
    /// coordinates, stride, filter variance and intensity.
    #[allow(clippy::too_many_arguments)]
    pub fn explicit<S: Scalar>(
        g: &mut Graph<S>,
        gx: Var,
        gy: Var,
        stride: Var,
        variance: Var,
        gamma: Var,
        n: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let fx = g.attention_filter(gx, stride, variance, n, width)?;
        let fy = g.attention_filter(gy, stride, variance, n, height)?;
        Ok(Self { fx, fy, gamma, n })
    }

    /// Window from the 5 raw outputs `(g̃x, g̃y, ln σ², ln δ̃, ln γ)` of a
    /// linear head, as a `1×5` node.
    pub fn from_head<S: Scalar>(
        g: &mut Graph<S>,
        raw: Var,
        n: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let col = |g: &mut Graph<S>, i: usize| -> Result<Var> {
            let v = g.slice_cols(raw, i, 1)?;
            g.reshape(v, [1])
        };
        let (gx_raw, gy_raw, log_var, log_stride, log_gamma) =
            (col(g, 0)?, col(g, 1)?, col(g, 2)?, col(g, 3)?, col(g, 4)?);
        let half_w = S::of((width as f64 + 1.0) / 2.0);
        let half_h = S::of((height as f64 + 1.0) / 2.0);
        let gx = g.affine(gx_raw, half_w, half_w - S::one());
        let gy = g.affine(gy_raw, half_h, half_h - S::one());
        let variance = g.exp(log_var);
        let stride_unit = g.exp(log_stride);
        let span = S::of((height.max(width) as f64 - 1.0) / (n as f64 - 1.0));
        let stride = g.scale(stride_unit, span);
        let gamma = g.exp(log_gamma);
        Self::explicit(g, gx, gy, stride, variance, gamma, n, height, width)
    }

    /// `γ · F_y · I · F_xᵀ` for every channel of an `H×W×C` image, flattened
    /// channel by channel into a `1×(N²·C)` row.
    pub fn read<S: Scalar>(&self, g: &mut Graph<S>, image: Var) -> Result<Var> {
        let channels = g.shape(image)[2];
        let fxt = g.transpose(self.fx)?;
        let mut parts = Vec::with_capacity(channels);
        for c in 0..channels {
            let plane = g.channel(image, c)?;
            let a = g.matmul(self.fy, plane)?;
            let glimpse = g.matmul(a, fxt)?;
            let scaled = g.mul(glimpse, self.gamma)?;
            parts.push(g.reshape(scaled, [1, self.n * self.n])?);
        }
        g.concat_cols(&parts)
    }

    /// `(1/γ) · F_yᵀ · P · F_x` for a `1×(N²·C)` patch row, giving `H×W×C`.
    pub fn write<S: Scalar>(&self, g: &mut Graph<S>, patch: Var, channels: usize) -> Result<Var> {
        let nn = self.n * self.n;
        let fyt = g.transpose(self.fy)?;
        let mut planes = Vec::with_capacity(channels);
        for c in 0..channels {
            let p = g.slice_cols(patch, c * nn, nn)?;
            let p = g.reshape(p, [self.n, self.n])?;
            let a = g.matmul(fyt, p)?;
            planes.push(g.matmul(a, self.fx)?);
        }
        let img = g.stack_channels(&planes)?;
        g.div(img, self.gamma)
    }
}
