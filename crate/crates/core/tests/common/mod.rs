#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texweave::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Naive "same" correlation with mirror padding, written against the
/// definition rather than the library's table-driven loops.
pub fn conv_oracle(img: &Tensor, kernels: &Tensor) -> Tensor {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let (nk, ks) = (kernels.shape()[0], kernels.shape()[1]);
    let half = (ks / 2) as i64;
    let mirror = |i: i64, n: usize| -> usize {
        let n = n as i64;
        if n == 1 {
            return 0;
        }
        let mut i = i;
        loop {
            if i < 0 {
                i = -i;
            } else if i >= n {
                i = 2 * (n - 1) - i;
            } else {
                return i as usize;
            }
        }
    };
    let mut out = Tensor::zeros([h, w, c * nk]);
    for ch in 0..c {
        for k in 0..nk {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for dy in -half..=half {
                        for dx in -half..=half {
                            let iy = mirror(y as i64 + dy, h);
                            let ix = mirror(x as i64 + dx, w);
                            let kv = kernels.at(&[k, (dy + half) as usize, (dx + half) as usize]);
                            acc += kv * img.at(&[iy, ix, ch]);
                        }
                    }
                    out.set(&[y, x, ch * nk + k], acc);
                }
            }
        }
    }
    out
}

/// Two-class synthetic textures in `[0, 1]`.
pub fn checkerboard(size: usize, period: usize) -> Tensor {
    Tensor::from_fn([size, size, 3], |i| {
        let (p, ch) = (i / 3, i % 3);
        let (r, c) = (p / size, p % size);
        let on = ((r / period) + (c / period)).is_multiple_of(2);
        let base = if on { 0.85 } else { 0.15 };
        base - 0.05 * ch as f64
    })
}

pub fn stripes(size: usize, period: usize) -> Tensor {
    Tensor::from_fn([size, size, 3], |i| {
        let (p, ch) = (i / 3, i % 3);
        let c = p % size;
        let phase = (c % period) as f64 / period as f64;
        let v = 0.5 + 0.4 * (2.0 * std::f64::consts::PI * phase).sin();
        v * (0.8 + 0.1 * ch as f64)
    })
}
