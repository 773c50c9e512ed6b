mod common;

use std::f64::consts::PI;

use texweave::filterbank::{normalized, respond, KernelKind, DEFAULT_SUPPORT, WEBER_CONSTANT};
use texweave::gradcheck::check;
use texweave::{FilterBank, Tensor};

use common::{conv_oracle, rng, uniform};

fn bank() -> FilterBank {
    FilterBank::leung_malik(DEFAULT_SUPPORT).unwrap()
}

#[test]
fn composition_and_normalization() {
    let b = bank();
    assert_eq!(b.len(), 48);
    let count = |k| b.kinds().iter().filter(|&&x| x == k).count();
    assert_eq!(count(KernelKind::Edge), 18);
    assert_eq!(count(KernelKind::Bar), 18);
    assert_eq!(count(KernelKind::Log), 8);
    assert_eq!(count(KernelKind::Gauss), 4);
    for i in 0..b.len() {
        let k = b.kernel(i);
        let l1: f64 = k.iter().map(|v| v.abs()).sum();
        assert!((l1 - 1.0).abs() <= 1e-10, "kernel {i}: L1 {l1}");
        if b.kinds()[i].is_zero_mean() {
            let s: f64 = k.iter().sum();
            assert!(s.abs() <= 1e-10, "kernel {i}: sum {s}");
        } else {
            // Nonnegative Gaussians: unit sum and unit L1 coincide.
            assert!((k.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        }
    }
}

#[test]
fn bad_support_rejected() {
    assert!(FilterBank::leung_malik(14).is_err());
    assert!(FilterBank::leung_malik(5).is_err());
    assert!(FilterBank::leung_malik(7).is_ok());
}

/// Whittaker-Shannon reconstruction of a sampled kernel at a real-valued
/// position. Kernels have decayed at the border, so the finite sum suffices.
fn sinc_resample(k: &[f64], n: usize, row: f64, col: f64) -> f64 {
    let sinc = |x: f64| {
        if x.abs() < 1e-12 {
            1.0
        } else {
            (PI * x).sin() / (PI * x)
        }
    };
    let wr: Vec<f64> = (0..n).map(|r| sinc(row - r as f64)).collect();
    let wc: Vec<f64> = (0..n).map(|c| sinc(col - c as f64)).collect();
    let mut acc = 0.0;
    for r in 0..n {
        if wr[r] == 0.0 {
            continue;
        }
        let line: f64 = (0..n).map(|c| wc[c] * k[r * n + c]).sum();
        acc += wr[r] * line;
    }
    acc
}

#[test]
fn oriented_kernels_are_rotations_of_the_first() {
    let n = 49;
    let b = FilterBank::leung_malik(n).unwrap();
    let info = b.info();
    let h = (n / 2) as f64;
    for kind in [KernelKind::Edge, KernelKind::Bar] {
        for group in info
            .iter()
            .filter(|i| i.kind == kind)
            .collect::<Vec<_>>()
            .chunks(6)
        {
            let base = b.kernel(group[0].index);
            for ki in &group[1..] {
                let theta = ki.orientation;
                let (s, c) = theta.sin_cos();
                let k = b.kernel(ki.index);
                let mut worst = 0.0f64;
                for r in 0..n {
                    for col in 0..n {
                        let (x, y) = (col as f64 - h, r as f64 - h);
                        let u = c * x - s * y;
                        let v = s * x + c * y;
                        let resampled = sinc_resample(base, n, v + h, u + h);
                        worst = worst.max((resampled - k[r * n + col]).abs());
                    }
                }
                // At σ = 1 the sampled derivatives are not band-limited (their
                // spectra at Nyquist are a few percent of the peak), so no
                // resampler reconstructs them to 1e-3. A quarter turn maps
                // the grid onto itself and must be exact.
                let tol = if (theta - PI / 2.0).abs() < 1e-12 {
                    1e-12
                } else if ki.scale >= 1.2 {
                    1e-3
                } else if kind == KernelKind::Edge {
                    5e-3
                } else {
                    1.5e-2
                };
                assert!(worst <= tol, "{kind:?} σ={} θ={theta}: {worst}", ki.scale);
            }
        }
    }
    let thetas: Vec<f64> = info.iter().take(6).map(|i| i.orientation).collect();
    for (o, t) in thetas.iter().enumerate() {
        assert!((t - PI * o as f64 / 6.0).abs() < 1e-15);
    }
}

#[test]
fn normalize_image_moments() {
    let c = normalized(&Tensor::full([4, 4, 3], 0.3)).unwrap();
    assert!(c.data().iter().all(|&v| v == 0.0));

    let mut r = rng(1);
    let x = uniform(&[7, 5, 3], 0.0, 1.0, &mut r);
    let y = normalized(&x).unwrap();
    let n = y.numel() as f64;
    let mean = y.sum() / n;
    let std = (y
        .data()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n)
        .sqrt();
    assert!(mean.abs() <= 1e-10);
    assert!((std - 1.0).abs() <= 1e-10);

    let z = normalized(&y).unwrap();
    assert!(z.max_abs_diff(&y) <= 1e-10);
}

#[test]
fn respond_examples() {
    let b = bank();
    let zero = respond(&b, &Tensor::zeros([9, 9, 3]), true).unwrap();
    assert!(zero.maps.data().iter().all(|&v| v == 0.0));
    assert_eq!(zero.len(), 48 * 3);
    assert_eq!(zero.map_size(), 81);

    let delta = Tensor::from_fn([1, 3, 3], |i| if i == 4 { 1.0 } else { 0.0 });
    let db = FilterBank::from_kernels(delta, None).unwrap();
    let mut r = rng(2);
    let img = uniform(&[5, 6, 3], 0.0, 1.0, &mut r);
    assert_eq!(respond(&db, &img, false).unwrap().maps, img);

    let ker = uniform(&[3, 5, 5], -1.0, 1.0, &mut r);
    let small = FilterBank::from_kernels(ker.clone(), None).unwrap();
    let img = uniform(&[9, 9, 3], 0.0, 1.0, &mut r);
    let got = respond(&small, &img, false).unwrap();
    assert!(got.maps.max_abs_diff(&conv_oracle(&img, &ker)) <= 1e-12);
}

#[test]
fn zero_mean_channels_kill_constants() {
    let b = bank();
    let stack = respond(&b, &Tensor::full([20, 20, 3], 0.6), false).unwrap();
    for c in 0..3 {
        for (k, kind) in b.kinds().iter().enumerate() {
            if kind.is_zero_mean() {
                let ch = c * 48 + k;
                for px in stack.maps.data().chunks(stack.len()) {
                    assert!(px[ch].abs() <= 1e-10);
                }
            }
        }
    }
}

#[test]
fn weber_rescaling_matches_formula() {
    let b = bank();
    let mut r = rng(3);
    let img = uniform(&[10, 10, 3], 0.0, 1.0, &mut r);
    let raw = respond(&b, &img, false).unwrap();
    let web = respond(&b, &img, true).unwrap();
    for (p, q) in raw.pixel_vectors().zip(web.pixel_vectors()) {
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let f = (1.0 + norm / WEBER_CONSTANT).ln() / norm;
        for (a, b) in p.iter().zip(q) {
            assert!((a * f - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn normalized_responses_ignore_affine_intensity() {
    let b = bank();
    let mut r = rng(4);
    let img = uniform(&[16, 16, 3], 0.1, 0.9, &mut r);
    let shifted = img.map(|v| 2.5 * v - 0.7);
    let a = respond(&b, &normalized(&img).unwrap(), false).unwrap();
    let c = respond(&b, &normalized(&shifted).unwrap(), false).unwrap();
    assert!(a.maps.max_abs_diff(&c.maps) <= 1e-10);
}

#[test]
fn differentiable_response_gradcheck() {
    let b = FilterBank::leung_malik(7).unwrap();
    for seed in 0..5 {
        let mut r = rng(20 + seed);
        let img = uniform(&[6, 6, 2], 0.0, 1.0, &mut r);
        let w = uniform(&[6, 6, 96], -1.0, 1.0, &mut r);
        let coords: Vec<(usize, usize)> = (0..72).step_by(5).map(|k| (0, k)).collect();
        let res = check(&[img], 1e-5, Some(&coords), |g, v| {
            let n = texweave::filterbank::normalize_image(g, v[0])?;
            let resp = texweave::filterbank::respond_var(g, &b, n)?;
            let wv = g.constant(w.clone());
            let p = g.mul(resp, wv)?;
            let s = g.sum(p);
            Ok(g.square(s))
        })
        .unwrap();
        assert!(res.passes(1e-4), "seed {seed}: {}", res.max_rel_error);
    }
}

#[test]
fn layers_by_kind_and_fingerprint() {
    let b = bank();
    let layers = b.kind_layers(3);
    let sizes: Vec<usize> = layers.iter().map(|(_, idx)| idx.len()).collect();
    assert_eq!(sizes, vec![54, 54, 24, 12]);
    assert_eq!(b.fingerprint(), bank().fingerprint());
    assert_eq!(b.fingerprint().len(), 16);
    assert_ne!(
        b.fingerprint(),
        FilterBank::leung_malik(17).unwrap().fingerprint()
    );
    let img = b.kernel_image(0);
    assert_eq!(img.shape(), &[15, 15, 1]);
    assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
}
