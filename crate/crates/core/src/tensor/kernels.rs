//! Raw numeric loops shared by the graph ops and the non-differentiable paths.

use crate::scalar::Scalar;

/// Mirror an out-of-range coordinate back into `0..n` without repeating the
/// edge sample (`-1 -> 1`, `n -> n - 2`). Periodic, so any offset is valid.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Inner product with four interleaved partial sums so the loop vectorizes.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = [S::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = S::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `c[m×n] = a[m×k] · b[k×n]`.
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `da[m×k] += dc[m×n] · bᵀ`.
pub fn matmul_grad_lhs<S: Scalar>(da: &mut [S], dc: &[S], b: &[S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            da[i * k + p] += dot(drow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `db[k×n] += aᵀ · dc[m×n]`.
pub fn matmul_grad_rhs<S: Scalar>(db: &mut [S], a: &[S], dc: &[S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (d, &g) in dbrow.iter_mut().zip(drow) {
                *d += av * g;
            }
        }
    }
}

/// `db[k×n] += Σ aᵢᵀ · dcᵢ` over several products sharing `b`, one row of
/// `db` at a time so it stays in cache. Each term is `(a, dc)` with `a` of
/// shape `m×k` and `dc` of shape `m×n` for that term's own `m`.
pub fn matmul_grad_rhs_many<S: Scalar>(db: &mut [S], terms: &[(&[S], &[S])], k: usize, n: usize) {
    for p in 0..k {
        let dbrow = &mut db[p * n..(p + 1) * n];
        for &(a, dc) in terms {
            for i in 0..a.len() / k {
                let av = a[i * k + p];
                if av == S::zero() {
                    continue;
                }
                for (d, &g) in dbrow.iter_mut().zip(&dc[i * n..(i + 1) * n]) {
                    *d += av * g;
                }
            }
        }
    }
}

/// Geometry of a "same" correlation of an `H×W×C` image with `K` square kernels.
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernels: usize,
    pub support: usize,
}

impl ConvDims {
    pub fn out_channels(&self) -> usize {
        self.channels * self.kernels
    }

    fn reflect_tables(&self) -> (Vec<usize>, Vec<usize>) {
        let half = (self.support / 2) as isize;
        let rows = (-half..self.height as isize + half)
            .map(|i| reflect(i, self.height))
            .collect();
        let cols = (-half..self.width as isize + half)
            .map(|i| reflect(i, self.width))
            .collect();
        (rows, cols)
    }
}

/// Correlates every kernel with every channel, reflect-padded to keep `H×W`.
/// Output channel `c * K + k` holds kernel `k` applied to input channel `c`.
pub fn conv2d_same<S: Scalar>(image: &[S], kernels: &[S], d: ConvDims) -> Vec<S> {
    let (rows, cols) = d.reflect_tables();
    let (ks, w) = (d.support, d.width);
    let pw = cols.len();
    let oc = d.out_channels();
    let mut out = vec![S::zero(); d.height * w * oc];
    let mut plane = vec![S::zero(); rows.len() * pw];
    let mut acc = vec![S::zero(); w];
    for c in 0..d.channels {
        for (py, &iy) in rows.iter().enumerate() {
            for (px, &ix) in cols.iter().enumerate() {
                plane[py * pw + px] = image[(iy * w + ix) * d.channels + c];
            }
        }
        for k in 0..d.kernels {
            let ker = &kernels[k * ks * ks..(k + 1) * ks * ks];
            let o = c * d.kernels + k;
            for y in 0..d.height {
                acc.fill(S::zero());
                for dy in 0..ks {
                    let prow = &plane[(y + dy) * pw..(y + dy + 1) * pw];
                    for (dx, &kv) in ker[dy * ks..(dy + 1) * ks].iter().enumerate() {
                        for (a, &p) in acc.iter_mut().zip(&prow[dx..dx + w]) {
                            *a += kv * p;
                        }
                    }
                }
                for (x, &a) in acc.iter().enumerate() {
                    out[(y * w + x) * oc + o] = a;
                }
            }
        }
    }
    out
}

/// Adjoint of [`conv2d_same`] with respect to the image.
pub fn conv2d_same_grad<S: Scalar>(dimage: &mut [S], dout: &[S], kernels: &[S], d: ConvDims) {
    let (rows, cols) = d.reflect_tables();
    let (ks, w) = (d.support, d.width);
    let pw = cols.len();
    let oc = d.out_channels();
    let mut plane = vec![S::zero(); rows.len() * pw];
    let mut grow = vec![S::zero(); w];
    for c in 0..d.channels {
        plane.fill(S::zero());
        for k in 0..d.kernels {
            let ker = &kernels[k * ks * ks..(k + 1) * ks * ks];
            let o = c * d.kernels + k;
            for y in 0..d.height {
                for (x, g) in grow.iter_mut().enumerate() {
                    *g = dout[(y * w + x) * oc + o];
                }
                for dy in 0..ks {
                    let prow = &mut plane[(y + dy) * pw..(y + dy + 1) * pw];
                    for (dx, &kv) in ker[dy * ks..(dy + 1) * ks].iter().enumerate() {
                        for (p, &g) in prow[dx..dx + w].iter_mut().zip(&grow) {
                            *p += kv * g;
                        }
                    }
                }
            }
        }
        for (py, &iy) in rows.iter().enumerate() {
            for (px, &ix) in cols.iter().enumerate() {
                dimage[(iy * w + ix) * d.channels + c] += plane[py * pw + px];
            }
        }
    }
}

/// For a reduction over `axes`, returns the output shape and, for every input
/// element, the flat index of the output element it accumulates into.
pub fn reduction_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let keep: Vec<bool> = (0..shape.len()).map(|a| !axes.contains(&a)).collect();
    let mut out_shape: Vec<usize> = shape
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(&d, _)| d)
        .collect();
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..n {
        let mut o = 0;
        for (a, &i) in idx.iter().enumerate() {
            if keep[a] {
                o = o * shape[a] + i;
            }
        }
        map.push(o);
        for a in (0..shape.len()).rev() {
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    (out_shape, map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_skips_edge_sample() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(3, 1), 0);
        // Far offsets keep bouncing.
        assert_eq!(reflect(-9, 4), 3);
        for i in -40..40 {
            assert!(reflect(i, 4) < 4);
        }
    }

    #[test]
    fn reduction_map_axis_zero() {
        let (shape, map) = reduction_map(&[2, 3], &[0]);
        assert_eq!(shape, vec![3]);
        assert_eq!(map, vec![0, 1, 2, 0, 1, 2]);
        let (shape, map) = reduction_map(&[2, 3], &[0, 1]);
        assert_eq!(shape, vec![1]);
        assert!(map.iter().all(|&m| m == 0));
    }
}
