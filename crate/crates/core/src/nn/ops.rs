//! Forward and backward kernels for the layer kinds of a model graph.
//!
//! Convolutions are 3×3 (zero padding 1) or 1×1, stride 1, lowered to GEMM
//! through an im2col buffer. Weight layouts:
//! conv `[c_out, c_in·k·k]`, transposed 2×2 conv `[c_out·4, c_in]`.

use alloc::vec;
use alloc::vec::Vec;

use super::real::{gemm, Mat, Real};
use super::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;

fn im2col3<T: Real>(x: &[T], c: usize, h: usize, w: usize, col: &mut [T]) {
    let plane = h * w;
    for ci in 0..c {
        let src = &x[ci * plane..(ci + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let r = (ci * 9 + ky * 3 + kx) * plane;
                let dst = &mut col[r..r + plane];
                for y in 0..h {
                    let row = &mut dst[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        row.fill(T::zero());
                        continue;
                    }
                    let s = &src[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            row[0] = T::zero();
                            row[1..].copy_from_slice(&s[..w - 1]);
                        }
                        1 => row.copy_from_slice(s),
                        _ => {
                            row[..w - 1].copy_from_slice(&s[1..]);
                            row[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

fn col2im3<T: Real>(col: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let plane = h * w;
    for ci in 0..c {
        let dst = &mut dx[ci * plane..(ci + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let r = (ci * 9 + ky * 3 + kx) * plane;
                let src = &col[r..r + plane];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let g = &src[y * w..(y + 1) * w];
                    let d = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for x in 1..w {
                                d[x - 1] += g[x];
                            }
                        }
                        1 => {
                            for x in 0..w {
                                d[x] += g[x];
                            }
                        }
                        _ => {
                            for x in 0..w - 1 {
                                d[x + 1] += g[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Convolution, stride 1, "same" output size.
pub(crate) fn conv_forward<T: Real>(x: &Tensor<T>, weight: &[T], bias: Option<&[T]>, c_out: usize, k: usize) -> Tensor<T> {
    let plane = x.plane();
    let kk = x.c * k * k;
    assert_eq!(weight.len(), c_out * kk);
    let mut y = Tensor::zeros(x.n, c_out, x.h, x.w);
    let mut col = if k == 3 { vec![T::zero(); kk * plane] } else { Vec::new() };
    for s in 0..x.n {
        let xs = x.sample(s);
        let ys = y.sample_mut(s);
        if let Some(b) = bias {
            for (co, &bv) in b.iter().enumerate() {
                ys[co * plane..(co + 1) * plane].fill(bv);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        let input = if k == 3 {
            im2col3(xs, x.c, x.h, x.w, &mut col);
            &col[..]
        } else {
            xs
        };
        gemm(Mat::new(weight, c_out, kk), Mat::new(input, kk, plane), beta, ys);
    }
    y
}

/// Accumulates weight/bias gradients and returns the input gradient when
/// `need_dx` is set.
pub(crate) fn conv_backward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    dy: &Tensor<T>,
    k: usize,
    dweight: &mut [T],
    dbias: Option<&mut [T]>,
    need_dx: bool,
) -> Option<Tensor<T>> {
    let plane = x.plane();
    let c_out = dy.c;
    let kk = x.c * k * k;
    let mut col = if k == 3 { vec![T::zero(); kk * plane] } else { Vec::new() };
    let mut dcol = if k == 3 && need_dx { vec![T::zero(); kk * plane] } else { Vec::new() };
    let mut dx = if need_dx { Some(Tensor::zeros(x.n, x.c, x.h, x.w)) } else { None };
    for s in 0..x.n {
        let xs = x.sample(s);
        let dys = dy.sample(s);
        let input = if k == 3 {
            im2col3(xs, x.c, x.h, x.w, &mut col);
            &col[..]
        } else {
            xs
        };
        gemm(Mat::new(dys, c_out, plane), Mat::new(input, kk, plane).t(), T::one(), dweight);
        if let Some(dx) = dx.as_mut() {
            if k == 3 {
                gemm(Mat::new(weight, c_out, kk).t(), Mat::new(dys, c_out, plane), T::zero(), &mut dcol);
                col2im3(&dcol, x.c, x.h, x.w, dx.sample_mut(s));
            } else {
                gemm(Mat::new(weight, c_out, kk).t(), Mat::new(dys, c_out, plane), T::zero(), dx.sample_mut(s));
            }
        }
    }
    if let Some(db) = dbias {
        for s in 0..dy.n {
            let dys = dy.sample(s);
            for co in 0..c_out {
                db[co] += dys[co * plane..(co + 1) * plane].iter().copied().sum::<T>();
            }
        }
    }
    dx
}

/// Normalisation state kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub batch_stats: bool,
}

/// Batch statistics of one training-mode normalisation call.
#[derive(Clone, Debug)]
pub(crate) struct BnStats<T> {
    pub mean: Vec<T>,
    pub var_unbiased: Vec<T>,
}

/// In-place batch normalisation. With `running = None` the batch statistics
/// are used and returned; otherwise the stored `(mean, var)` are applied.
pub(crate) fn bn_forward<T: Real>(
    x: &mut Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running: Option<(&[T], &[T])>,
) -> (BnCache<T>, Option<BnStats<T>>) {
    let plane = x.plane();
    let c = x.c;
    let m = x.n * plane;
    let eps = T::of(BN_EPS);
    let (mean, var, stats) = match running {
        Some((rm, rv)) => (rm.to_vec(), rv.to_vec(), None),
        None => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for s in 0..x.n {
                let d = x.sample(s);
                for ch in 0..c {
                    mean[ch] += d[ch * plane..(ch + 1) * plane].iter().copied().sum::<T>();
                }
            }
            let mf = T::of(m as f64);
            for v in &mut mean {
                *v /= mf;
            }
            for s in 0..x.n {
                let d = x.sample(s);
                for ch in 0..c {
                    let mu = mean[ch];
                    var[ch] += d[ch * plane..(ch + 1) * plane].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
                }
            }
            for v in &mut var {
                *v /= mf;
            }
            let unbiased = if m > 1 {
                var.iter().map(|&v| v * mf / T::of((m - 1) as f64)).collect()
            } else {
                var.clone()
            };
            let stats = BnStats { mean: mean.clone(), var_unbiased: unbiased };
            (mean, var, Some(stats))
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.data.len()];
    for s in 0..x.n {
        let off = s * c * plane;
        for ch in 0..c {
            let (mu, is, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            let r = off + ch * plane..off + (ch + 1) * plane;
            for (xv, xh) in x.data[r.clone()].iter_mut().zip(&mut xhat[r]) {
                let n = (*xv - mu) * is;
                *xh = n;
                *xv = g * n + b;
            }
        }
    }
    (BnCache { xhat, inv_std, batch_stats: stats.is_some() }, stats)
}

/// In-place: `dy` becomes the input gradient. Accumulates into `dgamma`,
/// `dbeta` when given.
pub(crate) fn bn_backward<T: Real>(
    dy: &mut Tensor<T>,
    cache: &BnCache<T>,
    gamma: &[T],
    grads: Option<(&mut [T], &mut [T])>,
) {
    let plane = dy.plane();
    let c = dy.c;
    let m = T::of((dy.n * plane) as f64);
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    for s in 0..dy.n {
        let off = s * c * plane;
        for ch in 0..c {
            let r = off + ch * plane..off + (ch + 1) * plane;
            for (&g, &xh) in dy.data[r.clone()].iter().zip(&cache.xhat[r]) {
                sum_dy[ch] += g;
                sum_dy_xhat[ch] += g * xh;
            }
        }
    }
    if let Some((dg, db)) = grads {
        for ch in 0..c {
            dg[ch] += sum_dy_xhat[ch];
            db[ch] += sum_dy[ch];
        }
    }
    for s in 0..dy.n {
        let off = s * c * plane;
        for ch in 0..c {
            let scale = gamma[ch] * cache.inv_std[ch];
            let r = off + ch * plane..off + (ch + 1) * plane;
            if cache.batch_stats {
                let (mdy, mdyx) = (sum_dy[ch] / m, sum_dy_xhat[ch] / m);
                for (g, &xh) in dy.data[r.clone()].iter_mut().zip(&cache.xhat[r]) {
                    *g = scale * (*g - mdy - xh * mdyx);
                }
            } else {
                for g in &mut dy.data[r] {
                    *g *= scale;
                }
            }
        }
    }
}

pub(crate) fn relu_inplace<T: Real>(x: &mut Tensor<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries where the activation output was not positive.
pub(crate) fn relu_mask<T: Real>(dy: &mut Tensor<T>, y: &Tensor<T>) {
    for (g, &v) in dy.data.iter_mut().zip(&y.data) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2×2 max pooling; returns the output and the winning offset per cell.
pub(crate) fn maxpool_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u8>) {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut y = Tensor::zeros(x.n, x.c, h2, w2);
    let mut arg = vec![0u8; y.data.len()];
    let mut o = 0;
    for s in 0..x.n {
        for c in 0..x.c {
            let base = (s * x.c + c) * x.h * x.w;
            for yy in 0..h2 {
                for xx in 0..w2 {
                    let mut best = 0u8;
                    let mut bv = x.data[base + (2 * yy) * x.w + 2 * xx];
                    for q in 1..4u8 {
                        let (dy, dx) = ((q / 2) as usize, (q % 2) as usize);
                        let v = x.data[base + (2 * yy + dy) * x.w + 2 * xx + dx];
                        if v > bv {
                            bv = v;
                            best = q;
                        }
                    }
                    y.data[o] = bv;
                    arg[o] = best;
                    o += 1;
                }
            }
        }
    }
    (y, arg)
}

pub(crate) fn maxpool_backward<T: Real>(dy: &Tensor<T>, arg: &[u8], h: usize, w: usize) -> Tensor<T> {
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    let mut o = 0;
    for s in 0..dy.n {
        for c in 0..dy.c {
            let base = (s * dy.c + c) * h * w;
            for yy in 0..dy.h {
                for xx in 0..dy.w {
                    let q = arg[o];
                    let (ddy, ddx) = ((q / 2) as usize, (q % 2) as usize);
                    dx.data[base + (2 * yy + ddy) * w + 2 * xx + ddx] += dy.data[o];
                    o += 1;
                }
            }
        }
    }
    dx
}

/// Transposed 2×2 convolution with stride 2 (learned ×2 upsampling).
pub(crate) fn upsample_forward<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], c_out: usize) -> Tensor<T> {
    let plane = x.plane();
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut y = Tensor::zeros(x.n, c_out, h2, w2);
    let mut pre = vec![T::zero(); c_out * 4 * plane];
    for s in 0..x.n {
        gemm(Mat::new(weight, c_out * 4, x.c), Mat::new(x.sample(s), x.c, plane), T::zero(), &mut pre);
        let ys = y.sample_mut(s);
        for co in 0..c_out {
            for q in 0..4 {
                let (dy, dx) = (q / 2, q % 2);
                let src = &pre[(co * 4 + q) * plane..(co * 4 + q + 1) * plane];
                for yy in 0..x.h {
                    for xx in 0..x.w {
                        ys[(co * h2 + 2 * yy + dy) * w2 + 2 * xx + dx] = src[yy * x.w + xx] + bias[co];
                    }
                }
            }
        }
    }
    y
}

pub(crate) fn upsample_backward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    dy: &Tensor<T>,
    dweight: &mut [T],
    dbias: &mut [T],
    need_dx: bool,
) -> Option<Tensor<T>> {
    let plane = x.plane();
    let c_out = dy.c;
    let (h2, w2) = (dy.h, dy.w);
    let mut dpre = vec![T::zero(); c_out * 4 * plane];
    let mut dx = if need_dx { Some(Tensor::zeros(x.n, x.c, x.h, x.w)) } else { None };
    for s in 0..x.n {
        let dys = dy.sample(s);
        for co in 0..c_out {
            for q in 0..4 {
                let (ddy, ddx) = (q / 2, q % 2);
                let dst = &mut dpre[(co * 4 + q) * plane..(co * 4 + q + 1) * plane];
                for yy in 0..x.h {
                    for xx in 0..x.w {
                        dst[yy * x.w + xx] = dys[(co * h2 + 2 * yy + ddy) * w2 + 2 * xx + ddx];
                    }
                }
            }
            dbias[co] += dys[co * h2 * w2..(co + 1) * h2 * w2].iter().copied().sum::<T>();
        }
        gemm(Mat::new(&dpre, c_out * 4, plane), Mat::new(x.sample(s), x.c, plane).t(), T::one(), dweight);
        if let Some(dx) = dx.as_mut() {
            gemm(Mat::new(weight, c_out * 4, x.c).t(), Mat::new(&dpre, c_out * 4, plane), T::zero(), dx.sample_mut(s));
        }
    }
    dx
}

pub(crate) fn concat_forward<T: Real>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let first = parts[0];
    let c: usize = parts.iter().map(|p| p.c).sum();
    let mut y = Tensor::zeros(first.n, c, first.h, first.w);
    for s in 0..first.n {
        let mut off = 0;
        let ys = y.sample_mut(s);
        for p in parts {
            let src = p.sample(s);
            ys[off..off + src.len()].copy_from_slice(src);
            off += src.len();
        }
    }
    y
}

pub(crate) fn concat_backward<T: Real>(dy: &Tensor<T>, channels: &[usize]) -> Vec<Tensor<T>> {
    let plane = dy.plane();
    let mut out: Vec<Tensor<T>> = channels.iter().map(|&c| Tensor::zeros(dy.n, c, dy.h, dy.w)).collect();
    for s in 0..dy.n {
        let src = dy.sample(s);
        let mut off = 0;
        for t in &mut out {
            let len = t.c * plane;
            t.sample_mut(s).copy_from_slice(&src[off..off + len]);
            off += len;
        }
    }
    out
}

pub(crate) fn abs_diff_forward<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| (x - y).abs()).collect();
    Tensor::from_vec(a.n, a.c, a.h, a.w, data)
}

pub(crate) fn abs_diff_backward<T: Real>(a: &Tensor<T>, b: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let mut da = Tensor::zeros(a.n, a.c, a.h, a.w);
    let mut db = Tensor::zeros(a.n, a.c, a.h, a.w);
    for i in 0..dy.data.len() {
        let d = a.data[i] - b.data[i];
        let s = if d > T::zero() {
            T::one()
        } else if d < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        da.data[i] = s * dy.data[i];
        db.data[i] = -s * dy.data[i];
    }
    (da, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv3(x: &Tensor<f64>, w: &[f64], c_out: usize) -> Tensor<f64> {
        let mut y = Tensor::zeros(x.n, c_out, x.h, x.w);
        for s in 0..x.n {
            for co in 0..c_out {
                for yy in 0..x.h {
                    for xx in 0..x.w {
                        let mut acc = 0.0;
                        for ci in 0..x.c {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = yy as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                        continue;
                                    }
                                    acc += w[((co * x.c + ci) * 3 + ky) * 3 + kx]
                                        * x.at(s, ci, sy as usize, sx as usize);
                                }
                            }
                        }
                        y.data[((s * c_out + co) * x.h + yy) * x.w + xx] = acc;
                    }
                }
            }
        }
        y
    }

    fn ramp(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 7919) % 23) as f64 * scale - 0.3).collect()
    }

    #[test]
    fn conv3_matches_direct_summation() {
        let x = Tensor::from_vec(2, 3, 4, 5, ramp(120, 0.1));
        let w = ramp(2 * 27, 0.05);
        let y = conv_forward(&x, &w, None, 2, 3);
        let r = naive_conv3(&x, &w, 2);
        for (a, b) in y.data.iter().zip(&r.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn check_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], g: &[f64]) {
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let h = 1e-6;
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "i={i} fd={fd} an={}", g[i]);
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let x = Tensor::from_vec(2, 2, 3, 4, ramp(48, 0.1));
        let w = ramp(3 * 18, 0.07);
        let b = [0.1, -0.2, 0.3];
        let probe = Tensor::from_vec(2, 3, 3, 4, ramp(72, 0.03));
        let loss = |x: &Tensor<f64>, w: &[f64]| -> f64 {
            let y = conv_forward(x, w, Some(&b), 3, 3);
            y.data.iter().zip(&probe.data).map(|(a, p)| a * p).sum()
        };
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; 3];
        let dx = conv_backward(&x, &w, &probe, 3, &mut dw, Some(&mut db), true).unwrap();
        check_grad(|wv| loss(&x, wv), &w, &dw);
        check_grad(|xv| loss(&Tensor::from_vec(2, 2, 3, 4, xv.to_vec()), &w), &x.data, &dx.data);
        let expect_db: Vec<f64> = (0..3)
            .map(|c| (0..2).map(|s| probe.sample(s)[c * 12..(c + 1) * 12].iter().sum::<f64>()).sum())
            .collect();
        for (a, e) in db.iter().zip(expect_db) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_and_bn_gradients_match_finite_differences() {
        let x = Tensor::from_vec(2, 3, 2, 2, ramp(24, 0.1));
        let w = ramp(2 * 4 * 3, 0.09);
        let bias = [0.05, -0.05];
        let probe = Tensor::from_vec(2, 2, 4, 4, ramp(64, 0.02));
        let gamma = [1.3, 0.7];
        let beta = [0.1, 0.2];
        // upsample followed by batch-norm in batch-statistics mode
        let loss = |x: &Tensor<f64>, w: &[f64]| -> f64 {
            let mut y = upsample_forward(x, w, &bias, 2);
            bn_forward(&mut y, &gamma, &beta, None);
            y.data.iter().zip(&probe.data).map(|(a, p)| a * p * a).sum()
        };
        let mut y = upsample_forward(&x, &w, &bias, 2);
        let (cache, _) = bn_forward(&mut y, &gamma, &beta, None);
        let mut dy = Tensor::from_vec(2, 2, 4, 4, y.data.iter().zip(&probe.data).map(|(a, p)| 2.0 * a * p).collect());
        let mut dg = vec![0.0; 2];
        let mut dbt = vec![0.0; 2];
        bn_backward(&mut dy, &cache, &gamma, Some((&mut dg, &mut dbt)));
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; 2];
        let dx = upsample_backward(&x, &w, &dy, &mut dw, &mut db, true).unwrap();
        check_grad(|wv| loss(&x, wv), &w, &dw);
        check_grad(|xv| loss(&Tensor::from_vec(2, 3, 2, 2, xv.to_vec()), &w), &x.data, &dx.data);
    }

    #[test]
    fn maxpool_routes_gradient_to_the_winner() {
        let x = Tensor::from_vec(1, 1, 2, 4, vec![1.0, 5.0, 0.0, 0.0, 2.0, 3.0, 0.0, 9.0]);
        let (y, arg) = maxpool_forward(&x);
        assert_eq!(y.data, vec![5.0, 9.0]);
        let dx = maxpool_backward(&Tensor::from_vec(1, 1, 1, 2, vec![1.0, 2.0]), &arg, 2, 4);
        assert_eq!(dx.data, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    }
}
