//! Low-level layer kernels: im2col convolution, ReLU, 2x2 max-pooling,
//! nearest-neighbour upsampling and channel concatenation, each with its
//! hand-written backward pass.
//!
//! Convolutions lower to a single row-major GEMM per batch item:
//! `Y(out_c x HW) = W(out_c x C*K*K) * cols(C*K*K x HW)`. The backward
//! pass recomputes the column buffer from the cached layer input instead
//! of storing it, which keeps activation memory small.

use super::{Scalar, Tensor};

/// Row-major GEMM: `C(m x n) <- alpha * A(m x k) * B(k x n) + beta * C`.
fn mm_nn<S: Scalar>(m: usize, k: usize, n: usize, alpha: S, a: &[S], b: &[S], beta: S, c: &mut [S]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        S::gemm(
            m, k, n, alpha, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Row-major GEMM with B transposed: `C(m x n) <- alpha * A(m x k) * B(n x k)^T + beta * C`.
fn mm_nt<S: Scalar>(m: usize, k: usize, n: usize, alpha: S, a: &[S], b: &[S], beta: S, c: &mut [S]) {
    assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    unsafe {
        S::gemm(
            m, k, n, alpha, a.as_ptr(), k as isize, 1, b.as_ptr(), 1, k as isize, beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Row-major GEMM with A transposed: `C(m x n) <- alpha * A(k x m)^T * B(k x n) + beta * C`.
fn mm_tn<S: Scalar>(m: usize, k: usize, n: usize, alpha: S, a: &[S], b: &[S], beta: S, c: &mut [S]) {
    assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        S::gemm(
            m, k, n, alpha, a.as_ptr(), 1, m as isize, b.as_ptr(), n as isize, 1, beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Unfolds one `(c, h, w)` plane into a `(c*k*k) x (h*w)` column matrix
/// for a stride-1 convolution with `pad = k/2` zero padding.
pub(crate) fn im2col<S: Scalar>(
    x: &[S],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    cols: &mut [S],
) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    debug_assert_eq!(cols.len(), c * k * k * hw);
    let mut r = 0usize;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[r * hw..(r + 1) * hw];
                r += 1;
                let shift = kx as isize - pad;
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = S::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    if shift <= 0 {
                        let n0 = (-shift) as usize;
                        if n0 >= w {
                            dst.iter_mut().for_each(|v| *v = S::zero());
                            continue;
                        }
                        dst[..n0].iter_mut().for_each(|v| *v = S::zero());
                        dst[n0..].copy_from_slice(&src[..w - n0]);
                    } else {
                        let s = shift as usize;
                        if s >= w {
                            dst.iter_mut().for_each(|v| *v = S::zero());
                            continue;
                        }
                        dst[..w - s].copy_from_slice(&src[s..]);
                        dst[w - s..].iter_mut().for_each(|v| *v = S::zero());
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column-matrix gradient back onto the input plane
/// (exact transpose of [`im2col`]).
pub(crate) fn col2im_add<S: Scalar>(
    cols: &[S],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    dx: &mut [S],
) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    debug_assert_eq!(cols.len(), c * k * k * hw);
    let mut r = 0usize;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[r * hw..(r + 1) * hw];
                r += 1;
                let shift = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    if shift <= 0 {
                        let n0 = (-shift) as usize;
                        if n0 >= w {
                            continue;
                        }
                        for x in n0..w {
                            dst[x - n0] = dst[x - n0] + src[x];
                        }
                    } else {
                        let s = shift as usize;
                        if s >= w {
                            continue;
                        }
                        for x in 0..w - s {
                            dst[x + s] = dst[x + s] + src[x];
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1, same-padding convolution of a batched tensor.
///
/// `w` is `(out_c, in_c*k*k)` row-major, `bias` has `out_c` entries;
/// `scratch` is resized as needed and holds the column buffer.
pub(crate) fn conv_forward<S: Scalar>(
    x: &Tensor<S>,
    w: &[S],
    bias: &[S],
    out_c: usize,
    k: usize,
    scratch: &mut Vec<S>,
) -> Tensor<S> {
    let [b, c, h, wd] = x.shape();
    let hw = h * wd;
    let ckk = c * k * k;
    let mut y = Tensor::zeros([b, out_c, h, wd]);
    scratch.resize(ckk * hw, S::zero());
    for bi in 0..b {
        im2col(x.item(bi), c, h, wd, k, scratch);
        let yi = y.item_mut(bi);
        mm_nn(out_c, ckk, hw, S::one(), w, scratch, S::zero(), yi);
        for (o, &bv) in bias.iter().enumerate() {
            yi[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = *v + bv);
        }
    }
    y
}

/// Backward pass of [`conv_forward`].
///
/// Accumulates `dw`/`db` (callers zero them at the start of a step) and
/// returns the gradient with respect to the layer input.
pub(crate) fn conv_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &[S],
    out_c: usize,
    k: usize,
    dy: &Tensor<S>,
    dw: &mut [S],
    db: &mut [S],
    scratch: &mut Vec<S>,
    dcols: &mut Vec<S>,
) -> Tensor<S> {
    let [b, c, h, wd] = x.shape();
    let hw = h * wd;
    let ckk = c * k * k;
    debug_assert_eq!(dy.shape(), [b, out_c, h, wd]);
    let mut dx = Tensor::zeros([b, c, h, wd]);
    scratch.resize(ckk * hw, S::zero());
    dcols.resize(ckk * hw, S::zero());
    for bi in 0..b {
        let dyi = dy.item(bi);
        im2col(x.item(bi), c, h, wd, k, scratch);
        // dW += dY * cols^T
        mm_nt(out_c, hw, ckk, S::one(), dyi, scratch, S::one(), dw);
        // db += row sums of dY
        for (o, dbv) in db.iter_mut().enumerate() {
            let mut s = S::zero();
            for &v in &dyi[o * hw..(o + 1) * hw] {
                s = s + v;
            }
            *dbv = *dbv + s;
        }
        // dcols = W^T * dY, then fold back onto the input grid.
        mm_tn(ckk, out_c, hw, S::one(), w, dyi, S::zero(), dcols);
        col2im_add(dcols, c, h, wd, k, dx.item_mut(bi));
    }
    dx
}

/// In-place ReLU; returns the activated tensor.
pub(crate) fn relu_forward<S: Scalar>(mut x: Tensor<S>) -> Tensor<S> {
    x.data.iter_mut().for_each(|v| {
        if *v < S::zero() {
            *v = S::zero();
        }
    });
    x
}

/// ReLU backward using the stored activation (`a = max(0, pre)`).
pub(crate) fn relu_backward<S: Scalar>(a: &Tensor<S>, dy: &mut Tensor<S>) {
    debug_assert_eq!(a.shape(), dy.shape());
    for (g, &v) in dy.data.iter_mut().zip(&a.data) {
        if v <= S::zero() {
            *g = S::zero();
        }
    }
}

/// 2x2 max-pool with stride 2. Returns the pooled tensor and the flat
/// argmax index (within each item) for the backward scatter.
pub(crate) fn maxpool2_forward<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, Vec<u32>) {
    let [b, c, h, w] = x.shape();
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros([b, c, oh, ow]);
    let mut idx = vec![0u32; b * c * oh * ow];
    for bi in 0..b {
        let xi = x.item(bi);
        let yi = y.item_mut(bi);
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = ci * h * w + (oy * 2) * w + ox * 2;
                    let cand = [base, base + 1, base + w, base + w + 1];
                    let mut best = cand[0];
                    let mut bv = xi[cand[0]];
                    for &cd in &cand[1..] {
                        if xi[cd] > bv {
                            bv = xi[cd];
                            best = cd;
                        }
                    }
                    let o = ci * oh * ow + oy * ow + ox;
                    yi[o] = bv;
                    idx[bi * c * oh * ow + o] = best as u32;
                }
            }
        }
    }
    (y, idx)
}

/// Scatters pooled gradients back to the argmax positions.
pub(crate) fn maxpool2_backward<S: Scalar>(
    idx: &[u32],
    dy: &Tensor<S>,
    in_shape: [usize; 4],
) -> Tensor<S> {
    let [b, c, h, w] = in_shape;
    let (oh, ow) = (h / 2, w / 2);
    debug_assert_eq!(dy.shape(), [b, c, oh, ow]);
    let mut dx = Tensor::zeros(in_shape);
    for bi in 0..b {
        let dyi = dy.item(bi);
        let dxi = dx.item_mut(bi);
        let ibase = bi * c * oh * ow;
        for (o, &g) in dyi.iter().enumerate() {
            let t = idx[ibase + o] as usize;
            dxi[t] = dxi[t] + g;
        }
    }
    dx
}

/// Nearest-neighbour 2x upsampling.
pub(crate) fn upsample2_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let [b, c, h, w] = x.shape();
    let mut y = Tensor::zeros([b, c, h * 2, w * 2]);
    for bi in 0..b {
        let xi = x.item(bi);
        let yi = y.item_mut(bi);
        for ci in 0..c {
            for oy in 0..h * 2 {
                let src_row = ci * h * w + (oy / 2) * w;
                let dst_row = ci * 4 * h * w + oy * 2 * w;
                for ox in 0..w * 2 {
                    yi[dst_row + ox] = xi[src_row + ox / 2];
                }
            }
        }
    }
    y
}

/// Backward of nearest upsampling: each source pixel collects its 2x2 fan-out.
pub(crate) fn upsample2_backward<S: Scalar>(dy: &Tensor<S>) -> Tensor<S> {
    let [b, c, h2, w2] = dy.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros([b, c, h, w]);
    for bi in 0..b {
        let dyi = dy.item(bi);
        let dxi = dx.item_mut(bi);
        for ci in 0..c {
            for oy in 0..h2 {
                let src_row = ci * h2 * w2 + oy * w2;
                let dst_row = ci * h * w + (oy / 2) * w;
                for ox in 0..w2 {
                    let d = dst_row + ox / 2;
                    dxi[d] = dxi[d] + dyi[src_row + ox];
                }
            }
        }
    }
    dx
}

/// Concatenates two tensors along channels; `a` (encoder skip) first.
pub(crate) fn concat_channels<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let [ba, ca, h, w] = a.shape();
    let [bb, cb, hb, wb] = b.shape();
    debug_assert_eq!((ba, h, w), (bb, hb, wb));
    let mut y = Tensor::zeros([ba, ca + cb, h, w]);
    let plane = h * w;
    for bi in 0..ba {
        let yi = y.item_mut(bi);
        yi[..ca * plane].copy_from_slice(a.item(bi));
        yi[ca * plane..].copy_from_slice(b.item(bi));
    }
    y
}

/// Splits a concatenated gradient back into the two channel groups.
pub(crate) fn split_channels<S: Scalar>(dy: &Tensor<S>, ca: usize) -> (Tensor<S>, Tensor<S>) {
    let [b, c, h, w] = dy.shape();
    debug_assert!(ca < c);
    let cb = c - ca;
    let mut da = Tensor::zeros([b, ca, h, w]);
    let mut db = Tensor::zeros([b, cb, h, w]);
    let plane = h * w;
    for bi in 0..b {
        let dyi = dy.item(bi);
        da.item_mut(bi).copy_from_slice(&dyi[..ca * plane]);
        db.item_mut(bi).copy_from_slice(&dyi[ca * plane..]);
    }
    (da, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(
        x: &Tensor<f64>,
        w: &[f64],
        b: &[f64],
        out_c: usize,
        k: usize,
    ) -> Tensor<f64> {
        let [bn, c, h, wd] = x.shape();
        let pad = (k / 2) as isize;
        let mut y = Tensor::zeros([bn, out_c, h, wd]);
        for bi in 0..bn {
            for o in 0..out_c {
                for yy in 0..h as isize {
                    for xx in 0..wd as isize {
                        let mut acc = b[o];
                        for ci in 0..c {
                            for ky in 0..k as isize {
                                for kx in 0..k as isize {
                                    let sy = yy + ky - pad;
                                    let sx = xx + kx - pad;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                        continue;
                                    }
                                    let wv = w[o * c * k * k
                                        + ci * k * k
                                        + ky as usize * k
                                        + kx as usize];
                                    acc += wv
                                        * x.data[x.idx(bi, ci, sy as usize, sx as usize)];
                                }
                            }
                        }
                        let i = y.idx(bi, o, yy as usize, xx as usize);
                        y.data[i] = acc;
                    }
                }
            }
        }
        y
    }

    fn filled(shape: [usize; 4], f: impl Fn(usize) -> f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_data(shape, (0..n).map(f).collect()).unwrap()
    }

    #[test]
    fn im2col_gemm_matches_naive_convolution() {
        let x = filled([2, 3, 5, 7], |i| ((i * 37 + 11) % 23) as f64 / 7.0 - 1.5);
        let out_c = 4;
        let k = 3;
        let w: Vec<f64> =
            (0..out_c * 3 * k * k).map(|i| ((i * 29 + 3) % 17) as f64 / 9.0 - 0.8).collect();
        let b: Vec<f64> = (0..out_c).map(|i| i as f64 * 0.1 - 0.2).collect();
        let mut scratch = Vec::new();
        let fast = conv_forward(&x, &w, &b, out_c, k, &mut scratch);
        let slow = naive_conv(&x, &w, &b, out_c, k);
        for (a, e) in fast.data.iter().zip(&slow.data) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn one_by_one_convolution_is_a_channel_mix() {
        let x = filled([1, 2, 2, 2], |i| i as f64);
        // w maps (c0,c1) -> c0 + 2*c1 ; bias 0.5
        let w = vec![1.0, 2.0];
        let b = vec![0.5];
        let mut scratch = Vec::new();
        let y = conv_forward(&x, &w, &b, 1, 1, &mut scratch);
        for p in 0..4 {
            let want = x.data[p] + 2.0 * x.data[4 + p] + 0.5;
            assert!((y.data[p] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let x = filled([1, 2, 4, 6], |i| ((i * 13 + 5) % 19) as f64 / 6.0 - 1.4);
        let out_c = 3;
        let k = 3;
        let w: Vec<f64> =
            (0..out_c * 2 * k * k).map(|i| ((i * 31 + 7) % 13) as f64 / 8.0 - 0.7).collect();
        let b: Vec<f64> = vec![0.1, -0.2, 0.05];
        let mut scratch = Vec::new();
        // Loss = sum(conv(x) .* m) for a fixed weighting m.
        let m: Vec<f64> = (0..out_c * 24).map(|i| ((i * 7 + 1) % 11) as f64 / 5.0 - 1.0).collect();
        let loss = |w: &[f64], b: &[f64], x: &Tensor<f64>| -> f64 {
            let mut scratch = Vec::new();
            let y = conv_forward(x, w, b, out_c, k, &mut scratch);
            y.data.iter().zip(&m).map(|(a, c)| a * c).sum()
        };
        let dy = Tensor::from_data([1, out_c, 4, 6], m.clone()).unwrap();
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; b.len()];
        let mut dcols = Vec::new();
        let dx = conv_backward(&x, &w, out_c, k, &dy, &mut dw, &mut db, &mut scratch, &mut dcols);
        let h = 1e-6;
        for i in 0..w.len() {
            let mut wp = w.clone();
            wp[i] += h;
            let mut wm = w.clone();
            wm[i] -= h;
            let num = (loss(&wp, &b, &x) - loss(&wm, &b, &x)) / (2.0 * h);
            assert!((num - dw[i]).abs() < 1e-6, "dw[{i}] {num} vs {}", dw[i]);
        }
        for i in 0..b.len() {
            let mut bp = b.clone();
            bp[i] += h;
            let mut bm = b.clone();
            bm[i] -= h;
            let num = (loss(&w, &bp, &x) - loss(&w, &bm, &x)) / (2.0 * h);
            assert!((num - db[i]).abs() < 1e-6, "db[{i}]");
        }
        for i in 0..x.numel() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let num = (loss(&w, &b, &xp) - loss(&w, &b, &xm)) / (2.0 * h);
            assert!((num - dx.data[i]).abs() < 1e-6, "dx[{i}]");
        }
    }

    #[test]
    fn maxpool_selects_maxima_and_routes_gradients() {
        let x = Tensor::from_data(
            [1, 1, 2, 4],
            vec![1.0, 3.0, 2.0, 2.0, 0.0, -1.0, 5.0, 2.0],
        )
        .unwrap();
        let (y, idx) = maxpool2_forward(&x);
        assert_eq!(y.data, vec![3.0, 5.0]);
        let dy = Tensor::from_data([1, 1, 1, 2], vec![10.0, 20.0]).unwrap();
        let dx = maxpool2_backward(&idx, &dy, [1, 1, 2, 4]);
        assert_eq!(dx.data, vec![0.0, 10.0, 0.0, 0.0, 0.0, 0.0, 20.0, 0.0]);
    }

    #[test]
    fn upsample_round_trip_adjoint() {
        // <up(x), y> must equal <x, up_backward(y)> (adjoint property).
        let x = filled([1, 2, 3, 2], |i| (i as f64).sin());
        let y = filled([1, 2, 6, 4], |i| (i as f64 * 0.7).cos());
        let up = upsample2_forward(&x);
        let down = upsample2_backward(&y);
        let lhs: f64 = up.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&down.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        // Spot-check nearest semantics.
        assert_eq!(up.data[0], x.data[0]);
        assert_eq!(up.data[1], x.data[0]);
        assert_eq!(up.data[4 + 1], x.data[0]);
    }

    #[test]
    fn concat_then_split_round_trips() {
        let a = filled([2, 3, 2, 2], |i| i as f64);
        let b = filled([2, 1, 2, 2], |i| 100.0 + i as f64);
        let y = concat_channels(&a, &b);
        assert_eq!(y.shape(), [2, 4, 2, 2]);
        // Encoder (first argument) occupies the leading channels.
        assert_eq!(y.data[y.idx(0, 0, 0, 0)], a.data[0]);
        assert_eq!(y.data[y.idx(0, 3, 0, 0)], b.data[0]);
        let (da, db) = split_channels(&y, 3);
        assert_eq!(da.data, a.data);
        assert_eq!(db.data, b.data);
    }
}
