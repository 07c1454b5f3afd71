//! The micro U-Net model: parameter storage, seeded initialization,
//! cached forward pass and full hand-written backpropagation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{
    concat_channels, conv_backward, conv_forward, maxpool2_backward, maxpool2_forward,
    relu_backward, relu_forward, split_channels, upsample2_backward, upsample2_forward,
};
use super::{Scalar, Tensor, UNetConfig};
use crate::error::{Error, Result};

/// One convolution layer: weights `(out_c, in_c*k*k)` row-major, bias
/// per output channel, and gradient buffers of matching shape.
#[derive(Clone, Debug)]
pub struct Conv<S> {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    /// Kernel side (3 for the blocks, 1 for the head); padding is `k/2`.
    pub ksize: usize,
    pub w: Vec<S>,
    pub b: Vec<S>,
    pub dw: Vec<S>,
    pub db: Vec<S>,
}

impl<S: Scalar> Conv<S> {
    fn new(name: String, in_c: usize, out_c: usize, ksize: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_c * ksize * ksize;
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("std is finite and positive");
        let w = (0..out_c * fan_in).map(|_| S::from_f64(normal.sample(rng))).collect();
        Conv {
            name,
            in_c,
            out_c,
            ksize,
            w,
            b: vec![S::zero(); out_c],
            dw: vec![S::zero(); out_c * fan_in],
            db: vec![S::zero(); out_c],
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_c, self.in_c, self.ksize, self.ksize]
    }
}

/// Cached activations of one two-convolution block.
struct BlockCache<S> {
    /// Input fed to the first convolution.
    x: Tensor<S>,
    /// Output of the first ReLU (input of the second convolution).
    a0: Tensor<S>,
    /// Output of the second ReLU (block output).
    a1: Tensor<S>,
}

struct ForwardCache<S> {
    enc: Vec<BlockCache<S>>,
    pool_idx: Vec<Vec<u32>>,
    bottleneck: BlockCache<S>,
    /// Decoder caches indexed by level (0 = finest); `x` is the
    /// concatenated skip+upsampled tensor.
    dec: Vec<BlockCache<S>>,
}

/// Distance-to-nondifferentiability measurements from one forward pass
/// (see [`UNet::forward_probed`]). Central finite differences are only
/// trustworthy when both margins comfortably exceed the step size, since
/// a ReLU threshold or pooling argmax flip inside the probed interval
/// makes the loss locally non-smooth.
#[derive(Clone, Copy, Debug)]
pub struct SmoothnessProbe {
    /// Smallest |pre-activation| feeding any block ReLU.
    pub min_abs_pre: f64,
    /// Smallest top-two gap over pooling windows with an active maximum.
    /// Windows whose values are all clipped to zero are flat, not kinked,
    /// and are excluded.
    pub min_pool_gap: f64,
}

/// Minimum gap between the largest and second-largest value of each 2x2
/// pooling window whose maximum is positive.
fn min_pool_gap<S: Scalar>(t: &Tensor<S>) -> f64 {
    let [b, c, h, w] = t.shape();
    let mut min_gap = f64::INFINITY;
    for bi in 0..b {
        for ci in 0..c {
            for y in (0..h).step_by(2) {
                for x in (0..w).step_by(2) {
                    let mut top1 = f64::NEG_INFINITY;
                    let mut top2 = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = t.data[t.idx(bi, ci, y + dy, x + dx)].to_f64();
                            if v > top1 {
                                top2 = top1;
                                top1 = v;
                            } else if v > top2 {
                                top2 = v;
                            }
                        }
                    }
                    if top1 > 0.0 {
                        min_gap = min_gap.min(top1 - top2);
                    }
                }
            }
        }
    }
    min_gap
}

/// Encoder/decoder segmentation network with skip connections.
///
/// Layer order in `convs`: encoder blocks from fine to coarse (two
/// convolutions each), the bottleneck pair, decoder blocks from coarse
/// to fine, then the 1x1 classification head. Skip concatenation places
/// encoder features first, decoder features second.
pub struct UNet<S = f32> {
    pub cfg: UNetConfig,
    pub convs: Vec<Conv<S>>,
    cache: Option<ForwardCache<S>>,
    probe: Option<SmoothnessProbe>,
    scratch: Vec<S>,
    scratch2: Vec<S>,
}

impl<S: Scalar> UNet<S> {
    /// Builds a network with He-normal seeded weights and zero biases.
    pub fn new(cfg: UNetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut convs = Vec::new();
        let base = cfg.base_channels;
        let mut in_c = cfg.in_channels;
        for lvl in 0..cfg.levels {
            let out = base << lvl;
            convs.push(Conv::new(format!("enc{lvl}.conv0"), in_c, out, 3, &mut rng));
            convs.push(Conv::new(format!("enc{lvl}.conv1"), out, out, 3, &mut rng));
            in_c = out;
        }
        let bott = base << cfg.levels;
        convs.push(Conv::new("bottleneck.conv0".into(), in_c, bott, 3, &mut rng));
        convs.push(Conv::new("bottleneck.conv1".into(), bott, bott, 3, &mut rng));
        for lvl in (0..cfg.levels).rev() {
            let skip = base << lvl;
            let upper = base << (lvl + 1);
            convs.push(Conv::new(format!("dec{lvl}.conv0"), skip + upper, skip, 3, &mut rng));
            convs.push(Conv::new(format!("dec{lvl}.conv1"), skip, skip, 3, &mut rng));
        }
        convs.push(Conv::new("head".into(), base, cfg.out_classes, 1, &mut rng));
        Ok(UNet { cfg, convs, cache: None, probe: None, scratch: Vec::new(), scratch2: Vec::new() })
    }

    fn enc_conv(&self, lvl: usize, which: usize) -> usize {
        lvl * 2 + which
    }

    fn bott_conv(&self, which: usize) -> usize {
        self.cfg.levels * 2 + which
    }

    fn dec_conv(&self, lvl: usize, which: usize) -> usize {
        // Decoder blocks are stored coarse-to-fine after the bottleneck.
        self.cfg.levels * 2 + 2 + (self.cfg.levels - 1 - lvl) * 2 + which
    }

    fn head_conv(&self) -> usize {
        self.convs.len() - 1
    }

    /// Runs one two-convolution block, returning its cache.
    fn run_block(&mut self, first: usize, x: Tensor<S>) -> BlockCache<S> {
        let c0 = &self.convs[first];
        let y0 = conv_forward(&x, &c0.w, &c0.b, c0.out_c, c0.ksize, &mut self.scratch);
        self.note_pre_activations(&y0);
        let a0 = relu_forward(y0);
        let c1 = &self.convs[first + 1];
        let y1 = conv_forward(&a0, &c1.w, &c1.b, c1.out_c, c1.ksize, &mut self.scratch);
        self.note_pre_activations(&y1);
        let a1 = relu_forward(y1);
        BlockCache { x, a0, a1 }
    }

    fn note_pre_activations(&mut self, pre: &Tensor<S>) {
        if let Some(p) = &mut self.probe {
            for &v in &pre.data {
                p.min_abs_pre = p.min_abs_pre.min(v.to_f64().abs());
            }
        }
    }

    /// Backward through one block given d(block output); returns d(block input).
    fn block_backward(&mut self, first: usize, cache: &BlockCache<S>, mut d: Tensor<S>) -> Tensor<S> {
        relu_backward(&cache.a1, &mut d);
        let (w1, out1, k1) = {
            let c = &self.convs[first + 1];
            (c.w.clone(), c.out_c, c.ksize)
        };
        let mut d = {
            let (scratch, scratch2) = (&mut self.scratch, &mut self.scratch2);
            let c = &mut self.convs[first + 1];
            conv_backward(&cache.a0, &w1, out1, k1, &d, &mut c.dw, &mut c.db, scratch, scratch2)
        };
        relu_backward(&cache.a0, &mut d);
        let (w0, out0, k0) = {
            let c = &self.convs[first];
            (c.w.clone(), c.out_c, c.ksize)
        };
        let (scratch, scratch2) = (&mut self.scratch, &mut self.scratch2);
        let c = &mut self.convs[first];
        conv_backward(&cache.x, &w0, out0, k0, &d, &mut c.dw, &mut c.db, scratch, scratch2)
    }

    /// Forward pass producing per-pixel class logits of the input's
    /// spatial size. The activations are cached for [`UNet::backward`].
    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let [_, c, h, w] = x.shape();
        if c != self.cfg.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "expected {} input channels, got {c}",
                self.cfg.in_channels
            )));
        }
        let div = 1usize << self.cfg.levels;
        if h % div != 0 || w % div != 0 {
            return Err(Error::ShapeMismatch(format!(
                "spatial dims {h}x{w} not divisible by 2^levels = {div}"
            )));
        }
        let mut enc = Vec::with_capacity(self.cfg.levels);
        let mut pool_idx = Vec::with_capacity(self.cfg.levels);
        let mut cur = x.clone();
        for lvl in 0..self.cfg.levels {
            let first = self.enc_conv(lvl, 0);
            let block = self.run_block(first, cur);
            if let Some(p) = &mut self.probe {
                p.min_pool_gap = p.min_pool_gap.min(min_pool_gap(&block.a1));
            }
            let (pooled, idx) = maxpool2_forward(&block.a1);
            enc.push(block);
            pool_idx.push(idx);
            cur = pooled;
        }
        let bottleneck = self.run_block(self.bott_conv(0), cur);
        let mut feat = bottleneck.a1.clone();
        let mut dec: Vec<Option<BlockCache<S>>> =
            (0..self.cfg.levels).map(|_| None).collect();
        for lvl in (0..self.cfg.levels).rev() {
            let up = upsample2_forward(&feat);
            let cat = concat_channels(&enc[lvl].a1, &up);
            let block = self.run_block(self.dec_conv(lvl, 0), cat);
            feat = block.a1.clone();
            dec[lvl] = Some(block);
        }
        let dec: Vec<BlockCache<S>> = dec.into_iter().map(|b| b.expect("all levels run")).collect();
        let head = &self.convs[self.head_conv()];
        let logits = conv_forward(&feat, &head.w, &head.b, head.out_c, head.ksize, &mut self.scratch);
        self.cache = Some(ForwardCache { enc, pool_idx, bottleneck, dec });
        Ok(logits)
    }

    /// Forward pass that additionally measures the distance of every
    /// pre-activation from its ReLU threshold and of every pooling window
    /// from an argmax tie. The finite-difference gradient check uses the
    /// margins to confirm the operating point is smooth within the probe
    /// radius before trusting central differences.
    pub fn forward_probed(&mut self, x: &Tensor<S>) -> Result<(Tensor<S>, SmoothnessProbe)> {
        self.probe =
            Some(SmoothnessProbe { min_abs_pre: f64::INFINITY, min_pool_gap: f64::INFINITY });
        let logits = self.forward(x);
        let probe = self.probe.take().expect("probe installed above");
        Ok((logits?, probe))
    }

    /// Backpropagates a logit gradient through the cached forward pass,
    /// accumulating `dw`/`db` on every layer. Returns the input gradient.
    pub fn backward(&mut self, dlogits: &Tensor<S>) -> Result<Tensor<S>> {
        let cache = self.cache.take().ok_or(Error::MissingForward)?;
        // Head: input was dec[0].a1 (or the bottleneck output if levels==0,
        // which the config validator excludes).
        let head_in = &cache.dec[0].a1;
        let (wh, outh, kh) = {
            let c = &self.convs[self.head_conv()];
            (c.w.clone(), c.out_c, c.ksize)
        };
        let mut d = {
            let hc = self.head_conv();
            let (scratch, scratch2) = (&mut self.scratch, &mut self.scratch2);
            let c = &mut self.convs[hc];
            conv_backward(head_in, &wh, outh, kh, dlogits, &mut c.dw, &mut c.db, scratch, scratch2)
        };
        // Decoder, fine to coarse; collect skip gradients per level.
        let mut dskip = Vec::with_capacity(self.cfg.levels);
        for lvl in 0..self.cfg.levels {
            let first = self.dec_conv(lvl, 0);
            let dcat = self.block_backward(first, &cache.dec[lvl], d);
            let skip_c = cache.enc[lvl].a1.channels();
            let (ds, dup) = split_channels(&dcat, skip_c);
            dskip.push(ds);
            d = upsample2_backward(&dup);
        }
        // Bottleneck.
        d = self.block_backward(self.bott_conv(0), &cache.bottleneck, d);
        // Encoder, coarse to fine; pool backward then add the skip branch.
        for lvl in (0..self.cfg.levels).rev() {
            let in_shape = cache.enc[lvl].a1.shape();
            let mut da1 = maxpool2_backward(&cache.pool_idx[lvl], &d, in_shape);
            for (g, s) in da1.data.iter_mut().zip(&dskip[lvl].data) {
                *g = *g + *s;
            }
            d = self.block_backward(self.enc_conv(lvl, 0), &cache.enc[lvl], da1);
        }
        Ok(d)
    }

    /// Zeroes all parameter gradients (start of an optimizer step).
    pub fn zero_grads(&mut self) {
        for c in &mut self.convs {
            c.dw.iter_mut().for_each(|v| *v = S::zero());
            c.db.iter_mut().for_each(|v| *v = S::zero());
        }
    }

    /// Total parameter count (weights + biases).
    pub fn num_params(&self) -> usize {
        self.convs.iter().map(|c| c.w.len() + c.b.len()).sum()
    }

    /// Concatenates all parameters (per layer: weights then bias) into one
    /// flat vector, the serialization order of the weight blob.
    pub fn flat_weights(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.num_params());
        for c in &self.convs {
            out.extend_from_slice(&c.w);
            out.extend_from_slice(&c.b);
        }
        out
    }

    /// Restores parameters from a flat vector in [`UNet::flat_weights`] order.
    pub fn load_flat(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "weight blob has {} values, model needs {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for c in &mut self.convs {
            let nw = c.w.len();
            c.w.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = c.b.len();
            c.b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shape_matches_input_spatial_dims() {
        let cfg = UNetConfig { levels: 3, base_channels: 8, ..UNetConfig::default() };
        let mut net = UNet::<f32>::new(cfg).unwrap();
        let x = Tensor::zeros([1, 3, 64, 64]);
        let y = net.forward(&x).unwrap();
        assert_eq!(y.shape(), [1, 2, 64, 64]);
    }

    #[test]
    fn indivisible_input_rejected() {
        let mut net = UNet::<f32>::new(UNetConfig::default()).unwrap();
        let x = Tensor::zeros([1, 3, 60, 64]);
        assert!(matches!(net.forward(&x), Err(Error::ShapeMismatch(_))));
        let x = Tensor::zeros([1, 4, 64, 64]);
        assert!(matches!(net.forward(&x), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_weights_give_equal_logits() {
        let mut net = UNet::<f32>::new(UNetConfig::default()).unwrap();
        let zeros = vec![0.0f32; net.num_params()];
        net.load_flat(&zeros).unwrap();
        let x = Tensor::from_data([1, 3, 16, 16], (0..768).map(|i| i as f32 / 100.0).collect())
            .unwrap();
        let y = net.forward(&x).unwrap();
        for p in 0..256 {
            assert_eq!(y.data[p], y.data[256 + p]);
            // Softmax of equal logits is one half.
            let e0 = (y.data[p] as f64).exp();
            let p0 = e0 / (2.0 * e0);
            assert!((p0 - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_forward_is_bit_identical() {
        let cfg = UNetConfig { seed: 99, ..UNetConfig::default() };
        let x = Tensor::from_data(
            [2, 3, 16, 16],
            (0..2 * 3 * 256).map(|i| ((i * 31 + 7) % 101) as f32 / 50.0 - 1.0).collect(),
        )
        .unwrap();
        let mut a = UNet::<f32>::new(cfg).unwrap();
        let mut b = UNet::<f32>::new(cfg).unwrap();
        let ya = a.forward(&x).unwrap();
        let yb = b.forward(&x).unwrap();
        assert_eq!(ya.data, yb.data);
        assert_eq!(a.flat_weights(), b.flat_weights());
    }

    #[test]
    fn backward_without_forward_errors() {
        let mut net = UNet::<f32>::new(UNetConfig::default()).unwrap();
        let d = Tensor::zeros([1, 2, 16, 16]);
        assert!(matches!(net.backward(&d), Err(Error::MissingForward)));
    }

    #[test]
    fn zero_logit_gradient_yields_zero_parameter_gradients() {
        let mut net = UNet::<f64>::new(UNetConfig {
            levels: 2,
            base_channels: 4,
            seed: 5,
            ..UNetConfig::default()
        })
        .unwrap();
        let x = Tensor::from_data(
            [1, 3, 16, 16],
            (0..768).map(|i| ((i * 17 + 3) % 29) as f64 / 10.0 - 1.4).collect(),
        )
        .unwrap();
        net.forward(&x).unwrap();
        net.zero_grads();
        net.backward(&Tensor::zeros([1, 2, 16, 16])).unwrap();
        for c in &net.convs {
            assert!(c.dw.iter().all(|&g| g.abs() < 1e-8));
            assert!(c.db.iter().all(|&g| g.abs() < 1e-8));
        }
    }

    #[test]
    fn gradients_are_linear_in_the_logit_gradient() {
        let cfg =
            UNetConfig { levels: 2, base_channels: 4, seed: 6, ..UNetConfig::default() };
        let x = Tensor::from_data(
            [1, 3, 16, 16],
            (0..768).map(|i| ((i * 13 + 1) % 37) as f64 / 12.0 - 1.5).collect(),
        )
        .unwrap();
        let dl = Tensor::from_data(
            [1, 2, 16, 16],
            (0..512).map(|i| ((i * 7 + 2) % 23) as f64 / 9.0 - 1.2).collect(),
        )
        .unwrap();
        let mut dl2 = dl.clone();
        dl2.data.iter_mut().for_each(|v| *v *= 2.0);
        let mut net = UNet::<f64>::new(cfg).unwrap();
        net.forward(&x).unwrap();
        net.zero_grads();
        net.backward(&dl).unwrap();
        let g1: Vec<f64> = net.convs.iter().flat_map(|c| c.dw.iter().chain(&c.db).copied()).collect();
        net.forward(&x).unwrap();
        net.zero_grads();
        net.backward(&dl2).unwrap();
        let g2: Vec<f64> =
            net.convs.iter().flat_map(|c| c.dw.iter().chain(&c.db).copied()).collect();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn flat_weights_round_trip() {
        let net = UNet::<f32>::new(UNetConfig { seed: 3, ..UNetConfig::default() }).unwrap();
        let w = net.flat_weights();
        assert_eq!(w.len(), net.num_params());
        let mut other = UNet::<f32>::new(UNetConfig { seed: 4, ..UNetConfig::default() }).unwrap();
        assert_ne!(other.flat_weights(), w);
        other.load_flat(&w).unwrap();
        assert_eq!(other.flat_weights(), w);
        assert!(other.load_flat(&w[1..]).is_err());
    }
}
