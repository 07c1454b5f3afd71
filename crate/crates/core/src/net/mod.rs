//! From-scratch micro U-Net for the two segmentation tasks: hand
//! silhouette from RGB (task 1) and dye coverage from thermal
//! baseline/observation pairs (task 2).
//!
//! The network is a conventional encoder/decoder with skip connections:
//! per level two 3x3 convolutions with ReLU followed by 2x2 max-pooling,
//! a bottleneck block, then nearest-neighbour upsampling with channel
//! concatenation (encoder features first) and two more convolutions,
//! closed by a 1x1 projection to per-pixel class logits. Everything —
//! forward, backward, the Combo loss, RMSprop and the plateau learning
//! rate schedule — is implemented directly on flat buffers so training
//! is bitwise reproducible under a fixed seed.
//!
//! All kernels are generic over [`Scalar`] (`f32` for training, `f64`
//! for finite-difference gradient verification).

mod loss;
mod ops;
mod optim;
mod train;
mod unet;

pub use loss::{combo_loss, softmax_probs, LossValue};
pub use optim::{rmsprop_update, PlateauScheduler, RmsProp};
pub use train::{
    decode_logits, finite_difference_check, make_task2_input, predict_mask, train_folds,
    EpochRow, FoldAssignment, FoldModel, GradCheckReport, TrainSample,
};
pub use unet::{Conv, UNet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point element type the network kernels are generic over.
///
/// `f32` is the production type; `f64` exists so gradients can be checked
/// against central finite differences without drowning in rounding noise.
pub trait Scalar:
    num_traits::Float + Default + std::fmt::Debug + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Row-major strided matrix multiply: `C <- alpha*A*B + beta*C`.
    ///
    /// # Safety
    /// Pointers must reference buffers valid for the given shapes/strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Dense 4-D activation tensor in `(batch, channels, height, width)`
/// layout with an optional gradient buffer of the same shape.
#[derive(Clone, Debug)]
pub struct Tensor<S = f32> {
    shape: [usize; 4],
    pub data: Vec<S>,
    pub grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    /// Allocates a zero-filled tensor.
    pub fn zeros(shape: [usize; 4]) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape, data: vec![S::zero(); n], grad: None }
    }

    /// Wraps existing data, checking the length invariant.
    pub fn from_data(shape: [usize; 4], data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Flat index of `(b, c, y, x)`.
    pub fn idx(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    /// Allocates (or re-zeroes) the gradient buffer.
    pub fn ensure_grad(&mut self) -> &mut Vec<S> {
        let n = self.data.len();
        let g = self.grad.get_or_insert_with(|| vec![S::zero(); n]);
        g.iter_mut().for_each(|v| *v = S::zero());
        g
    }

    /// Per-item plane view: slice of one batch element.
    pub fn item(&self, b: usize) -> &[S] {
        let stride = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[b * stride..(b + 1) * stride]
    }

    /// Mutable per-item plane view.
    pub fn item_mut(&mut self, b: usize) -> &mut [S] {
        let stride = self.shape[1] * self.shape[2] * self.shape[3];
        &mut self.data[b * stride..(b + 1) * stride]
    }
}

/// Architecture hyperparameters for the micro U-Net.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default)]
pub struct UNetConfig {
    /// Encoder depth; each level halves the spatial resolution once.
    pub levels: usize,
    /// Channel count of the first encoder block; doubles per level.
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_classes: usize,
    /// Weight initialization seed.
    pub seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig { levels: 3, base_channels: 8, in_channels: 3, out_classes: 2, seed: 17 }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Domain("levels must be >= 1".into()));
        }
        if self.base_channels == 0 || self.in_channels == 0 || self.out_classes == 0 {
            return Err(Error::Domain("channel counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Training-loop hyperparameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    /// Squared-gradient smoothing constant (RMSprop rho).
    pub rms_smoothing: f64,
    pub eps: f64,
    /// Epochs without a strict validation-Dice improvement before decay.
    pub plateau_patience: u32,
    pub plateau_factor: f64,
    /// Weight of cross-entropy in the Combo loss; Dice gets `1 - alpha`.
    pub combo_alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            lr: 1e-5,
            weight_decay: 1e-8,
            momentum: 0.9,
            rms_smoothing: 0.99,
            eps: 1e-8,
            plateau_patience: 2,
            plateau_factor: 0.1,
            combo_alpha: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Domain("epochs and batch_size must be positive".into()));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("weight_decay", self.weight_decay),
            ("momentum", self.momentum),
            ("rms_smoothing", self.rms_smoothing),
            ("eps", self.eps),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!("{name} must be finite and non-negative")));
            }
        }
        if self.lr <= 0.0 || self.eps <= 0.0 {
            return Err(Error::Domain("lr and eps must be positive".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::Domain("plateau_factor must lie in (0,1)".into()));
        }
        if !(0.0..=1.0).contains(&self.combo_alpha) {
            return Err(Error::Domain("combo_alpha must lie in [0,1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_length_invariant_enforced() {
        assert!(Tensor::<f32>::from_data([1, 2, 3, 4], vec![0.0; 24]).is_ok());
        assert!(matches!(
            Tensor::<f32>::from_data([1, 2, 3, 4], vec![0.0; 23]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn tensor_indexing_is_row_major_bchw() {
        let t = Tensor::<f32>::zeros([2, 3, 4, 5]);
        assert_eq!(t.idx(0, 0, 0, 0), 0);
        assert_eq!(t.idx(0, 0, 0, 1), 1);
        assert_eq!(t.idx(0, 0, 1, 0), 5);
        assert_eq!(t.idx(0, 1, 0, 0), 20);
        assert_eq!(t.idx(1, 0, 0, 0), 60);
        assert_eq!(t.numel(), 120);
    }

    #[test]
    fn config_defaults_match_training_recipe() {
        let t = TrainConfig::default();
        assert_eq!(t.epochs, 30);
        assert_eq!(t.batch_size, 8);
        assert_eq!(t.lr, 1e-5);
        assert_eq!(t.weight_decay, 1e-8);
        assert_eq!(t.momentum, 0.9);
        assert_eq!(t.rms_smoothing, 0.99);
        assert_eq!(t.plateau_patience, 2);
        assert_eq!(t.plateau_factor, 0.1);
        assert_eq!(t.combo_alpha, 0.5);
        t.validate().unwrap();
        let u = UNetConfig::default();
        assert_eq!((u.levels, u.base_channels, u.in_channels, u.out_classes), (3, 8, 3, 2));
        u.validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut t = TrainConfig::default();
        t.plateau_factor = 1.0;
        assert!(t.validate().is_err());
        t = TrainConfig { lr: 0.0, ..TrainConfig::default() };
        assert!(t.validate().is_err());
        let u = UNetConfig { levels: 0, ..UNetConfig::default() };
        assert!(u.validate().is_err());
    }
}
