//! Optimizer and learning-rate schedule: RMSprop with momentum and
//! decoupled-from-nothing classic weight decay folded into the gradient,
//! plus a reduce-on-plateau schedule driven by validation Dice.

use super::{Scalar, UNet};
use crate::error::{Error, Result};
use crate::net::TrainConfig;

/// One RMSprop update on a flat parameter slice.
///
/// The update rule, applied element-wise:
/// `g <- grad + weight_decay * param`
/// `sq <- rho * sq + (1 - rho) * g^2`
/// `buf <- momentum * buf + g / (sqrt(sq) + eps)`
/// `param <- param - lr * buf`
#[allow(clippy::too_many_arguments)]
pub fn rmsprop_update<S: Scalar>(
    param: &mut [S],
    grad: &[S],
    sq: &mut [S],
    buf: &mut [S],
    lr: f64,
    weight_decay: f64,
    momentum: f64,
    rho: f64,
    eps: f64,
) -> Result<()> {
    debug_assert!(param.len() == grad.len() && grad.len() == sq.len() && sq.len() == buf.len());
    let (lr, wd) = (S::from_f64(lr), S::from_f64(weight_decay));
    let (mom, rho, eps) = (S::from_f64(momentum), S::from_f64(rho), S::from_f64(eps));
    let one = S::one();
    for i in 0..param.len() {
        if grad[i].is_nan() {
            return Err(Error::NanGradient);
        }
        let g = grad[i] + wd * param[i];
        sq[i] = rho * sq[i] + (one - rho) * g * g;
        buf[i] = mom * buf[i] + g / (sq[i].sqrt() + eps);
        param[i] = param[i] - lr * buf[i];
    }
    Ok(())
}

/// RMSprop state for a whole network: squared-gradient and momentum
/// buffers per parameter tensor, zero-initialized on construction.
pub struct RmsProp<S = f32> {
    cfg: TrainConfig,
    lr: f64,
    sq: Vec<Vec<S>>,
    buf: Vec<Vec<S>>,
}

impl<S: Scalar> RmsProp<S> {
    pub fn new(cfg: &TrainConfig, net: &UNet<S>) -> Self {
        let mut sq = Vec::new();
        let mut buf = Vec::new();
        for c in &net.convs {
            sq.push(vec![S::zero(); c.w.len()]);
            buf.push(vec![S::zero(); c.w.len()]);
            sq.push(vec![S::zero(); c.b.len()]);
            buf.push(vec![S::zero(); c.b.len()]);
        }
        RmsProp { cfg: *cfg, lr: cfg.lr, sq, buf }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Applies one update using the gradients accumulated on the network.
    pub fn step(&mut self, net: &mut UNet<S>) -> Result<()> {
        for (li, c) in net.convs.iter_mut().enumerate() {
            rmsprop_update(
                &mut c.w,
                &c.dw,
                &mut self.sq[2 * li],
                &mut self.buf[2 * li],
                self.lr,
                self.cfg.weight_decay,
                self.cfg.momentum,
                self.cfg.rms_smoothing,
                self.cfg.eps,
            )?;
            rmsprop_update(
                &mut c.b,
                &c.db,
                &mut self.sq[2 * li + 1],
                &mut self.buf[2 * li + 1],
                self.lr,
                self.cfg.weight_decay,
                self.cfg.momentum,
                self.cfg.rms_smoothing,
                self.cfg.eps,
            )?;
        }
        Ok(())
    }
}

/// Reduce-on-plateau schedule: when the tracked metric (validation Dice)
/// fails to strictly exceed its best value for `patience` consecutive
/// epochs, the learning rate is multiplied by `factor` and the counter
/// resets.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    lr: f64,
    patience: u32,
    factor: f64,
    best: f64,
    streak: u32,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: u32, factor: f64) -> Self {
        PlateauScheduler { lr, patience, factor, best: f64::NEG_INFINITY, streak: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feeds one epoch's validation metric; returns the learning rate to
    /// use from the next epoch onward.
    pub fn observe(&mut self, metric: f64) -> f64 {
        if metric > self.best {
            self.best = metric;
            self.streak = 0;
        } else {
            self.streak += 1;
            if self.streak >= self.patience {
                self.lr *= self.factor;
                self.streak = 0;
            }
        }
        self.lr
    }
}
