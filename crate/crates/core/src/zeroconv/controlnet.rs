use super::layers::{BlockCache, NetBlock, Param, ZeroConv};
use super::{Tensor, ZeroConvError};
use crate::raster::Raster;
use crate::rng::fnv1a;

/// Frozen block plus a trainable clone wired in through two zero convolutions:
///
/// `y_c = F(x; locked) + z2(F(x + z1(c); copy))`
#[derive(Debug, Clone, PartialEq)]
pub struct ControlNetBlock {
    pub locked: NetBlock,
    pub copy: NetBlock,
    /// Condition channels -> block channels.
    pub z1: ZeroConv,
    /// Block channels -> block channels.
    pub z2: ZeroConv,
}

/// Gradients of the block output with respect to its two inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrads {
    pub x: Tensor,
    pub c: Tensor,
}

/// Intermediates from [`ControlNetBlock::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    c: Tensor,
    locked: BlockCache,
    copy: BlockCache,
    copy_out: Tensor,
    /// Locked branch output `F(x; locked)`.
    pub base: Tensor,
}

/// Lock `locked`, clone it into the trainable copy and attach zeroed 1x1
/// convolutions taking `cond_channels` condition channels.
pub fn init_controlnet(mut locked: NetBlock, cond_channels: usize) -> ControlNetBlock {
    let channels = locked.channels();
    let mut copy = locked.clone();
    copy.set_locked(false);
    locked.set_locked(true);
    ControlNetBlock {
        locked,
        copy,
        z1: ZeroConv::new(channels, cond_channels),
        z2: ZeroConv::new(channels, channels),
    }
}

impl ControlNetBlock {
    pub fn channels(&self) -> usize {
        self.locked.channels()
    }

    pub fn cond_channels(&self) -> usize {
        self.z1.conv.in_channels()
    }

    fn check_inputs(&self, x: &Tensor, c: &Tensor) -> Result<(), ZeroConvError> {
        let (xc, xh, xw) = x.dims3()?;
        let (cc, ch, cw) = c.dims3()?;
        if xc != self.channels() || cc != self.cond_channels() || (xh, xw) != (ch, cw) {
            return Err(ZeroConvError::Shape(format!(
                "expected x [{}, H, W] and c [{}, H, W], got {:?} and {:?}",
                self.channels(),
                self.cond_channels(),
                x.shape(),
                c.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor, c: &Tensor) -> Result<Tensor, ZeroConvError> {
        Ok(self.forward_cached(x, c)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor, c: &Tensor) -> Result<(Tensor, ForwardCache), ZeroConvError> {
        self.check_inputs(x, c)?;
        let (base, locked) = self.locked.forward_cached(x)?;
        let injected = x.add(&self.z1.forward(c)?)?;
        let (copy_out, copy) = self.copy.forward_cached(&injected)?;
        let out = base.add(&self.z2.forward(&copy_out)?)?;
        Ok((out, ForwardCache { c: c.clone(), locked, copy, copy_out, base }))
    }

    /// Reverse pass for upstream gradient `grad_out`. Gradients of the copy
    /// and both zero convolutions are added into their accumulators; the
    /// locked block only propagates to `x`.
    pub fn backward_cached(
        &mut self,
        cache: &ForwardCache,
        grad_out: &Tensor,
    ) -> Result<InputGrads, ZeroConvError> {
        if grad_out.shape() != cache.base.shape() {
            return Err(ZeroConvError::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                grad_out.shape(),
                cache.base.shape()
            )));
        }
        let mut gx = self.locked.backward(&cache.locked, grad_out, false)?;
        let g_copy_out = self.z2.conv.backward(&cache.copy_out, grad_out, true)?;
        let g_injected = self.copy.backward(&cache.copy, &g_copy_out, true)?;
        let gc = self.z1.conv.backward(&cache.c, &g_injected, true)?;
        gx.add_assign(&g_injected)?;
        Ok(InputGrads { x: gx, c: gc })
    }

    pub fn backward(&mut self, x: &Tensor, c: &Tensor, grad_out: &Tensor) -> Result<InputGrads, ZeroConvError> {
        let (_, cache) = self.forward_cached(x, c)?;
        self.backward_cached(&cache, grad_out)
    }

    /// All parameters with dotted names, locked block first.
    pub fn params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (prefix, list) in [
            ("locked", self.locked.params()),
            ("copy", self.copy.params()),
            ("z1", self.z1.params()),
            ("z2", self.z2.params()),
        ] {
            out.extend(list.into_iter().map(|(n, p)| (format!("{prefix}.{n}"), p)));
        }
        out
    }

    /// Same order as [`ControlNetBlock::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.locked.params_mut();
        out.extend(self.copy.params_mut());
        out.extend(self.z1.params_mut());
        out.extend(self.z2.params_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Plain SGD on every unlocked parameter.
    pub fn sgd_step(&mut self, learning_rate: f64) {
        for p in self.params_mut().into_iter().filter(|p| !p.locked) {
            let Param { value, grad, .. } = p;
            value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .for_each(|(v, g)| *v -= learning_rate * g);
        }
    }

    /// Fingerprint of the locked block's exact bit patterns.
    pub fn locked_fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        for (_, p) in self.locked.params() {
            for v in p.value.data() {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        fnv1a(&bytes)
    }
}

/// Condition tensor from a control raster: channel `k` takes RGB channel
/// `k mod 3` scaled to `[0, 1]`, nearest-neighbour resampled to `height x width`.
pub fn raster_to_condition(
    control: &Raster,
    channels: usize,
    height: usize,
    width: usize,
) -> Result<Tensor, ZeroConvError> {
    let resized = control
        .resize_nearest(width as u32, height as u32)
        .map_err(|e| ZeroConvError::Shape(e.to_string()))?;
    let mut c = Tensor::zeros(&[channels, height, width]);
    let d = c.data_mut();
    for k in 0..channels {
        for y in 0..height {
            for x in 0..width {
                d[(k * height + y) * width + x] =
                    f64::from(resized.pixel(x as u32, y as u32)[k % 3]) / 255.0;
            }
        }
    }
    Ok(c)
}

/// Run the block on `x` conditioned on a control image.
pub fn infer(cb: &ControlNetBlock, x: &Tensor, control: &Raster) -> Result<Tensor, ZeroConvError> {
    let (_, h, w) = x.dims3()?;
    let c = raster_to_condition(control, cb.cond_channels(), h, w)?;
    cb.forward(x, &c)
}
