use rand::Rng;

use super::{Tensor, ZeroConvError};

/// A tensor of weights with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    /// Locked parameters never receive gradients or updates.
    pub locked: bool,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad, locked: false }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Pointwise nonlinearity between the two convolutions of a [`NetBlock`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Nonlinearity {
    /// `x * sigmoid(x)`
    #[default]
    Silu,
    Tanh,
    Identity,
}

impl Nonlinearity {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Silu => x / (1.0 + (-x).exp()),
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Nonlinearity::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Nonlinearity::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Nonlinearity::Silu => "silu",
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "silu" => Some(Nonlinearity::Silu),
            "tanh" => Some(Nonlinearity::Tanh),
            "identity" => Some(Nonlinearity::Identity),
            _ => None,
        }
    }
}

/// Stride-1 convolution with an odd square kernel and "same" zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `(out_channels, in_channels, k, k)`
    pub weight: Param,
    /// `(out_channels,)`
    pub bias: Param,
}

impl Conv2d {
    pub fn from_tensors(weight: Tensor, bias: Tensor) -> Result<Self, ZeroConvError> {
        match *weight.shape() {
            [o, _, k, k2] if k == k2 && k % 2 == 1 && bias.shape() == [o] => {}
            _ => {
                return Err(ZeroConvError::Shape(format!(
                    "conv weight {:?} / bias {:?} must be (O, I, k, k) with odd k and (O,)",
                    weight.shape(),
                    bias.shape()
                )))
            }
        }
        Ok(Conv2d { weight: Param::new(weight), bias: Param::new(bias) })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize) -> Self {
        Conv2d {
            weight: Param::new(Tensor::zeros(&[out_channels, in_channels, kernel, kernel])),
            bias: Param::new(Tensor::zeros(&[out_channels])),
        }
    }

    /// Weights `N(0, gain^2 / fan_in)`, biases `N(0, bias_std^2)`.
    pub fn random<R: Rng + ?Sized>(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        gain: f64,
        bias_std: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        Conv2d {
            weight: Param::new(Tensor::randn(
                &[out_channels, in_channels, kernel, kernel],
                gain / fan_in.sqrt(),
                rng,
            )),
            bias: Param::new(Tensor::randn(&[out_channels], bias_std, rng)),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize), ZeroConvError> {
        let (c, h, w) = x.dims3()?;
        if c != self.in_channels() {
            return Err(ZeroConvError::Shape(format!(
                "convolution expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        Ok((c, h, w))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ZeroConvError> {
        let (cin, h, w) = self.check_input(x)?;
        let (cout, k) = (self.out_channels(), self.kernel());
        let pad = (k / 2) as isize;
        let (wt, b, xd) = (self.weight.value.data(), self.bias.value.data(), x.data());
        let mut out = Tensor::zeros(&[cout, h, w]);
        let od = out.data_mut();
        for o in 0..cout {
            od[o * h * w..(o + 1) * h * w].fill(b[o]);
            for c in 0..cin {
                for u in 0..k {
                    for v in 0..k {
                        let wv = wt[((o * cin + c) * k + u) * k + v];
                        if wv == 0.0 {
                            continue;
                        }
                        let (du, dv) = (u as isize - pad, v as isize - pad);
                        for i in 0..h {
                            let si = i as isize + du;
                            if si < 0 || si >= h as isize {
                                continue;
                            }
                            for j in 0..w {
                                let sj = j as isize + dv;
                                if sj < 0 || sj >= w as isize {
                                    continue;
                                }
                                od[(o * h + i) * w + j] +=
                                    wv * xd[(c * h + si as usize) * w + sj as usize];
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Gradient with respect to the input. When `accumulate` is set the
    /// weight and bias gradients are added into their accumulators.
    pub fn backward(
        &mut self,
        x: &Tensor,
        grad_out: &Tensor,
        accumulate: bool,
    ) -> Result<Tensor, ZeroConvError> {
        let (cin, h, w) = self.check_input(x)?;
        let (cout, k) = (self.out_channels(), self.kernel());
        if grad_out.shape() != [cout, h, w] {
            return Err(ZeroConvError::Shape(format!(
                "upstream gradient {:?} does not match output [{cout}, {h}, {w}]",
                grad_out.shape()
            )));
        }
        let pad = (k / 2) as isize;
        let (xd, gd) = (x.data(), grad_out.data());
        let mut gx = Tensor::zeros(&[cin, h, w]);
        {
            let gxd = gx.data_mut();
            let wt = self.weight.value.data();
            for o in 0..cout {
                for c in 0..cin {
                    for u in 0..k {
                        for v in 0..k {
                            let wv = wt[((o * cin + c) * k + u) * k + v];
                            if wv == 0.0 {
                                continue;
                            }
                            let (du, dv) = (u as isize - pad, v as isize - pad);
                            for i in 0..h {
                                let si = i as isize + du;
                                if si < 0 || si >= h as isize {
                                    continue;
                                }
                                for j in 0..w {
                                    let sj = j as isize + dv;
                                    if sj < 0 || sj >= w as isize {
                                        continue;
                                    }
                                    gxd[(c * h + si as usize) * w + sj as usize] +=
                                        wv * gd[(o * h + i) * w + j];
                                }
                            }
                        }
                    }
                }
            }
        }
        if accumulate {
            let gb = self.bias.grad.data_mut();
            for o in 0..cout {
                gb[o] += gd[o * h * w..(o + 1) * h * w].iter().sum::<f64>();
            }
            let gw = self.weight.grad.data_mut();
            for o in 0..cout {
                for c in 0..cin {
                    for u in 0..k {
                        for v in 0..k {
                            let (du, dv) = (u as isize - pad, v as isize - pad);
                            let mut acc = 0.0;
                            for i in 0..h {
                                let si = i as isize + du;
                                if si < 0 || si >= h as isize {
                                    continue;
                                }
                                for j in 0..w {
                                    let sj = j as isize + dv;
                                    if sj < 0 || sj >= w as isize {
                                        continue;
                                    }
                                    acc += gd[(o * h + i) * w + j]
                                        * xd[(c * h + si as usize) * w + sj as usize];
                                }
                            }
                            gw[((o * cin + c) * k + u) * k + v] += acc;
                        }
                    }
                }
            }
        }
        Ok(gx)
    }

    fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// 1x1 convolution whose weights and bias start at exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroConv {
    pub conv: Conv2d,
}

impl ZeroConv {
    pub fn new(out_channels: usize, in_channels: usize) -> Self {
        ZeroConv { conv: Conv2d::zeros(out_channels, in_channels, 1) }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ZeroConvError> {
        self.conv.forward(x)
    }

    pub fn weight(&self) -> &Param {
        &self.conv.weight
    }

    pub fn bias(&self) -> &Param {
        &self.conv.bias
    }
}

/// Intermediates kept by [`NetBlock::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct BlockCache {
    input: Tensor,
    pre_activation: Tensor,
    hidden: Tensor,
}

/// conv3x3 -> nonlinearity -> conv3x3, channel count preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct NetBlock {
    pub conv1: Conv2d,
    pub activation: Nonlinearity,
    pub conv2: Conv2d,
}

impl NetBlock {
    pub fn new(conv1: Conv2d, activation: Nonlinearity, conv2: Conv2d) -> Result<Self, ZeroConvError> {
        let c = conv1.in_channels();
        if conv1.out_channels() != conv2.in_channels() || conv2.out_channels() != c {
            return Err(ZeroConvError::Shape(format!(
                "block convolutions must map {c} channels back to {c}, got {}->{} and {}->{}",
                conv1.in_channels(),
                conv1.out_channels(),
                conv2.in_channels(),
                conv2.out_channels()
            )));
        }
        Ok(NetBlock { conv1, activation, conv2 })
    }

    pub fn random<R: Rng + ?Sized>(channels: usize, activation: Nonlinearity, rng: &mut R) -> Self {
        NetBlock {
            conv1: Conv2d::random(channels, channels, 3, 1.5, 0.1, rng),
            activation,
            conv2: Conv2d::random(channels, channels, 3, 1.0, 0.1, rng),
        }
    }

    /// Both kernels are the identity center tap plus a random perturbation of
    /// gain `0.5`, the shape of a block that mostly refines its input.
    pub fn near_identity<R: Rng + ?Sized>(
        channels: usize,
        activation: Nonlinearity,
        rng: &mut R,
    ) -> Self {
        let mut conv = || {
            let mut c = Conv2d::random(channels, channels, 3, 0.5, 0.1, rng);
            let w = c.weight.value.data_mut();
            for o in 0..channels {
                w[(o * channels + o) * 9 + 4] += 1.0;
            }
            c
        };
        let conv1 = conv();
        let conv2 = conv();
        NetBlock { conv1, activation, conv2 }
    }

    pub fn channels(&self) -> usize {
        self.conv1.in_channels()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ZeroConvError> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, BlockCache), ZeroConvError> {
        let pre = self.conv1.forward(x)?;
        let mut hidden = pre.clone();
        hidden.data_mut().iter_mut().for_each(|v| *v = self.activation.apply(*v));
        let out = self.conv2.forward(&hidden)?;
        Ok((out, BlockCache { input: x.clone(), pre_activation: pre, hidden }))
    }

    pub fn backward(
        &mut self,
        cache: &BlockCache,
        grad_out: &Tensor,
        accumulate: bool,
    ) -> Result<Tensor, ZeroConvError> {
        let mut g = self.conv2.backward(&cache.hidden, grad_out, accumulate)?;
        for (gv, &p) in g.data_mut().iter_mut().zip(cache.pre_activation.data()) {
            *gv *= self.activation.derivative(p);
        }
        self.conv1.backward(&cache.input, &g, accumulate)
    }

    pub fn set_locked(&mut self, locked: bool) {
        for p in self.params_mut() {
            p.locked = locked;
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        let [w1, b1] = self.conv1.params();
        let [w2, b2] = self.conv2.params();
        vec![("conv1.weight", w1), ("conv1.bias", b1), ("conv2.weight", w2), ("conv2.bias", b2)]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let [w1, b1] = self.conv1.params_mut();
        let [w2, b2] = self.conv2.params_mut();
        vec![w1, b1, w2, b2]
    }
}

impl ZeroConv {
    pub(crate) fn params(&self) -> Vec<(&'static str, &Param)> {
        vec![("weight", &self.conv.weight), ("bias", &self.conv.bias)]
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param> {
        self.conv.params_mut().into()
    }
}
