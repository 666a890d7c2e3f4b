//! Residual dense network (RDN) body shared by the interpolation and fusion
//! networks.
//!
//! Layout: shallow conv -> shallow conv -> `rdb_count` residual dense blocks
//! (each `convs_per_rdb` densely connected conv+ReLU layers at `growth_rate`
//! channels, a 1x1 local fusion and a local residual) -> 1x1 global fusion of
//! all block outputs -> conv -> global residual onto the first shallow
//! feature map.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tape, Tensor, Var};
use crate::tiling::ConvChainSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RdnShape {
    pub in_channels: usize,
    pub channels: usize,
    pub rdb_count: usize,
    pub convs_per_rdb: usize,
    pub growth_rate: usize,
    pub kernel: usize,
}

impl RdnShape {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.in_channels,
            self.channels,
            self.rdb_count,
            self.convs_per_rdb,
            self.growth_rate,
        ];
        if counts.contains(&0) {
            return Err(Error::invalid(format!("all RDN counts must be >= 1: {self:?}")));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::invalid(format!("kernel size {} is even", self.kernel)));
        }
        Ok(())
    }

    /// Kernel sizes along the longest path from input to output.
    pub fn longest_path(&self) -> ConvChainSpec {
        let k = self.kernel;
        let mut kernels = vec![k, k];
        for _ in 0..self.rdb_count {
            kernels.extend(std::iter::repeat(k).take(self.convs_per_rdb));
            kernels.push(1);
        }
        kernels.extend([1, k]);
        ConvChainSpec::new(kernels)
    }

    /// Appends the RDN parameters to `ps` under `prefix`, in forward order.
    pub fn register(&self, ps: &mut ParamSet, prefix: &str, rng: &mut ChaCha8Rng) {
        let (c, g, k) = (self.channels, self.growth_rate, self.kernel);
        conv_params(ps, &format!("{prefix}sfe1"), c, self.in_channels, k, rng);
        conv_params(ps, &format!("{prefix}sfe2"), c, c, k, rng);
        for d in 0..self.rdb_count {
            for l in 0..self.convs_per_rdb {
                conv_params(ps, &format!("{prefix}rdb{d}.conv{l}"), g, c + l * g, k, rng);
            }
            conv_params(ps, &format!("{prefix}rdb{d}.lff"), c, c + self.convs_per_rdb * g, 1, rng);
        }
        conv_params(ps, &format!("{prefix}gff1"), c, self.rdb_count * c, 1, rng);
        conv_params(ps, &format!("{prefix}gff2"), c, c, k, rng);
    }

    pub fn param_count(&self) -> usize {
        2 * (2 + self.rdb_count * (self.convs_per_rdb + 1) + 2)
    }

    pub fn forward<'t>(&self, params: &mut Cursor<'_, 't>, input: Var<'t>) -> Result<Var<'t>> {
        let tape = input.tape();
        let f1 = conv(input, params)?;
        let mut x = conv(f1, params)?;
        let mut block_outputs = Vec::with_capacity(self.rdb_count);
        for _ in 0..self.rdb_count {
            let mut feats = vec![x];
            for _ in 0..self.convs_per_rdb {
                let cat = tape.concat_channels(&feats)?;
                feats.push(conv(cat, params)?.relu());
            }
            let fused = conv(tape.concat_channels(&feats)?, params)?;
            x = fused.add(x)?;
            block_outputs.push(x);
        }
        let g = conv(tape.concat_channels(&block_outputs)?, params)?;
        let g = conv(g, params)?;
        g.add(f1)
    }
}

/// Hands out bound parameters in registration order.
pub struct Cursor<'a, 't> {
    vars: &'a [Var<'t>],
    pos: usize,
}

impl<'a, 't> Cursor<'a, 't> {
    pub fn new(vars: &'a [Var<'t>]) -> Self {
        Cursor { vars, pos: 0 }
    }

    pub fn next(&mut self) -> Result<Var<'t>> {
        let v = self
            .vars
            .get(self.pos)
            .copied()
            .ok_or_else(|| Error::invalid("parameter list exhausted"))?;
        self.pos += 1;
        Ok(v)
    }

    pub fn remaining(&self) -> usize {
        self.vars.len() - self.pos
    }
}

/// Convolution plus per-channel bias, consuming a (weight, bias) pair.
pub fn conv<'t>(x: Var<'t>, params: &mut Cursor<'_, 't>) -> Result<Var<'t>> {
    let w = params.next()?;
    let b = params.next()?;
    x.conv2d(w)?.bias_add(b)
}

/// Fully connected layer on a 1-D input, consuming a (weight, bias) pair.
pub fn linear<'t>(x: Var<'t>, params: &mut Cursor<'_, 't>) -> Result<Var<'t>> {
    let w = params.next()?;
    let b = params.next()?;
    w.matvec(x)?.add(b)
}

/// Uniform in `±1/sqrt(fan_in)`.
pub fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

pub fn conv_params(ps: &mut ParamSet, name: &str, c_out: usize, c_in: usize, k: usize, rng: &mut ChaCha8Rng) {
    ps.push(format!("{name}.w"), uniform_fan_in(&[c_out, c_in, k, k], c_in * k * k, rng));
    ps.push(format!("{name}.b"), Tensor::zeros(&[c_out]));
}

pub fn linear_params(ps: &mut ParamSet, name: &str, n_out: usize, n_in: usize, rng: &mut ChaCha8Rng) {
    ps.push(format!("{name}.w"), uniform_fan_in(&[n_out, n_in], n_in, rng));
    ps.push(format!("{name}.b"), Tensor::zeros(&[n_out]));
}

/// Runs `f` on a fresh tape with `params` bound as constants.
pub fn with_frozen<R>(params: &ParamSet, f: impl for<'t> FnOnce(&'t Tape, &[Var<'t>]) -> Result<R>) -> Result<R> {
    let tape = Tape::new();
    let vars = params.bind(&tape, false);
    f(&tape, &vars)
}
