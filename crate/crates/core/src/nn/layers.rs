use rand::Rng;

use super::params::he_normal;
use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv {
        kernel: (usize, usize),
        cin: usize,
        cout: usize,
        stride: usize,
        learnable: bool,
    },
    Deconv {
        kernel: (usize, usize),
        cin: usize,
        cout: usize,
        stride: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tlu(f64),
    AvgPool {
        size: usize,
        stride: usize,
    },
    GlobalAvgPool,
    FullyConnected {
        fin: usize,
        fout: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn conv(k: usize, cin: usize, cout: usize, stride: usize) -> Self {
        LayerSpec::Conv {
            kernel: (k, k),
            cin,
            cout,
            stride,
            learnable: true,
        }
    }

    pub fn deconv(k: usize, cin: usize, cout: usize, stride: usize) -> Self {
        LayerSpec::Deconv {
            kernel: (k, k),
            cin,
            cout,
            stride,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = match *self {
            LayerSpec::Conv {
                kernel, cin, cout, stride, ..
            }
            | LayerSpec::Deconv {
                kernel, cin, cout, stride,
            } => kernel.0 == 0 || kernel.1 == 0 || cin == 0 || cout == 0 || stride == 0,
            LayerSpec::BatchNorm { channels } => channels == 0,
            LayerSpec::AvgPool { size, stride } => size == 0 || stride == 0,
            LayerSpec::FullyConnected { fin, fout } => fin == 0 || fout == 0,
            LayerSpec::Tlu(t) => !(t > 0.0),
            _ => false,
        };
        if bad {
            return Err(Error::Config(format!("invalid layer {self:?}")));
        }
        Ok(())
    }

    /// Input channel count the layer requires, if it constrains one.
    fn input_channels(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv { cin, .. } | LayerSpec::Deconv { cin, .. } => Some(cin),
            LayerSpec::BatchNorm { channels } => Some(channels),
            _ => None,
        }
    }

    fn output_channels(&self, input: usize) -> usize {
        match *self {
            LayerSpec::Conv { cout, .. } | LayerSpec::Deconv { cout, .. } => cout,
            LayerSpec::FullyConnected { fout, .. } => fout,
            _ => input,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        BnConfig {
            eps: 1e-5,
            momentum: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    spec: LayerSpec,
    params: Vec<ParamId>,
}

/// A chain of layers whose parameters live in a shared [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    layers: Vec<Layer>,
    bn: BnConfig,
    in_channels: usize,
    out_channels: usize,
}

impl Sequential {
    pub fn build<R: Rng>(
        prefix: &str,
        in_channels: usize,
        specs: &[LayerSpec],
        bn: BnConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let mut channels = in_channels;
        let mut layers = Vec::with_capacity(specs.len());
        for (n, spec) in specs.iter().enumerate() {
            spec.validate()?;
            if let Some(c) = spec.input_channels() {
                if c != channels {
                    return Err(Error::Config(format!(
                        "{prefix}.{n}: layer expects {c} channels but receives {channels}"
                    )));
                }
            }
            let name = |p: &str| format!("{prefix}.{n}.{p}");
            let params = match *spec {
                LayerSpec::Conv {
                    kernel: (kh, kw),
                    cin,
                    cout,
                    learnable,
                    ..
                } => vec![
                    store.add(name("w"), he_normal([kh, kw, cin, cout], kh * kw * cin, rng), learnable),
                    store.add(name("b"), Tensor::zeros([1, 1, 1, cout]), learnable),
                ],
                LayerSpec::Deconv {
                    kernel: (kh, kw),
                    cin,
                    cout,
                    ..
                } => vec![
                    store.add(name("w"), he_normal([kh, kw, cout, cin], kh * kw * cin, rng), true),
                    store.add(name("b"), Tensor::zeros([1, 1, 1, cout]), true),
                ],
                LayerSpec::BatchNorm { channels: c } => vec![
                    store.add(name("gamma"), Tensor::filled([1, 1, 1, c], 1.0), true),
                    store.add(name("beta"), Tensor::zeros([1, 1, 1, c]), true),
                    store.add(name("running_mean"), Tensor::zeros([1, 1, 1, c]), false),
                    store.add(name("running_var"), Tensor::filled([1, 1, 1, c], 1.0), false),
                ],
                LayerSpec::FullyConnected { fin, fout } => vec![
                    store.add(name("w"), he_normal([1, 1, fin, fout], fin, rng), true),
                    store.add(name("b"), Tensor::zeros([1, 1, 1, fout]), true),
                ],
                _ => Vec::new(),
            };
            channels = spec.output_channels(channels);
            layers.push(Layer {
                spec: *spec,
                params,
            });
        }
        Ok(Sequential {
            layers,
            bn,
            in_channels,
            out_channels: channels,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn specs(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().map(|l| &l.spec)
    }

    /// Parameter ids of layer `n`.
    pub fn layer_params(&self, n: usize) -> &[ParamId] {
        &self.layers[n].params
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var, train: bool) -> Result<Var> {
        let c = tape.value(x).channels();
        if c != self.in_channels {
            return Err(Error::DimensionMismatch(format!(
                "network expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        for layer in &self.layers {
            let p = &layer.params;
            x = match layer.spec {
                LayerSpec::Conv { stride, .. } => {
                    let (w, b) = (tape.param(store, p[0])?, tape.param(store, p[1])?);
                    tape.conv(x, w, b, stride)?
                }
                LayerSpec::Deconv { stride, .. } => {
                    let (w, b) = (tape.param(store, p[0])?, tape.param(store, p[1])?);
                    tape.deconv(x, w, b, stride)?
                }
                LayerSpec::BatchNorm { .. } => tape.batchnorm(
                    store,
                    x,
                    p[0],
                    p[1],
                    p[2],
                    p[3],
                    self.bn.eps,
                    self.bn.momentum,
                    train,
                )?,
                LayerSpec::Relu => tape.relu(x)?,
                LayerSpec::LeakyRelu(s) => tape.leaky_relu(x, s)?,
                LayerSpec::Sigmoid => tape.sigmoid(x)?,
                LayerSpec::Tlu(t) => tape.tlu(x, t)?,
                LayerSpec::AvgPool { size, stride } => tape.avg_pool(x, size, stride)?,
                LayerSpec::GlobalAvgPool => tape.global_avg(x)?,
                LayerSpec::FullyConnected { .. } => {
                    let (w, b) = (tape.param(store, p[0])?, tape.param(store, p[1])?);
                    tape.fully_connected(x, w, b)?
                }
                LayerSpec::Softmax => tape.softmax(x)?,
            };
        }
        Ok(x)
    }
}
