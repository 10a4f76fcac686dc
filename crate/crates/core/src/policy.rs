//! The cost-generating policy network: pixel-level texture evaluation, DCT
//! feature extraction and mode-wise rearrangement into per-coefficient
//! change probabilities.

use std::f64::consts::LN_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distortion::{ModificationMap, PolicyTensor};
use crate::error::{Error, Result};
use crate::grid::{Grid, Volume};
use crate::jpeg::{decompress_with, JpegImage};
use crate::nn::{BnConfig, LayerSpec, ParamId, ParamStore, Sequential, Tape, Tensor, Var};
use crate::texture::{msu_texture, wavelet_texture};

/// Saturation guard applied to `q` before any logarithm.
pub const Q_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextureProvider {
    /// Learned U-Net on decompressed pixels.
    LearnedUnet,
    /// Fixed directional Daubechies residual magnitudes (3 channels).
    WaveletFixed,
    /// Fixed block-energy texture followed by a learnable upsampler.
    MsuFixed,
    /// Learned block-level features (`H/8 × W/8 × 64`) instead of a pixel map.
    LearnedBlockwise,
}

impl std::str::FromStr for TextureProvider {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned-unet" => Ok(TextureProvider::LearnedUnet),
            "wavelet-fixed" => Ok(TextureProvider::WaveletFixed),
            "msu-fixed" => Ok(TextureProvider::MsuFixed),
            "learned-blockwise" => Ok(TextureProvider::LearnedBlockwise),
            _ => Err(Error::Config(format!("unknown texture provider {s:?}"))),
        }
    }
}

impl std::fmt::Display for TextureProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TextureProvider::LearnedUnet => "learned-unet",
            TextureProvider::WaveletFixed => "wavelet-fixed",
            TextureProvider::MsuFixed => "msu-fixed",
            TextureProvider::LearnedBlockwise => "learned-blockwise",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetConfig {
    pub texture_provider: TextureProvider,
    /// U-Net encoder widths, shallowest first.
    pub unet_schedule: Vec<usize>,
    /// Number of DCT feature groups (3 on learned texture, 6 on fixed texture).
    pub dct_groups: usize,
    /// Channel width of the intermediate DCT feature groups.
    pub dct_width: usize,
    /// Widths of the learnable MSU upsampler's hidden layers.
    pub msu_upsampler: Vec<usize>,
    pub sigmoid_output: bool,
    pub leaky_slope: f64,
    /// Initial shift of the last batchnorm, i.e. the pre-sigmoid offset.
    pub output_bias: f64,
    pub alpha: f64,
    pub beta: f64,
    pub level_shift: bool,
    pub bn: BnConfig,
    pub seed: u64,
}

impl Default for PolicyNetConfig {
    fn default() -> Self {
        PolicyNetConfig {
            texture_provider: TextureProvider::LearnedUnet,
            unet_schedule: vec![16, 32, 64, 128],
            dct_groups: 3,
            dct_width: 64,
            msu_upsampler: vec![16, 16],
            sigmoid_output: true,
            leaky_slope: 0.2,
            output_bias: 0.0,
            alpha: 1.0,
            beta: 1e-7,
            level_shift: true,
            bn: BnConfig::default(),
            seed: 0,
        }
    }
}

impl PolicyNetConfig {
    /// Defaults for a texture provider (six DCT groups on fixed texture).
    pub fn for_provider(provider: TextureProvider) -> Self {
        PolicyNetConfig {
            texture_provider: provider,
            dct_groups: match provider {
                TextureProvider::WaveletFixed | TextureProvider::MsuFixed => 6,
                _ => 3,
            },
            ..Self::default()
        }
    }

    /// Strides of the DCT feature groups.
    pub fn dct_strides(&self) -> Vec<usize> {
        match self.texture_provider {
            TextureProvider::LearnedBlockwise => vec![1; self.dct_groups],
            _ if self.dct_groups == 3 => vec![2, 2, 2],
            _ => (0..self.dct_groups).map(|g| if g % 2 == 0 { 1 } else { 2 }).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            return Err(Error::Config(format!(
                "loss weights alpha={} beta={} must be >= 0 and not both zero",
                self.alpha, self.beta
            )));
        }
        if self.dct_groups == 0 || self.dct_width == 0 {
            return Err(Error::Config("DCT module needs at least one group".into()));
        }
        let reduction: usize = self.dct_strides().iter().product();
        let expected = match self.texture_provider {
            TextureProvider::LearnedBlockwise => 1,
            _ => 8,
        };
        if reduction != expected {
            return Err(Error::Config(format!(
                "DCT group strides reduce by {reduction}, expected {expected}"
            )));
        }
        if self.texture_provider == TextureProvider::LearnedUnet
            && (self.unet_schedule.is_empty() || self.unet_schedule.contains(&0))
        {
            return Err(Error::Config("U-Net schedule must be non-empty and positive".into()));
        }
        Ok(())
    }
}

/// `q_{a,b}^{k,l} = f_{a,b,8k+l}` (zero-based).
pub fn mode_rearrange(volume: &Volume) -> Result<Grid<f64>> {
    if volume.channels() != 64 {
        return Err(Error::DimensionMismatch(format!(
            "mode rearrangement needs 64 channels, got {}",
            volume.channels()
        )));
    }
    Ok(Grid::from_fn(volume.height() * 8, volume.width() * 8, |i, j| {
        volume.get(i / 8, j / 8, (i % 8) * 8 + j % 8)
    }))
}

/// 8×8 phase split, the inverse of [`mode_rearrange`].
pub fn phase_split(grid: &Grid<f64>) -> Result<Volume> {
    let (h, w) = grid.dims();
    if h % 8 != 0 || w % 8 != 0 {
        return Err(Error::UnsupportedGeometry(format!("{h}x{w} is not a multiple of 8")));
    }
    let mut v = Volume::zeros(h / 8, w / 8, 64);
    for i in 0..h {
        for j in 0..w {
            v.set(i / 8, j / 8, (i % 8) * 8 + j % 8, *grid.get(i, j));
        }
    }
    Ok(v)
}

/// Loss values and the gradient of `l_A` with respect to `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLoss {
    pub l_a: f64,
    pub l_r: f64,
    pub l_c: f64,
    /// Ternary entropy of the policy in bits.
    pub entropy: f64,
    pub dq: Grid<f64>,
}

/// Per-coefficient ternary entropy of `(q/2, 1−q, q/2)` in bits.
#[inline]
pub fn entropy_of_q(q: f64) -> f64 {
    let mut h = 0.0;
    if q > 0.0 {
        h -= q * (q / 2.0).log2();
    }
    if q < 1.0 {
        h -= (1.0 - q) * (1.0 - q).log2();
    }
    h
}

/// `l_R = −(1/HW) Σ r log π(m)`, `l_C = (H − C)²`, `l_A = α l_R + β l_C`.
pub fn policy_loss(
    q: &Grid<f64>,
    actions: &ModificationMap,
    rewards: &Grid<f64>,
    capacity: f64,
    alpha: f64,
    beta: f64,
) -> Result<PolicyLoss> {
    q.same_dims(actions, "action map")?;
    q.same_dims(rewards, "reward map")?;
    let n = q.len() as f64;
    let entropy: f64 = q.iter().map(|&v| entropy_of_q(v)).sum();
    let gap = entropy - capacity;
    let mut l_r = 0.0;
    let mut dq = Vec::with_capacity(q.len());
    for ((&qv, &m), &r) in q.iter().zip(actions.iter()).zip(rewards.iter()) {
        let prob = if m == 0 { 1.0 - qv } else { qv / 2.0 };
        if !(prob > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sampled action {m} has zero probability (q = {qv})"
            )));
        }
        let qc = qv.clamp(Q_EPS, 1.0 - Q_EPS);
        let log_p = if m == 0 { (1.0 - qc).ln() } else { (qc / 2.0).ln() };
        l_r -= r * log_p;
        let dlogp = if m == 0 { -1.0 / (1.0 - qc) } else { 1.0 / qc };
        let dh = (2.0 * (1.0 - qc) / qc).ln() / LN_2;
        dq.push(alpha * (-r * dlogp / n) + beta * 2.0 * gap * dh);
    }
    l_r /= n;
    let l_c = gap * gap;
    Ok(PolicyLoss {
        l_a: alpha * l_r + beta * l_c,
        l_r,
        l_c,
        entropy,
        dq: Grid::from_vec(q.height(), q.width(), dq)?,
    })
}

fn conv_group(k: usize, cin: usize, cout: usize, stride: usize, act: LayerSpec) -> [LayerSpec; 3] {
    [
        LayerSpec::conv(k, cin, cout, stride),
        LayerSpec::BatchNorm { channels: cout },
        act,
    ]
}

#[derive(Debug, Clone)]
struct UNet {
    down: Vec<Sequential>,
    up: Vec<Sequential>,
    head: Sequential,
}

impl UNet {
    fn build(cfg: &PolicyNetConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        let s = &cfg.unet_schedule;
        let d = s.len();
        let mut down = Vec::with_capacity(d);
        let mut cin = 1;
        for (n, &c) in s.iter().enumerate() {
            down.push(Sequential::build(
                &format!("policy.unet.down{n}"),
                cin,
                &conv_group(3, cin, c, 2, LayerSpec::Relu),
                cfg.bn,
                store,
                rng,
            )?);
            cin = c;
        }
        let mut up = Vec::with_capacity(d);
        for n in 0..d {
            let cin = if n == 0 { s[d - 1] } else { 2 * s[d - 1 - n] };
            let cout = if n + 1 < d { s[d - 2 - n] } else { s[0] };
            up.push(Sequential::build(
                &format!("policy.unet.up{n}"),
                cin,
                &[
                    LayerSpec::deconv(3, cin, cout, 2),
                    LayerSpec::BatchNorm { channels: cout },
                    LayerSpec::LeakyRelu(cfg.leaky_slope),
                ],
                cfg.bn,
                store,
                rng,
            )?);
        }
        let head = Sequential::build(
            "policy.unet.head",
            s[0],
            &[LayerSpec::conv(1, s[0], 1, 1)],
            cfg.bn,
            store,
            rng,
        )?;
        Ok(UNet { down, up, head })
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var, train: bool) -> Result<Var> {
        let mut skips = Vec::with_capacity(self.down.len());
        for layer in &self.down {
            x = layer.forward(tape, store, x, train)?;
            skips.push(x);
        }
        skips.pop();
        for layer in &self.up {
            x = layer.forward(tape, store, x, train)?;
            if let Some(skip) = skips.pop() {
                x = tape.concat(x, skip)?;
            }
        }
        self.head.forward(tape, store, x, train)
    }
}

#[derive(Debug, Clone)]
enum TextureStage {
    Unet(UNet),
    Blockwise(Sequential),
    Wavelet,
    Msu(Sequential),
}

struct Cache {
    tape: Tape,
    out: Var,
    batch: usize,
    dims: (usize, usize),
}

/// Policy network with its own parameter store.
pub struct PolicyNet {
    config: PolicyNetConfig,
    store: ParamStore,
    stage: TextureStage,
    dct: Sequential,
    cache: Option<Cache>,
}

impl PolicyNet {
    pub fn new(config: PolicyNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (stage, dct_in) = match config.texture_provider {
            TextureProvider::LearnedUnet => (TextureStage::Unet(UNet::build(&config, &mut store, &mut rng)?), 1),
            TextureProvider::WaveletFixed => (TextureStage::Wavelet, 3),
            TextureProvider::MsuFixed => {
                let mut specs = Vec::new();
                let mut cin = 1;
                for &c in &config.msu_upsampler {
                    specs.extend(conv_group(3, cin, c, 1, LayerSpec::Relu));
                    cin = c;
                }
                specs.push(LayerSpec::conv(3, cin, 1, 1));
                let net = Sequential::build("policy.msu", 1, &specs, config.bn, &mut store, &mut rng)?;
                (TextureStage::Msu(net), 1)
            }
            TextureProvider::LearnedBlockwise => {
                let mut specs = Vec::new();
                let widths = [16, 32, 64];
                let mut cin = 1;
                for &c in &widths {
                    specs.extend(conv_group(3, cin, c, 2, LayerSpec::Relu));
                    cin = c;
                }
                let net = Sequential::build("policy.block", 1, &specs, config.bn, &mut store, &mut rng)?;
                (TextureStage::Blockwise(net), 64)
            }
        };
        let strides = config.dct_strides();
        let mut specs = Vec::new();
        let mut cin = dct_in;
        for (g, &stride) in strides.iter().enumerate() {
            let last = g + 1 == strides.len();
            let cout = if last { 64 } else { config.dct_width };
            specs.push(LayerSpec::conv(3, cin, cout, stride));
            specs.push(LayerSpec::BatchNorm { channels: cout });
            if !last {
                specs.push(LayerSpec::Relu);
            } else if config.sigmoid_output {
                specs.push(LayerSpec::Sigmoid);
            }
            cin = cout;
        }
        let dct = Sequential::build("policy.dct", dct_in, &specs, config.bn, &mut store, &mut rng)?;
        let shift = store
            .iter()
            .filter(|(_, p)| p.name.starts_with("policy.dct.") && p.name.ends_with(".beta"))
            .map(|(id, _)| id)
            .last();
        if let Some(id) = shift {
            store.value_mut(id).data_mut().fill(config.output_bias);
        }
        Ok(PolicyNet {
            config,
            store,
            stage,
            dct,
            cache: None,
        })
    }

    pub fn config(&self) -> &PolicyNetConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn check_geometry(&self, h: usize, w: usize) -> Result<()> {
        let mut unit = 8;
        if let TextureStage::Unet(_) = self.stage {
            unit = unit.max(1 << self.config.unet_schedule.len());
        }
        if h % unit != 0 || w % unit != 0 {
            return Err(Error::UnsupportedGeometry(format!(
                "policy network needs dimensions divisible by {unit}, got {h}x{w}"
            )));
        }
        Ok(())
    }

    /// Texture-module output for a batch, `[n, H, W, c]` (or `[n, H/8, W/8, 64]`
    /// for the blockwise provider).
    fn texture(&self, tape: &mut Tape, images: &[JpegImage], train: bool) -> Result<Var> {
        let pixels: Vec<Grid<f64>> = match self.stage {
            TextureStage::Msu(_) => Vec::new(),
            _ => images
                .iter()
                .map(|im| decompress_with(im, self.config.level_shift))
                .collect(),
        };
        match &self.stage {
            TextureStage::Unet(net) => {
                let x = tape.input(Tensor::from_planes(&pixels.iter().collect::<Vec<_>>())?, false)?;
                net.forward(tape, &self.store, x, train)
            }
            TextureStage::Blockwise(net) => {
                let x = tape.input(Tensor::from_planes(&pixels.iter().collect::<Vec<_>>())?, false)?;
                net.forward(tape, &self.store, x, train)
            }
            TextureStage::Wavelet => {
                let t: Vec<Volume> = pixels.iter().map(wavelet_texture).collect();
                tape.input(Tensor::from_volumes(&t.iter().collect::<Vec<_>>())?, false)
            }
            TextureStage::Msu(net) => {
                let t: Vec<Volume> = images.iter().map(msu_texture).collect();
                let x = tape.input(Tensor::from_volumes(&t.iter().collect::<Vec<_>>())?, false)?;
                net.forward(tape, &self.store, x, train)
            }
        }
    }

    /// Change probabilities `q` per image. Training mode uses batch statistics
    /// and updates the batchnorm moving averages.
    pub fn forward(&mut self, images: &[JpegImage], train: bool) -> Result<Vec<Grid<f64>>> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidInput("empty image batch".into()))?;
        let (h, w) = first.dims();
        if images.iter().any(|im| im.dims() != (h, w)) {
            return Err(Error::DimensionMismatch("batch images differ in size".into()));
        }
        self.check_geometry(h, w)?;
        let mut tape = Tape::new();
        let t = self.texture(&mut tape, images, train)?;
        let out = self.dct.forward(&mut tape, &self.store, t, train)?;
        tape.commit_bn(&mut self.store);
        let ov = tape.value(out);
        debug_assert_eq!(ov.shape(), [images.len(), h / 8, w / 8, 64]);
        let q = (0..images.len())
            .map(|n| {
                let g = mode_rearrange(&ov.volume(n))?;
                Ok(if self.config.sigmoid_output {
                    g
                } else {
                    g.map(|v| v.clamp(Q_EPS, 1.0 - Q_EPS))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.cache = Some(Cache {
            tape,
            out,
            batch: images.len(),
            dims: (h, w),
        });
        Ok(q)
    }

    /// Parameter gradients given `∂l/∂q` for each image of the last forward.
    pub fn backward(&mut self, dq: &[Grid<f64>]) -> Result<Vec<(ParamId, Tensor)>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(Error::BackwardBeforeForward("policy network"))?;
        if dq.len() != cache.batch || dq.iter().any(|g| g.dims() != cache.dims) {
            return Err(Error::DimensionMismatch(
                "policy gradient does not match the last forward batch".into(),
            ));
        }
        let vols: Vec<Volume> = dq.iter().map(phase_split).collect::<Result<_>>()?;
        let seed = Tensor::from_volumes(&vols.iter().collect::<Vec<_>>())?;
        let grads = cache.tape.backward(cache.out, seed)?;
        Ok(cache.tape.param_grads(&grads))
    }

    /// Deployment-mode policy for one image.
    pub fn policy(&mut self, image: &JpegImage) -> Result<PolicyTensor> {
        let q = self.forward(std::slice::from_ref(image), false)?;
        Ok(PolicyTensor::from_change_probabilities(&q[0]))
    }
}
