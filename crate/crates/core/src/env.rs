//! The environment network: a fixed residual filter bank with truncation,
//! a five-group convolutional backbone, and the gradient-derived rewards fed
//! back to the policy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distortion::ModificationMap;
use crate::error::{Error, Result};
use crate::grid::{Grid, Volume};
use crate::jpeg::dct::{dct_basis, pixel_gradient_to_coefficients};
use crate::jpeg::{JpegImage, PixelPlane};
use crate::nn::{BnConfig, LayerSpec, ParamId, ParamStore, Sequential, Tape, Tensor, Var};

/// Standard deviation of the classifier's initial weights.
pub const FC_INIT_STD: f64 = 0.01;

pub type GradientMap = Grid<f64>;
pub type RewardMap = Grid<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterBank {
    Dct8,
    Dct4,
    Srm30,
    Learnable,
}

impl std::str::FromStr for FilterBank {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dct8" => Ok(FilterBank::Dct8),
            "dct4" => Ok(FilterBank::Dct4),
            "srm30" => Ok(FilterBank::Srm30),
            "learnable" => Ok(FilterBank::Learnable),
            _ => Err(Error::Config(format!("unknown filter bank {s:?}"))),
        }
    }
}

impl std::fmt::Display for FilterBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FilterBank::Dct8 => "dct8",
            FilterBank::Dct4 => "dct4",
            FilterBank::Srm30 => "srm30",
            FilterBank::Learnable => "learnable",
        })
    }
}

/// A square filter, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    pub size: usize,
    pub taps: Vec<f64>,
}

impl Filter {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.taps[i * self.size + j]
    }

    /// Zero-padded to `n × n` (top-left aligned).
    pub fn padded(&self, n: usize) -> Filter {
        let mut taps = vec![0.0; n * n];
        for i in 0..self.size.min(n) {
            for j in 0..self.size.min(n) {
                taps[i * n + j] = self.get(i, j);
            }
        }
        Filter { size: n, taps }
    }
}

fn rot90(k: &[[f64; 5]; 5]) -> [[f64; 5]; 5] {
    let mut r = [[0.0; 5]; 5];
    for i in 0..5 {
        for j in 0..5 {
            r[i][j] = k[4 - j][i];
        }
    }
    r
}

fn srm_filter(k: [[f64; 5]; 5], divisor: f64) -> Filter {
    Filter {
        size: 5,
        taps: k.iter().flatten().map(|v| v / divisor).collect(),
    }
}

/// The 30 basic SRM high-pass residual kernels, each embedded in 5×5 and
/// normalized by its divisor.
pub fn srm30() -> Vec<Filter> {
    const DIRS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)];
    let put = |k: &mut [[f64; 5]; 5], d: (isize, isize), s: isize, v: f64| {
        k[(2 + d.0 * s) as usize][(2 + d.1 * s) as usize] += v;
    };
    let mut out = Vec::with_capacity(30);
    for &d in &DIRS {
        let mut k = [[0.0; 5]; 5];
        put(&mut k, d, 0, -1.0);
        put(&mut k, d, 1, 1.0);
        out.push(srm_filter(k, 1.0));
    }
    for &d in &DIRS[1..5] {
        let mut k = [[0.0; 5]; 5];
        put(&mut k, d, -1, 1.0);
        put(&mut k, d, 0, -2.0);
        put(&mut k, d, 1, 1.0);
        out.push(srm_filter(k, 2.0));
    }
    for &d in &DIRS {
        let mut k = [[0.0; 5]; 5];
        put(&mut k, d, -1, 1.0);
        put(&mut k, d, 0, -3.0);
        put(&mut k, d, 1, 3.0);
        put(&mut k, d, 2, -1.0);
        out.push(srm_filter(k, 3.0));
    }
    let mut sq3 = [[0.0; 5]; 5];
    let s3 = [[-1.0, 2.0, -1.0], [2.0, -4.0, 2.0], [-1.0, 2.0, -1.0]];
    for i in 0..3 {
        for j in 0..3 {
            sq3[i + 1][j + 1] = s3[i][j];
        }
    }
    out.push(srm_filter(sq3, 4.0));
    let mut e3 = sq3;
    e3[3] = [0.0; 5];
    for _ in 0..4 {
        out.push(srm_filter(e3, 4.0));
        e3 = rot90(&e3);
    }
    let sq5 = [
        [-1.0, 2.0, -2.0, 2.0, -1.0],
        [2.0, -6.0, 8.0, -6.0, 2.0],
        [-2.0, 8.0, -12.0, 8.0, -2.0],
        [2.0, -6.0, 8.0, -6.0, 2.0],
        [-1.0, 2.0, -2.0, 2.0, -1.0],
    ];
    out.push(srm_filter(sq5, 12.0));
    let mut e5 = sq5;
    e5[3] = [0.0; 5];
    e5[4] = [0.0; 5];
    for _ in 0..4 {
        out.push(srm_filter(e5, 12.0));
        e5 = rot90(&e5);
    }
    out
}

/// Filters of a bank; the learnable bank starts from the 8×8 DCT basis.
pub fn bank_filters(bank: FilterBank) -> Vec<Filter> {
    match bank {
        FilterBank::Dct8 | FilterBank::Learnable => dct_basis(8).into_iter().map(|taps| Filter { size: 8, taps }).collect(),
        FilterBank::Dct4 => dct_basis(4).into_iter().map(|taps| Filter { size: 4, taps }).collect(),
        FilterBank::Srm30 => srm30(),
    }
}

/// Bank as a convolution weight `[k, k, 1, c]`.
pub fn bank_tensor(bank: FilterBank) -> Tensor {
    let filters = bank_filters(bank);
    let k = filters[0].size;
    let c = filters.len();
    let mut t = Tensor::zeros([k, k, 1, c]);
    for (n, f) in filters.iter().enumerate() {
        for i in 0..k {
            for j in 0..k {
                t.data_mut()[(i * k + j) * c + n] = f.get(i, j);
            }
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvNetConfig {
    pub filter_bank: FilterBank,
    pub truncation: f64,
    /// Output widths of the five convolution groups.
    pub widths: Vec<usize>,
    /// Kernel sizes of the five convolution groups.
    pub kernels: Vec<usize>,
    /// Convolution layers per group (more than one gives the deep variant).
    pub group_repeats: usize,
    pub pool_size: usize,
    pub pool_stride: usize,
    pub reward_scale: f64,
    pub bn: BnConfig,
    pub seed: u64,
}

impl Default for EnvNetConfig {
    fn default() -> Self {
        EnvNetConfig {
            filter_bank: FilterBank::Dct8,
            truncation: 8.0,
            widths: vec![48, 48, 64, 128, 256],
            kernels: vec![5, 5, 1, 1, 1],
            group_repeats: 1,
            pool_size: 5,
            pool_stride: 2,
            reward_scale: 1e7,
            bn: BnConfig::default(),
            seed: 1,
        }
    }
}

impl EnvNetConfig {
    /// Deep backbone: four convolutions per group, 22 weight layers in total.
    pub fn deep() -> Self {
        EnvNetConfig {
            group_repeats: 4,
            ..Self::default()
        }
    }

    /// The original narrow widths.
    pub fn narrow() -> Self {
        EnvNetConfig {
            widths: vec![8, 16, 32, 64, 128],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.truncation > 0.0) {
            return Err(Error::Config(format!("truncation threshold {} must be > 0", self.truncation)));
        }
        if self.widths.len() != 5 || self.kernels.len() != 5 {
            return Err(Error::Config("environment network needs exactly 5 groups".into()));
        }
        if self.widths.contains(&0) || self.kernels.contains(&0) || self.group_repeats == 0 {
            return Err(Error::Config("group widths, kernels and repeats must be positive".into()));
        }
        if self.pool_size == 0 || self.pool_stride == 0 {
            return Err(Error::Config("pooling window must be positive".into()));
        }
        if !self.reward_scale.is_finite() {
            return Err(Error::Config("reward scale must be finite".into()));
        }
        Ok(())
    }
}

/// Stride-1 same-padded correlation with every filter of the bank followed by
/// truncation to `[−t, t]`.
pub fn preprocess(pixels: &PixelPlane, bank: FilterBank, t: f64) -> Result<Volume> {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::from_planes(&[pixels])?, false)?;
    let w = tape.input(bank_tensor(bank), false)?;
    let c = tape.value(w).channels();
    let b = tape.input(Tensor::zeros([1, 1, 1, c]), false)?;
    let y = tape.conv(x, w, b, 1)?;
    let y = tape.tlu(y, t)?;
    Ok(tape.value(y).volume(0))
}

/// `−ln z_c[0] − ln z_s[1]`.
pub fn env_loss(z_cover: [f64; 2], z_stego: [f64; 2]) -> f64 {
    -z_cover[0].ln() - z_stego[1].ln()
}

/// `r = ξ · sign(m) · g`.
pub fn reward_map(actions: &ModificationMap, grads: &GradientMap, xi: f64) -> Result<RewardMap> {
    actions.same_dims(grads, "gradient map")?;
    let data = actions
        .iter()
        .zip(grads.iter())
        .map(|(&m, &g)| if m == 0 { 0.0 } else { xi * m.signum() as f64 * g })
        .collect();
    Grid::from_vec(actions.height(), actions.width(), data)
}

/// Outputs of one environment forward pass over cover/stego pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvOutput {
    pub z_cover: Vec<[f64; 2]>,
    pub z_stego: Vec<[f64; 2]>,
    /// Mean of [`env_loss`] over the pairs.
    pub loss: f64,
    /// Fraction of the `2N` inputs classified correctly.
    pub accuracy: f64,
}

struct Cache {
    tape: Tape,
    input: Var,
    loss: Var,
    pairs: usize,
    dims: (usize, usize),
}

pub struct EnvNet {
    config: EnvNetConfig,
    store: ParamStore,
    bank: Option<Tensor>,
    bank_param: Option<(ParamId, ParamId)>,
    body: Sequential,
    cache: Option<Cache>,
}

impl EnvNet {
    pub fn new(config: EnvNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let bank_t = bank_tensor(config.filter_bank);
        let bank_c = bank_t.channels();
        let (bank, bank_param) = if config.filter_bank == FilterBank::Learnable {
            let w = store.add("env.pre.w", bank_t, true);
            let b = store.add("env.pre.b", Tensor::zeros([1, 1, 1, bank_c]), true);
            (None, Some((w, b)))
        } else {
            (Some(bank_t), None)
        };
        let mut specs = Vec::new();
        let mut cin = bank_c;
        for g in 0..5 {
            for _ in 0..config.group_repeats {
                let cout = config.widths[g];
                specs.push(LayerSpec::conv(config.kernels[g], cin, cout, 1));
                specs.push(LayerSpec::BatchNorm { channels: cout });
                specs.push(LayerSpec::Relu);
                cin = cout;
            }
            specs.push(if g < 4 {
                LayerSpec::AvgPool {
                    size: config.pool_size,
                    stride: config.pool_stride,
                }
            } else {
                LayerSpec::GlobalAvgPool
            });
        }
        specs.push(LayerSpec::FullyConnected { fin: cin, fout: 2 });
        let body = Sequential::build("env.body", bank_c, &specs, config.bn, &mut store, &mut rng)?;
        let fc = body.layer_params(specs.len() - 1)[0];
        let fan_in = store.value(fc).shape()[2] as f64;
        let t = store.value_mut(fc);
        t.data_mut().iter_mut().for_each(|v| *v *= FC_INIT_STD / (2.0 / fan_in).sqrt());
        t.round_to_f32();
        Ok(EnvNet {
            config,
            store,
            bank,
            bank_param,
            body,
            cache: None,
        })
    }

    pub fn config(&self) -> &EnvNetConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Current preprocessing weights `[k, k, 1, c]`.
    pub fn bank_weights(&self) -> &Tensor {
        match (&self.bank, self.bank_param) {
            (Some(t), _) => t,
            (None, Some((w, _))) => self.store.value(w),
            _ => unreachable!("bank is either frozen or learnable"),
        }
    }

    /// Forward over `[covers; stegos]`; training mode uses batch statistics
    /// and updates the batchnorm moving averages.
    pub fn forward(&mut self, covers: &[PixelPlane], stegos: &[PixelPlane], train: bool) -> Result<EnvOutput> {
        if covers.is_empty() || covers.len() != stegos.len() {
            return Err(Error::DimensionMismatch(format!(
                "need equally many covers and stegos, got {} and {}",
                covers.len(),
                stegos.len()
            )));
        }
        let dims = covers[0].dims();
        if covers.iter().chain(stegos).any(|p| p.dims() != dims) {
            return Err(Error::DimensionMismatch("cover and stego planes differ in size".into()));
        }
        let n = covers.len();
        let planes: Vec<&Grid<f64>> = covers.iter().chain(stegos).collect();
        let mut tape = Tape::new();
        let input = tape.input(Tensor::from_planes(&planes)?, true)?;
        let (w, b) = match (&self.bank, self.bank_param) {
            (Some(t), _) => {
                let c = t.channels();
                (tape.input(t.clone(), false)?, tape.input(Tensor::zeros([1, 1, 1, c]), false)?)
            }
            (None, Some((w, b))) => (tape.param(&self.store, w)?, tape.param(&self.store, b)?),
            _ => unreachable!("bank is either frozen or learnable"),
        };
        let r = tape.conv(input, w, b, 1)?;
        let r = tape.tlu(r, self.config.truncation)?;
        let logits = self.body.forward(&mut tape, &self.store, r, train)?;
        let labels: Vec<usize> = (0..2 * n).map(|i| usize::from(i >= n)).collect();
        let loss = tape.softmax_cross_entropy(logits, &labels, 1.0 / n as f64)?;
        tape.commit_bn(&mut self.store);
        let lv = tape.value(logits).data();
        let probs: Vec<[f64; 2]> = lv
            .chunks_exact(2)
            .map(|z| {
                let m = z[0].max(z[1]);
                let (e0, e1) = ((z[0] - m).exp(), (z[1] - m).exp());
                [e0 / (e0 + e1), e1 / (e0 + e1)]
            })
            .collect();
        let correct = probs
            .iter()
            .zip(&labels)
            .filter(|(p, &l)| p[l] > p[1 - l])
            .count();
        let out = EnvOutput {
            z_cover: probs[..n].to_vec(),
            z_stego: probs[n..].to_vec(),
            loss: tape.value(loss).data()[0],
            accuracy: correct as f64 / (2 * n) as f64,
        };
        self.cache = Some(Cache {
            tape,
            input,
            loss,
            pairs: n,
            dims,
        });
        Ok(out)
    }

    /// Backpropagates the last forward's loss: parameter gradients of the
    /// mean pair loss and, per pair, the gradient of that pair's loss with
    /// respect to the stego pixels.
    pub fn backward(&self) -> Result<(Vec<(ParamId, Tensor)>, Vec<PixelPlane>)> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(Error::BackwardBeforeForward("environment network"))?;
        let grads = cache.tape.backward(cache.loss, Tensor::filled([1, 1, 1, 1], 1.0))?;
        let gin = grads
            .get(cache.input)
            .ok_or_else(|| Error::NonFinite("missing input gradient".into()))?;
        let n = cache.pairs;
        let pixel = (n..2 * n)
            .map(|i| {
                let mut g = gin.plane(i, 0);
                g.as_mut_slice().iter_mut().for_each(|v| *v *= n as f64);
                g
            })
            .collect();
        Ok((cache.tape.param_grads(&grads), pixel))
    }

    /// Gradients of the pair losses with respect to each stego's quantized
    /// DCT coefficients, for the images of the last forward.
    pub fn gradient_maps(&self, images: &[JpegImage]) -> Result<(Vec<(ParamId, Tensor)>, Vec<GradientMap>)> {
        let (params, pixel) = self.backward()?;
        let cache = self.cache.as_ref().expect("backward checked the cache");
        if images.len() != cache.pairs || images.iter().any(|im| im.dims() != cache.dims) {
            return Err(Error::DimensionMismatch("images do not match the last forward batch".into()));
        }
        let maps = pixel
            .iter()
            .zip(images)
            .map(|(g, im)| pixel_gradient_to_coefficients(g, im.table()))
            .collect();
        Ok((params, maps))
    }
}
