//! Alternating policy/environment training, telemetry, checkpoints and cost
//! export.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distortion::{costs_from_policy, simulate_embedding, CostMap, ModificationMap, PayloadSpec, PolicyTensor};
use crate::env::{reward_map, EnvNet, EnvNetConfig, FilterBank, RewardMap};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::jpeg::dct::dequantize_inverse;
use crate::jpeg::{decompress, is_image_path, read_image, JpegImage, QuantTable};
use crate::nn::{AdamConfig, AdamState, Checkpoint};
use crate::policy::{policy_loss, PolicyNet, PolicyNetConfig, TextureProvider};

/// Architecture presets for the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Base,
    /// Block-level policy features.
    I,
    /// 4×4 DCT preprocessing.
    II,
    /// SRM preprocessing.
    III,
    /// Learnable preprocessing.
    IV,
    /// Deep environment backbone.
    V,
    /// Narrow environment widths.
    VI,
    /// Fixed wavelet texture.
    Juni,
    /// Fixed block-energy texture.
    Msu,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "base" => Variant::Base,
            "I" => Variant::I,
            "II" => Variant::II,
            "III" => Variant::III,
            "IV" => Variant::IV,
            "V" => Variant::V,
            "VI" => Variant::VI,
            "juni" => Variant::Juni,
            "msu" => Variant::Msu,
            _ => return Err(Error::Config(format!("unknown variant {s:?}"))),
        })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Base => "base",
            Variant::I => "I",
            Variant::II => "II",
            Variant::III => "III",
            Variant::IV => "IV",
            Variant::V => "V",
            Variant::VI => "VI",
            Variant::Juni => "juni",
            Variant::Msu => "msu",
        })
    }
}

impl Variant {
    pub fn policy_config(self) -> PolicyNetConfig {
        match self {
            Variant::I => PolicyNetConfig::for_provider(TextureProvider::LearnedBlockwise),
            Variant::Juni => PolicyNetConfig::for_provider(TextureProvider::WaveletFixed),
            Variant::Msu => PolicyNetConfig::for_provider(TextureProvider::MsuFixed),
            _ => PolicyNetConfig::default(),
        }
    }

    pub fn env_config(self) -> EnvNetConfig {
        let bank = |b| EnvNetConfig {
            filter_bank: b,
            ..EnvNetConfig::default()
        };
        match self {
            Variant::II => bank(FilterBank::Dct4),
            Variant::III => bank(FilterBank::Srm30),
            Variant::IV => bank(FilterBank::Learnable),
            Variant::V => EnvNetConfig::deep(),
            Variant::VI => EnvNetConfig::narrow(),
            _ => EnvNetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub batch: usize,
    pub payload: PayloadSpec,
    pub alpha: f64,
    pub beta: f64,
    pub xi: f64,
    pub policy_lr: f64,
    pub env_lr: f64,
    pub lr_decay_every: u64,
    pub lr_decay_factor: f64,
    pub iterations: u64,
    pub seed: u64,
    /// Policy updates : environment updates per cycle.
    pub update_ratio: (u32, u32),
    /// Environment-only iterations before the policy starts updating.
    pub warmup: u64,
    /// Checkpoint every this many iterations (0 = never).
    pub checkpoint_every: u64,
    pub image_dir: Option<String>,
    pub image_size: usize,
    pub qf: u32,
    pub synthetic_images: usize,
    pub policy: PolicyNetConfig,
    pub env: EnvNetConfig,
}

impl Default for TrainConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Base,
            batch: 8,
            payload: PayloadSpec::Bpnzac(0.4),
            alpha: 1.0,
            beta: 1e-7,
            xi: 1e7,
            policy_lr: 1e-4,
            env_lr: 1e-4,
            lr_decay_every: 30_000,
            lr_decay_factor: 0.1,
            iterations: 2_000,
            seed: 0,
            update_ratio: (1, 1),
            warmup: 0,
            checkpoint_every: 0,
            image_dir: None,
            image_size: 64,
            qf: 75,
            synthetic_images: 64,
            policy: PolicyNetConfig::default(),
            env: EnvNetConfig::default(),
        }
    }
}

impl TrainConfig {
    /// The full-scale setting: 256×256 images, batch 24, 90,000 iterations.
    pub fn paper_scale() -> Self {
        TrainConfig {
            batch: 24,
            iterations: 90_000,
            image_size: 256,
            ..Self::default()
        }
    }

    /// Small, fast setting used by the toy experiments: narrow environment,
    /// thin networks, larger learning rates, a stronger capacity term and a
    /// policy that starts near the target change rate.
    pub fn toy() -> Self {
        let mut c = TrainConfig {
            iterations: 500,
            beta: 3e-3,
            policy_lr: 3e-2,
            env_lr: 1e-4,
            lr_decay_every: 250,
            qf: 95,
            ..Self::default()
        };
        c.set_variant(Variant::VI);
        c.policy.unet_schedule = vec![8, 16, 16, 32];
        c.policy.dct_width = 32;
        c.policy.output_bias = -4.0;
        c
    }

    pub fn set_variant(&mut self, v: Variant) {
        self.variant = v;
        self.policy = v.policy_config();
        self.env = v.env_config();
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        let p = match self.payload {
            PayloadSpec::Bits(b) | PayloadSpec::Bpnzac(b) => b,
        };
        if !(p > 0.0) {
            return Err(Error::Config("payload must be > 0".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be > 0".into()));
        }
        if self.update_ratio.0 == 0 && self.update_ratio.1 == 0 {
            return Err(Error::Config("update ratio cannot be 0:0".into()));
        }
        if !(self.policy_lr > 0.0 && self.env_lr > 0.0) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        if self.image_size == 0 || self.image_size % 8 != 0 {
            return Err(Error::Config("image size must be a positive multiple of 8".into()));
        }
        let mut pc = self.policy.clone();
        pc.alpha = self.alpha;
        pc.beta = self.beta;
        pc.validate()?;
        self.env.validate()
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            decay_every: self.lr_decay_every,
            decay_factor: self.lr_decay_factor,
            ..AdamConfig::default()
        }
    }

    fn policy_config(&self) -> PolicyNetConfig {
        PolicyNetConfig {
            alpha: self.alpha,
            beta: self.beta,
            seed: self.seed,
            ..self.policy.clone()
        }
    }

    fn env_config(&self) -> EnvNetConfig {
        EnvNetConfig {
            reward_scale: self.xi,
            seed: self.seed.wrapping_add(1),
            ..self.env.clone()
        }
    }
}

/// One row of training telemetry (batch means).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Telemetry {
    pub iteration: u64,
    pub l_a: f64,
    pub l_r: f64,
    pub l_c: f64,
    pub l_e: f64,
    pub mean_reward: f64,
    /// Mean payload entropy of the policies, bits per image.
    pub entropy: f64,
    /// Mean target capacity, bits per image.
    pub capacity: f64,
    pub env_accuracy: f64,
}

pub const TELEMETRY_HEADER: &str = "iteration,l_a,l_r,l_c,l_e,mean_reward,entropy,capacity,env_accuracy";

impl Telemetry {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            self.iteration,
            self.l_a,
            self.l_r,
            self.l_c,
            self.l_e,
            self.mean_reward,
            self.entropy,
            self.capacity,
            self.env_accuracy
        )
    }
}

/// Everything a step produced, for logging and verification.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub telemetry: Telemetry,
    pub q: Vec<Grid<f64>>,
    pub actions: Vec<ModificationMap>,
    pub rewards: Vec<RewardMap>,
    pub warnings: Vec<String>,
}

const GUARD_WINDOW: usize = 100;

pub struct TrainState {
    pub config: TrainConfig,
    pub iteration: u64,
    pub policy: PolicyNet,
    pub env: EnvNet,
    pub policy_adam: AdamState,
    pub env_adam: AdamState,
    accuracy_window: VecDeque<f64>,
}

/// Independent 64-bit stream per (seed, iteration, image).
pub fn derive_seed(seed: u64, iteration: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    rng.set_word_pos(u128::from(index) * 2);
    rng.gen()
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let policy = PolicyNet::new(config.policy_config())?;
        let env = EnvNet::new(config.env_config())?;
        let policy_adam = AdamState::new(config.adam(config.policy_lr), policy.store());
        let env_adam = AdamState::new(config.adam(config.env_lr), env.store());
        Ok(TrainState {
            config,
            iteration: 0,
            policy,
            env,
            policy_adam,
            env_adam,
            accuracy_window: VecDeque::new(),
        })
    }

    fn updates_at(&self, iteration: u64) -> (bool, bool) {
        let (p, e) = self.config.update_ratio;
        let cycle = u64::from(p.max(e));
        let pos = iteration % cycle;
        let policy = pos < u64::from(p) && iteration >= self.config.warmup;
        (policy, pos < u64::from(e))
    }

    /// One alternating update on a batch of covers.
    pub fn train_step(&mut self, covers: &[JpegImage]) -> Result<StepReport> {
        let it = self.iteration;
        let n = covers.len();
        let (update_policy, update_env) = self.updates_at(it);
        let q = self.policy.forward(covers, true)?;
        let mut actions = Vec::with_capacity(n);
        let mut stegos = Vec::with_capacity(n);
        for (i, (cover, qi)) in covers.iter().zip(&q).enumerate() {
            let m = simulate_embedding(&PolicyTensor::from_change_probabilities(qi), derive_seed(self.config.seed, it, i as u64));
            stegos.push(cover.apply_modifications(&m)?);
            actions.push(m);
        }
        let xs: Vec<_> = covers.iter().map(decompress).collect();
        let ys: Vec<_> = stegos.iter().map(decompress).collect();
        let env_out = self.env.forward(&xs, &ys, true)?;
        let (env_grads, gmaps) = self.env.gradient_maps(&stegos)?;

        let mut tel = Telemetry {
            iteration: it + 1,
            l_a: 0.0,
            l_r: 0.0,
            l_c: 0.0,
            l_e: env_out.loss,
            mean_reward: 0.0,
            entropy: 0.0,
            capacity: 0.0,
            env_accuracy: env_out.accuracy,
        };
        let mut rewards = Vec::with_capacity(n);
        let mut dq = Vec::with_capacity(n);
        for i in 0..n {
            let r = reward_map(&actions[i], &gmaps[i], self.config.xi)?;
            let cap = self.config.payload.resolve(&covers[i]);
            let l = policy_loss(&q[i], &actions[i], &r, cap, self.config.alpha, self.config.beta)?;
            tel.l_a += l.l_a / n as f64;
            tel.l_r += l.l_r / n as f64;
            tel.l_c += l.l_c / n as f64;
            tel.entropy += l.entropy / n as f64;
            tel.capacity += cap / n as f64;
            tel.mean_reward += r.iter().sum::<f64>() / r.len() as f64 / n as f64;
            dq.push(l.dq.map(|v| v / n as f64));
            rewards.push(r);
        }
        for (name, v) in [("l_A", tel.l_a), ("l_E", tel.l_e), ("entropy", tel.entropy)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{name} at iteration {}: {}",
                    it + 1,
                    tel.csv_row()
                )));
            }
        }
        if update_policy {
            let grads = self.policy.backward(&dq)?;
            self.policy_adam.step(self.policy.store_mut(), &grads)?;
        }
        if update_env {
            self.env_adam.step(self.env.store_mut(), &env_grads)?;
        }
        self.iteration += 1;

        let mut warnings = Vec::new();
        self.accuracy_window.push_back(env_out.accuracy);
        if self.accuracy_window.len() > GUARD_WINDOW {
            self.accuracy_window.pop_front();
        }
        if self.accuracy_window.len() == GUARD_WINDOW {
            let acc = self.accuracy_window.iter().sum::<f64>() / GUARD_WINDOW as f64;
            if !(0.5..=0.99).contains(&acc) {
                let w = format!("iteration {}: environment accuracy {acc:.3} over the last {GUARD_WINDOW} steps", it + 1);
                log::warn!("{w}");
                warnings.push(w);
            }
        }
        Ok(StepReport {
            telemetry: tel,
            q,
            actions,
            rewards,
            warnings,
        })
    }

    /// Runs `iterations` steps over `data` in the seeded epoch order.
    pub fn run(
        &mut self,
        data: &[JpegImage],
        iterations: u64,
        mut on_step: impl FnMut(&TrainState, &StepReport) -> Result<()>,
    ) -> Result<Vec<Telemetry>> {
        let mut out = Vec::with_capacity(iterations as usize);
        for _ in 0..iterations {
            let idx = batch_indices(self.config.seed, self.iteration, self.config.batch, data.len())?;
            let batch: Vec<JpegImage> = idx.iter().map(|&i| data[i].clone()).collect();
            let report = self.train_step(&batch)?;
            on_step(self, &report)?;
            out.push(report.telemetry);
        }
        Ok(out)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.iteration,
            stores: vec![
                ("policy".into(), self.policy.store().clone()),
                ("env".into(), self.env.store().clone()),
            ],
            optimizers: vec![
                ("policy".into(), self.policy_adam.clone()),
                ("env".into(), self.env_adam.clone()),
            ],
            config: crate::config::to_kv(&self.config),
        }
    }

    /// Rebuilds a state from a checkpoint; the configuration comes from the
    /// checkpoint itself.
    pub fn restore(ckpt: &Checkpoint) -> Result<Self> {
        let config = crate::config::from_kv(&ckpt.config)?;
        let mut s = TrainState::new(config)?;
        s.policy.store_mut().load_from(ckpt.store("policy")?)?;
        s.env.store_mut().load_from(ckpt.store("env")?)?;
        s.policy_adam = ckpt.optimizer("policy")?.clone();
        s.env_adam = ckpt.optimizer("env")?.clone();
        if s.policy_adam.m.len() != s.policy.store().len() || s.env_adam.m.len() != s.env.store().len() {
            return Err(Error::Format("optimizer state does not match the networks".into()));
        }
        s.iteration = ckpt.step;
        Ok(s)
    }
}

/// Policy network alone, restored from a checkpoint (no environment).
pub fn load_policy(ckpt: &Checkpoint) -> Result<PolicyNet> {
    let config = crate::config::from_kv(&ckpt.config)?;
    let mut net = PolicyNet::new(config.policy_config())?;
    net.store_mut().load_from(ckpt.store("policy")?)?;
    Ok(net)
}

/// Deployment costs `ρ = ln(2/q − 2)` from the policy in inference mode.
pub fn export_costs(policy: &mut PolicyNet, image: &JpegImage) -> Result<CostMap> {
    let q = policy.forward(std::slice::from_ref(image), false)?;
    Ok(costs_from_policy(&q[0]))
}

/// The data permutation of an epoch.
pub fn epoch_permutation(seed: u64, epoch: u64, len: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000_0000_0000);
    rng.set_stream(epoch);
    perm.shuffle(&mut rng);
    perm
}

/// Dataset indices of the batch consumed at `iteration`.
pub fn batch_indices(seed: u64, iteration: u64, batch: usize, len: usize) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let start = iteration as usize * batch;
    let mut out = Vec::with_capacity(batch);
    let mut cached: Option<(usize, Vec<usize>)> = None;
    for g in start..start + batch {
        let epoch = g / len;
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            cached = Some((epoch, epoch_permutation(seed, epoch as u64, len)));
        }
        out.push(cached.as_ref().unwrap().1[g % len]);
    }
    Ok(out)
}

/// Telemetry as CSV text with a header.
pub fn telemetry_csv(rows: &[Telemetry]) -> String {
    let mut s = String::from(TELEMETRY_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

const SYNTHETIC_SEED_BASE: u64 = 1000;

/// Images under `dir` accepted by [`read_image`], sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.is_file() && is_image_path(p));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!("no images in {}", dir.display())));
    }
    Ok(paths)
}

/// Training covers: every image in `image_dir`, or a fixed set of synthetic
/// half-smooth/half-noisy covers.
pub fn load_dataset(config: &TrainConfig) -> Result<Vec<JpegImage>> {
    match &config.image_dir {
        Some(dir) => list_images(Path::new(dir))?.iter().map(|p| read_image(p)).collect(),
        None => (0..config.synthetic_images as u64)
            .map(|i| synthetic_cover(config.image_size, config.qf, SYNTHETIC_SEED_BASE + i).map(|c| c.0))
            .collect(),
    }
}

/// JPEG-compresses a pixel plane (no clamping; coefficients rounded).
pub fn compress(pixels: &Grid<f64>, qf: u32) -> Result<JpegImage> {
    let table = QuantTable::from_quality(qf)?;
    let coef = dequantize_inverse(pixels, &table, true).map(|v| v.round() as i32);
    JpegImage::new(coef, table)
}

/// A synthetic cover: one half smooth gradient, the other half noisy texture.
/// Also returns the mask of the noisy half.
pub fn synthetic_cover(size: usize, qf: u32, seed: u64) -> Result<(JpegImage, Grid<bool>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orientation = rng.gen_range(0..4);
    let base = rng.gen_range(60.0..190.0);
    let (gy, gx) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
    let amp = rng.gen_range(25.0..45.0);
    let half = size / 2;
    let mask = Grid::from_fn(size, size, |i, j| match orientation {
        0 => j >= half,
        1 => j < half,
        2 => i >= half,
        _ => i < half,
    });
    let pixels = Grid::from_fn(size, size, |i, j| {
        let smooth = base + gy * i as f64 + gx * j as f64;
        if *mask.get(i, j) {
            (smooth + rng.gen_range(-amp..amp)).clamp(0.0, 255.0)
        } else {
            smooth
        }
    });
    Ok((compress(&pixels, qf)?, mask))
}

/// Mean of `q` over the masked and unmasked coefficients.
pub fn masked_means(q: &Grid<f64>, mask: &Grid<bool>) -> (f64, f64) {
    let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &m) in q.iter().zip(mask.iter()) {
        if m {
            s1 += v;
            n1 += 1;
        } else {
            s0 += v;
            n0 += 1;
        }
    }
    (s1 / n1.max(1) as f64, s0 / n0.max(1) as f64)
}
