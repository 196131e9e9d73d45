//! Cycle-consistent least-squares GAN training.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nc2c_core::rng::rng_for;

use crate::checkpoint::save_checkpoint;
use crate::error::{GanError, Result};
use crate::layers::{Param, Sequential};
use crate::loss::{cycle_loss, identity_loss, lsgan_loss, LossWeights};
use crate::nets::{DiscriminatorSpec, GeneratorSpec};
use crate::optim::{learning_rate, Adam};
use crate::pool::ImagePool;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const NET_STREAM: u64 = 0x6e65_7473;
const EPOCH_STREAM: u64 = 0x6570_6f63;

/// How non-contrast and contrast images are drawn into a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Independent shuffles of the two domains.
    #[default]
    Unpaired,
    /// Item `i` of one domain always meets item `i` of the other.
    Paired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Linear decay to zero over the second half of training (or from
    /// `decay_start` when set).
    pub lr_decay: bool,
    pub decay_start: Option<usize>,
    pub weights: LossWeights,
    pub batch_size: usize,
    pub pool_size: usize,
    /// Epochs between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub pairing: Pairing,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            lr_decay: true,
            decay_start: None,
            weights: LossWeights::default(),
            batch_size: 1,
            pool_size: 50,
            checkpoint_every: 25,
            pairing: Pairing::Unpaired,
            generator: GeneratorSpec::full(),
            discriminator: DiscriminatorSpec::full(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Narrow networks for ≤ 64×64 images.
    pub fn desk() -> Self {
        Self { generator: GeneratorSpec::desk(), discriminator: DiscriminatorSpec::desk(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(GanError::Config(format!("learning rate must be finite and ≥ 0, got {}", self.lr)));
        }
        for b in [self.beta1, self.beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(GanError::Config(format!("moment decay must be in [0, 1), got {b}")));
            }
        }
        if self.batch_size == 0 {
            return Err(GanError::Config("batch size must be positive".into()));
        }
        if matches!(self.decay_start, Some(s) if s > self.epochs) {
            return Err(GanError::Config("decay start is after the last epoch".into()));
        }
        self.weights.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()
    }

    pub fn decay_start(&self) -> Option<usize> {
        self.lr_decay.then(|| self.decay_start.unwrap_or(self.epochs / 2))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Both generators and both discriminators.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleGan<T> {
    pub g_nc2ct: Sequential<T>,
    pub g_ct2nc: Sequential<T>,
    pub d_ct: Sequential<T>,
    pub d_nc: Sequential<T>,
}

impl<T: Scalar> CycleGan<T> {
    pub fn new(generator: &GeneratorSpec, discriminator: &DiscriminatorSpec, seed: u64) -> Result<Self> {
        let rng = |i| rng_for(seed, &[NET_STREAM, i]);
        Ok(Self {
            g_nc2ct: generator.build(&mut rng(0))?,
            g_ct2nc: generator.build(&mut rng(1))?,
            d_ct: discriminator.build(&mut rng(2))?,
            d_nc: discriminator.build(&mut rng(3))?,
        })
    }

    pub fn networks(&self) -> [&Sequential<T>; 4] {
        [&self.g_nc2ct, &self.g_ct2nc, &self.d_ct, &self.d_nc]
    }

    pub fn networks_mut(&mut self) -> [&mut Sequential<T>; 4] {
        [&mut self.g_nc2ct, &mut self.g_ct2nc, &mut self.d_ct, &mut self.d_nc]
    }

    pub fn zero_grad(&mut self) {
        self.networks_mut().into_iter().for_each(Sequential::zero_grad);
    }

    fn generator_params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.g_nc2ct.params_mut();
        p.extend(self.g_ct2nc.params_mut());
        p
    }

    fn discriminator_params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.d_ct.params_mut();
        p.extend(self.d_nc.params_mut());
        p
    }
}

/// Per-term multipliers of the generator objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorCoefficients {
    pub adv_ct: f64,
    pub adv_nc: f64,
    pub cycle_nc: f64,
    pub cycle_ct: f64,
    pub identity_nc: f64,
    pub identity_ct: f64,
}

impl GeneratorCoefficients {
    pub fn from_weights(w: &LossWeights) -> Self {
        Self {
            adv_ct: 1.0,
            adv_nc: 1.0,
            cycle_nc: w.cycle,
            cycle_ct: w.cycle,
            identity_nc: w.identity,
            identity_ct: w.identity,
        }
    }
}

/// Unweighted generator loss terms and the translated batches.
#[derive(Debug, Clone)]
pub struct GeneratorPass<T> {
    pub adv_ct: f64,
    pub adv_nc: f64,
    pub cycle_nc: f64,
    pub cycle_ct: f64,
    pub identity_nc: f64,
    pub identity_ct: f64,
    pub fake_ct: Tensor<T>,
    pub fake_nc: Tensor<T>,
}

impl<T> GeneratorPass<T> {
    pub fn objective(&self, c: &GeneratorCoefficients) -> f64 {
        c.adv_ct * self.adv_ct
            + c.adv_nc * self.adv_nc
            + c.cycle_nc * self.cycle_nc
            + c.cycle_ct * self.cycle_ct
            + c.identity_nc * self.identity_nc
            + c.identity_ct * self.identity_ct
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("g_adv_ct", self.adv_ct),
            ("g_adv_nc", self.adv_nc),
            ("cycle_nc", self.cycle_nc),
            ("cycle_ct", self.cycle_ct),
            ("identity_nc", self.identity_nc),
            ("identity_ct", self.identity_ct),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Evaluates the generator objective on `(nc, ct)` and, when `grad` is set,
/// overwrites every network's gradient with that of `Σ cᵢ·termᵢ` (the
/// discriminators receive gradients too; the generator step ignores them).
pub fn generator_pass<T: Scalar>(
    nets: &mut CycleGan<T>,
    nc: &Tensor<T>,
    ct: &Tensor<T>,
    coeffs: &GeneratorCoefficients,
    grad: bool,
) -> Result<GeneratorPass<T>> {
    let (fake_ct, t_fake_ct) = nets.g_nc2ct.forward(nc)?;
    let (rec_nc, t_rec_nc) = nets.g_ct2nc.forward(&fake_ct)?;
    let (fake_nc, t_fake_nc) = nets.g_ct2nc.forward(ct)?;
    let (rec_ct, t_rec_ct) = nets.g_nc2ct.forward(&fake_nc)?;
    let (idt_ct, t_idt_ct) = nets.g_nc2ct.forward(ct)?;
    let (idt_nc, t_idt_nc) = nets.g_ct2nc.forward(nc)?;
    let (s_ct, t_s_ct) = nets.d_ct.forward(&fake_ct)?;
    let (s_nc, t_s_nc) = nets.d_nc.forward(&fake_nc)?;
    let (adv_ct, ds_ct) = lsgan_loss(&s_ct, 1.0);
    let (adv_nc, ds_nc) = lsgan_loss(&s_nc, 1.0);
    let (cycle_nc, dcyc_nc) = cycle_loss(&rec_nc, nc)?;
    let (cycle_ct, dcyc_ct) = cycle_loss(&rec_ct, ct)?;
    let (identity_ct, didt_ct) = identity_loss(&idt_ct, ct)?;
    let (identity_nc, didt_nc) = identity_loss(&idt_nc, nc)?;
    let pass = GeneratorPass { adv_ct, adv_nc, cycle_nc, cycle_ct, identity_nc, identity_ct, fake_ct, fake_nc };
    if !grad || pass.first_non_finite().is_some() {
        return Ok(pass);
    }
    let c = |x: f64| T::from_f64(x);
    nets.zero_grad();
    let mut d_fake_ct = nets.d_ct.backward(t_s_ct, ds_ct.scale(c(coeffs.adv_ct)));
    d_fake_ct.add_assign(&nets.g_ct2nc.backward(t_rec_nc, dcyc_nc.scale(c(coeffs.cycle_nc))));
    nets.g_nc2ct.backward(t_fake_ct, d_fake_ct);
    let mut d_fake_nc = nets.d_nc.backward(t_s_nc, ds_nc.scale(c(coeffs.adv_nc)));
    d_fake_nc.add_assign(&nets.g_nc2ct.backward(t_rec_ct, dcyc_ct.scale(c(coeffs.cycle_ct))));
    nets.g_ct2nc.backward(t_fake_nc, d_fake_nc);
    if coeffs.identity_ct != 0.0 {
        nets.g_nc2ct.backward(t_idt_ct, didt_ct.scale(c(coeffs.identity_ct)));
    }
    if coeffs.identity_nc != 0.0 {
        nets.g_ct2nc.backward(t_idt_nc, didt_nc.scale(c(coeffs.identity_nc)));
    }
    Ok(pass)
}

/// `½·(lsgan(D(real), 1) + lsgan(D(fake), 0))`, accumulating into `d`'s gradients.
pub fn discriminator_pass<T: Scalar>(d: &mut Sequential<T>, real: &Tensor<T>, fake: &Tensor<T>, grad: bool) -> Result<f64> {
    let half = T::from_f64(0.5);
    let (s_real, t_real) = d.forward(real)?;
    let (l_real, g_real) = lsgan_loss(&s_real, 1.0);
    let (s_fake, t_fake) = d.forward(fake)?;
    let (l_fake, g_fake) = lsgan_loss(&s_fake, 0.0);
    let loss = 0.5 * (l_real + l_fake);
    if grad && loss.is_finite() {
        d.backward(t_real, g_real.scale(half));
        d.backward(t_fake, g_fake.scale(half));
    }
    Ok(loss)
}

/// One row of the loss ledger; `g_adv` is the mean of the two adversarial terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub iteration: u64,
    pub g_adv: f64,
    pub d_ct: f64,
    pub d_nc: f64,
    pub cycle_nc: f64,
    pub cycle_ct: f64,
    pub identity_nc: f64,
    pub identity_ct: f64,
}

pub const LEDGER_COLUMNS: [&str; 8] =
    ["iteration", "g_adv", "d_ct", "d_nc", "cycle_nc", "cycle_ct", "identity_nc", "identity_ct"];

/// Header row always written, so an empty ledger is still a valid table.
pub fn write_ledger(rows: &[LedgerRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(LEDGER_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ledger(path: &Path) -> Result<Vec<LedgerRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Training images: `[1, 1, h, w]` tensors normalised to `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub nc: Vec<Tensor<T>>,
    pub ct: Vec<Tensor<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn validate(&self, config: &TrainConfig) -> Result<()> {
        let first = self
            .nc
            .first()
            .ok_or_else(|| GanError::Config("training set is empty".into()))?;
        if self.ct.is_empty() {
            return Err(GanError::Config("training set has no contrast images".into()));
        }
        if config.pairing == Pairing::Paired && self.nc.len() != self.ct.len() {
            return Err(GanError::Config(format!(
                "paired training needs equal counts, got {} and {}",
                self.nc.len(),
                self.ct.len()
            )));
        }
        let [_, _, h, w] = first.shape();
        let m = config.generator.size_multiple();
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(GanError::Config(format!("image size {h}×{w} is not a positive multiple of {m}")));
        }
        for t in self.nc.iter().chain(&self.ct) {
            t.ensure_shape([1, 1, h, w])?;
            if !t.data().iter().all(|&v| v >= -T::one() && v <= T::one()) {
                return Err(GanError::Config("training images must be normalised to [−1, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Networks, optimiser moments, history pools, counters and the ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub config: TrainConfig,
    pub nets: CycleGan<T>,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub pool_ct: ImagePool<T>,
    pub pool_nc: ImagePool<T>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed iterations.
    pub iteration: u64,
    pub ledger: Vec<LedgerRow>,
}

#[derive(Debug, Clone, Serialize)]
struct BatchDump<'a, T> {
    iteration: u64,
    term: &'a str,
    nc: &'a Tensor<T>,
    ct: &'a Tensor<T>,
}

impl<T: Scalar + Serialize> TrainState<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let nets = CycleGan::new(&config.generator, &config.discriminator, config.seed)?;
        Ok(Self {
            opt_g: Adam::new(config.beta1, config.beta2),
            opt_d: Adam::new(config.beta1, config.beta2),
            pool_ct: ImagePool::new(config.pool_size),
            pool_nc: ImagePool::new(config.pool_size),
            nets,
            config,
            epoch: 0,
            iteration: 0,
            ledger: Vec::new(),
        })
    }

    fn non_finite(&self, term: &'static str, nc: &Tensor<T>, ct: &Tensor<T>, dump_dir: Option<&Path>) -> GanError {
        let iteration = self.iteration + 1;
        let dump = dump_dir.and_then(|dir| {
            let path = dir.join(format!("nonfinite_{iteration:08}.json"));
            let body = serde_json::to_vec(&BatchDump { iteration, term, nc, ct }).ok()?;
            std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, body)).ok()?;
            Some(path)
        });
        GanError::NonFinite { iteration, term, dump }
    }

    /// Generator update, then discriminator update on pooled fakes; appends
    /// one ledger row and leaves all gradients zero. On a non-finite loss or
    /// gradient no parameter is updated.
    pub fn training_step<R: Rng>(
        &mut self,
        nc: &Tensor<T>,
        ct: &Tensor<T>,
        lr: f64,
        rng: &mut R,
        dump_dir: Option<&Path>,
    ) -> Result<LedgerRow> {
        let coeffs = GeneratorCoefficients::from_weights(&self.config.weights);
        let pass = generator_pass(&mut self.nets, nc, ct, &coeffs, true)?;
        if let Some(term) = pass.first_non_finite() {
            return Err(self.non_finite(term, nc, ct, dump_dir));
        }
        if !grads_finite(self.nets.generator_params_mut()) {
            return Err(self.non_finite("generator gradient", nc, ct, dump_dir));
        }
        self.opt_g.step(self.nets.generator_params_mut(), lr);

        let fake_ct = self.pool_ct.query(&pass.fake_ct, rng);
        let fake_nc = self.pool_nc.query(&pass.fake_nc, rng);
        self.nets.d_ct.zero_grad();
        self.nets.d_nc.zero_grad();
        let d_ct = discriminator_pass(&mut self.nets.d_ct, ct, &fake_ct, true)?;
        let d_nc = discriminator_pass(&mut self.nets.d_nc, nc, &fake_nc, true)?;
        if !d_ct.is_finite() {
            return Err(self.non_finite("d_ct", nc, ct, dump_dir));
        }
        if !d_nc.is_finite() {
            return Err(self.non_finite("d_nc", nc, ct, dump_dir));
        }
        if !grads_finite(self.nets.discriminator_params_mut()) {
            return Err(self.non_finite("discriminator gradient", nc, ct, dump_dir));
        }
        self.opt_d.step(self.nets.discriminator_params_mut(), lr);
        self.nets.zero_grad();

        self.iteration += 1;
        let row = LedgerRow {
            iteration: self.iteration,
            g_adv: 0.5 * (pass.adv_ct + pass.adv_nc),
            d_ct,
            d_nc,
            cycle_nc: pass.cycle_nc,
            cycle_ct: pass.cycle_ct,
            identity_nc: pass.identity_nc,
            identity_ct: pass.identity_ct,
        };
        self.ledger.push(row);
        Ok(row)
    }

    /// Runs epochs `self.epoch..config.epochs`. Each epoch draws its batch
    /// order and pool decisions from a generator keyed by (seed, epoch), so
    /// resuming from a checkpoint continues exactly as an uninterrupted run.
    pub fn fit(&mut self, data: &Dataset<T>, options: &mut FitOptions<'_, T>) -> Result<()> {
        data.validate(&self.config)?;
        let epochs = self.config.epochs;
        while self.epoch < epochs {
            let epoch = self.epoch;
            let lr = learning_rate(self.config.lr, epoch, epochs, self.config.decay_start());
            let mut rng = rng_for(self.config.seed, &[EPOCH_STREAM, epoch as u64]);
            let (nc_order, ct_order) = epoch_order(data, self.config.pairing, &mut rng);
            for (a, b) in nc_order.chunks(self.config.batch_size).zip(ct_order.chunks(self.config.batch_size)) {
                let nc = Tensor::stack(&a.iter().map(|&i| &data.nc[i]).collect::<Vec<_>>())?;
                let ct = Tensor::stack(&b.iter().map(|&i| &data.ct[i]).collect::<Vec<_>>())?;
                self.training_step(&nc, &ct, lr, &mut rng, options.dump_dir.as_deref())?;
            }
            self.epoch += 1;
            if let Some(dir) = &options.checkpoint_dir {
                let every = self.config.checkpoint_every;
                if (every > 0 && self.epoch % every == 0) || self.epoch == epochs {
                    std::fs::create_dir_all(dir)?;
                    save_checkpoint(self, &dir.join(checkpoint_name(self.epoch)))?;
                }
            }
            if let Some(cb) = options.on_epoch.as_mut() {
                cb(self);
            }
        }
        Ok(())
    }
}

fn grads_finite<T: Scalar>(params: Vec<&mut Param<T>>) -> bool {
    params.iter().all(|p| p.grad.iter().all(|g| g.is_finite()))
}

/// Per-epoch visiting order of each domain; lengths are equal.
fn epoch_order<T, R: Rng>(data: &Dataset<T>, pairing: Pairing, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut nc: Vec<usize> = (0..data.nc.len()).collect();
    nc.shuffle(rng);
    let ct = match pairing {
        Pairing::Paired => nc.clone(),
        Pairing::Unpaired => {
            let mut ct: Vec<usize> = (0..data.ct.len()).collect();
            ct.shuffle(rng);
            (0..nc.len()).map(|i| ct[i % ct.len()]).collect()
        }
    };
    (nc, ct)
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoint_e{epoch:04}.ckpt")
}

/// Side effects of [`TrainState::fit`].
#[derive(Default)]
pub struct FitOptions<'a, T> {
    pub checkpoint_dir: Option<PathBuf>,
    /// Where a non-finite batch is dumped before aborting.
    pub dump_dir: Option<PathBuf>,
    #[allow(clippy::type_complexity)]
    pub on_epoch: Option<Box<dyn FnMut(&TrainState<T>) + 'a>>,
}

/// Trains from freshly initialised networks; `epochs = 0` returns them untouched.
pub fn train<T: Scalar + Serialize>(data: &Dataset<T>, config: TrainConfig) -> Result<TrainState<T>> {
    let mut state = TrainState::new(config)?;
    state.fit(data, &mut FitOptions::default())?;
    Ok(state)
}

/// Translates a normalised non-contrast batch `[n, 1, h, w]` to contrast.
pub fn infer_nc2c<T: Scalar>(state: &TrainState<T>, nc: &Tensor<T>) -> Result<Tensor<T>> {
    if state.iteration == 0 {
        return Err(GanError::State("generator has not been trained".into()));
    }
    let [_, c, h, w] = nc.shape();
    let m = state.config.generator.size_multiple();
    if c != 1 || h % m != 0 || w % m != 0 {
        return Err(GanError::Shape { expected: vec![1, m, m], found: vec![c, h, w] });
    }
    if !nc.is_finite() {
        return Err(GanError::Config("input contains non-finite values".into()));
    }
    state.nets.g_nc2ct.apply(nc)
}
