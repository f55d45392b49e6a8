use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{disc_loss, gen_loss, gradient_penalty, loss_super, loss_trans};
use super::model::{BnMode, DiscriminatorNet, TransportNet};
use super::NetError;
use crate::data::Fate;
use crate::math::{Adam, AdamConfig, MathError, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// weight of the Euclidean transport cost
    pub lambda_trans: f64,
    /// weight of the supervised pair loss
    pub lambda_super: f64,
    /// weight of the discriminator gradient penalty
    pub lambda_gp: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// number of supervised pairs requested from the pairing pool
    pub n_pairs: usize,
    pub seed: u64,
    pub hidden: usize,
    pub use_transport_cost: bool,
    pub use_supervised: bool,
    pub use_gan: bool,
    /// append a one-hot fate channel to both networks' inputs
    pub conditional: bool,
    /// epochs per half of the convergence comparison
    pub convergence_window: usize,
    pub convergence_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_trans: 0.6,
            lambda_super: 1.0,
            lambda_gp: 10.0,
            lr: 1e-4,
            batch_size: 64,
            max_epochs: 2000,
            n_pairs: 300,
            seed: 0,
            hidden: 128,
            use_transport_cost: true,
            use_supervised: true,
            use_gan: true,
            conditional: false,
            convergence_window: 50,
            convergence_tol: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::Config(m));
        for (name, v) in [
            ("lambda_trans", self.lambda_trans),
            ("lambda_super", self.lambda_super),
            ("lambda_gp", self.lambda_gp),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive".into());
        }
        if self.convergence_window == 0 || !(self.convergence_tol >= 0.0) {
            return bad("convergence window must be positive and tolerance non-negative".into());
        }
        if !(self.use_gan || self.use_transport_cost || self.use_supervised) {
            return bad("every loss term is disabled".into());
        }
        Ok(())
    }

    /// Effective weights `(λ1, GAN, λ2)` after the ablation flags.
    pub fn effective_weights(&self) -> (f64, f64, f64) {
        let on = |b: bool| if b { 1.0 } else { 0.0 };
        (
            on(self.use_transport_cost) * self.lambda_trans,
            on(self.use_gan),
            on(self.use_supervised) * self.lambda_super,
        )
    }
}

/// The trainable methods: the full model and the three learned baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SuperOt,
    Cgan,
    GanOt,
    Supervised,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::SuperOt, Method::Cgan, Method::GanOt, Method::Supervised];

    /// Applies the method's fixed flags to `base`. `SuperOt` keeps the flags as given.
    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Method::SuperOt => {}
            Method::Cgan => {
                cfg.use_gan = true;
                cfg.use_transport_cost = false;
                cfg.use_supervised = false;
                cfg.conditional = true;
            }
            Method::GanOt => {
                cfg.use_gan = true;
                cfg.use_transport_cost = true;
                cfg.use_supervised = false;
                cfg.conditional = true;
            }
            Method::Supervised => {
                cfg.use_gan = false;
                cfg.use_transport_cost = false;
                cfg.use_supervised = true;
                cfg.conditional = false;
            }
        }
        cfg
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::SuperOt => "super_ot",
            Method::Cgan => "cgan",
            Method::GanOt => "gan_ot",
            Method::Supervised => "supervised",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| NetError::Config(format!("unknown method {s:?}")))
    }
}

/// Training inputs in PCA space. Pair indices refer to rows of `day2` and `day46`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub day2: Tensor,
    pub day46: Tensor,
    pub pairs: Vec<(usize, usize)>,
    /// per-row fates, needed by conditional training
    pub day2_fates: Option<Vec<Fate>>,
    pub day46_fates: Option<Vec<Fate>>,
}

impl TrainData {
    pub fn new(day2: Tensor, day46: Tensor, pairs: Vec<(usize, usize)>) -> Self {
        Self { day2, day46, pairs, day2_fates: None, day46_fates: None }
    }

    pub fn with_fates(mut self, day2: Vec<Fate>, day46: Vec<Fate>) -> Self {
        self.day2_fates = Some(day2);
        self.day46_fates = Some(day46);
        self
    }

    fn validate(&self, cfg: &TrainConfig) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::Contract(m));
        if self.day2.cols() != self.day46.cols() {
            return bad(format!(
                "day-2 width {} differs from day-4/6 width {}",
                self.day2.cols(),
                self.day46.cols()
            ));
        }
        if self.day2.rows() < 2 || self.day46.rows() < 2 {
            return bad("training needs at least two cells per timepoint".into());
        }
        if let Some(&(i, j)) =
            self.pairs.iter().find(|&&(i, j)| i >= self.day2.rows() || j >= self.day46.rows())
        {
            return bad(format!("pair ({i}, {j}) out of range"));
        }
        if cfg.use_supervised && self.pairs.is_empty() {
            return bad("supervised loss enabled without pairs".into());
        }
        if cfg.conditional {
            match (&self.day2_fates, &self.day46_fates) {
                (Some(a), Some(b)) if a.len() == self.day2.rows() && b.len() == self.day46.rows() => {}
                (Some(_), Some(_)) => return bad("fate vectors do not match the cell counts".into()),
                _ => return bad("conditional training needs fate labels for both timepoints".into()),
            }
        }
        Ok(())
    }
}

/// One-hot fate rows, `n×2`.
pub fn one_hot_rows(fates: &[Fate]) -> Tensor {
    Tensor::from_fn(fates.len(), 2, |i, j| fates[i].one_hot()[j])
}

/// The class channel used when a conditional net is applied to unlabeled cells.
pub fn neutral_condition(n: usize) -> Tensor {
    Tensor::filled(n, 2, 0.5)
}

/// Per-epoch means of every loss component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_trans: f64,
    pub l_gan_d: f64,
    pub l_gan_g: f64,
    pub l_super: f64,
    pub gp: f64,
    /// the transport-step objective as optimized
    pub total: f64,
}

pub const HISTORY_HEADER: &str = "epoch,l_trans,l_gan_d,l_gan_g,l_super,gp,total";

pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in history {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch, r.l_trans, r.l_gan_d, r.l_gan_g, r.l_super, r.gp, r.total
        ));
    }
    s
}

pub fn history_from_csv(text: &str) -> Result<Vec<EpochRecord>, NetError> {
    let mut lines = text.lines();
    if lines.next() != Some(HISTORY_HEADER) {
        return Err(NetError::Format("loss history header mismatch".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            let bad = || NetError::Format(format!("history line {}: {line:?}", n + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad());
            }
            let v = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                l_trans: v(1)?,
                l_gan_d: v(2)?,
                l_gan_g: v(3)?,
                l_super: v(4)?,
                gp: v(5)?,
                total: v(6)?,
            })
        })
        .collect()
}

/// Loss values of a single transport step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLosses {
    pub l_trans: f64,
    pub l_gan_g: f64,
    pub l_super: f64,
    pub total: f64,
}

/// Complete training state; serializable as a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub method: Method,
    pub cfg: TrainConfig,
    pub transport: TransportNet,
    pub disc: Option<DiscriminatorNet>,
    pub opt_t: Adam,
    pub opt_d: Option<Adam>,
    pub history: Vec<EpochRecord>,
    pub converged: bool,
}

const STREAM_INIT_T: u64 = 0;
const STREAM_INIT_D: u64 = 1;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Gradients for `params`, zeros where the loss does not reach.
fn gradients(tape: &mut Tape, loss: Var, params: &[Var]) -> Result<Vec<Tensor>, MathError> {
    let grads = tape.grad(loss, params, false)?;
    Ok(grads
        .into_iter()
        .zip(params)
        .map(|(g, &p)| match g {
            Some(g) => tape.value(g).clone(),
            None => {
                let [r, c] = tape.value(p).shape();
                Tensor::zeros(r, c)
            }
        })
        .collect())
}

fn with_cond(x: &Tensor, cond: Option<&Tensor>) -> Result<Tensor, MathError> {
    match cond {
        Some(c) => x.hstack(c),
        None => Ok(x.clone()),
    }
}

impl Trainer {
    /// Fresh networks for PCA dimension `k`; `cfg` is taken after
    /// [`Method::configure`].
    pub fn new(method: Method, cfg: &TrainConfig, k: usize) -> Result<Self, NetError> {
        let cfg = method.configure(cfg);
        cfg.validate()?;
        if k == 0 {
            return Err(NetError::Config("PCA dimension must be positive".into()));
        }
        let cond_dim = if cfg.conditional { 2 } else { 0 };
        let transport = TransportNet::new(k, cfg.hidden, cond_dim, &mut stream_rng(cfg.seed, STREAM_INIT_T));
        let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
        let opt_t = Adam::new(adam, &transport.params());
        let (disc, opt_d) = if cfg.use_gan {
            let d = DiscriminatorNet::new(k + cond_dim, cfg.hidden, &mut stream_rng(cfg.seed, STREAM_INIT_D));
            let o = Adam::new(adam, &d.params());
            (Some(d), Some(o))
        } else {
            (None, None)
        };
        Ok(Self { method, cfg, transport, disc, opt_t, opt_d, history: Vec::new(), converged: false })
    }

    pub fn epoch(&self) -> usize {
        self.history.len()
    }

    pub fn is_finished(&self) -> bool {
        self.converged || self.epoch() >= self.cfg.max_epochs
    }

    /// Discriminator update on one batch. Returns `(disc_loss, penalty)`.
    pub fn disc_step(
        &mut self,
        x: &Tensor,
        x_cond: Option<&Tensor>,
        real: &Tensor,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, f64), NetError> {
        let fake = self.transport.apply(x, x_cond)?;
        let fake = with_cond(&fake, x_cond)?;
        let disc = self.disc.as_mut().ok_or_else(|| NetError::Contract("no discriminator".into()))?;
        let mut tape = Tape::new();
        let dp = disc.bind(&mut tape, true);
        let rv = tape.constant(real.clone());
        let fv = tape.constant(fake.clone());
        let (d_real, s_real) = disc.forward(&mut tape, &dp, rv, BnMode::Train)?;
        let (d_fake, s_fake) = disc.forward(&mut tape, &dp, fv, BnMode::Train)?;
        let dl = disc_loss(&mut tape, d_real, d_fake)?;
        let (loss, gp) = if self.cfg.lambda_gp > 0.0 {
            let d: &DiscriminatorNet = disc;
            let mut critic = |t: &mut Tape, v: Var| d.forward(t, &dp, v, BnMode::Train).map(|o| o.0);
            let gp = gradient_penalty(&mut tape, &mut critic, real, &fake, rng)?;
            let weighted = tape.scale(gp, self.cfg.lambda_gp)?;
            (tape.add(dl, weighted)?, tape.item(gp)?)
        } else {
            (dl, 0.0)
        };
        let grads = gradients(&mut tape, loss, &dp)?;
        let dl = tape.item(dl)?;
        let opt = self.opt_d.as_mut().expect("optimizer exists with discriminator");
        let grad_refs: Vec<&Tensor> = grads.iter().collect();
        opt.step(&mut disc.params_mut(), &grad_refs)?;
        disc.update_running(&s_real);
        disc.update_running(&s_fake);
        Ok((dl, gp))
    }

    /// Transport update on one day-2 batch and one pair batch.
    ///
    /// Disabled terms are not placed in the optimized objective; their values
    /// are still reported where they can be evaluated.
    pub fn transport_step(
        &mut self,
        x: &Tensor,
        x_cond: Option<&Tensor>,
        pair_x: &Tensor,
        pair_cond: Option<&Tensor>,
        pair_y: &Tensor,
    ) -> Result<StepLosses, NetError> {
        let (w_trans, _, w_super) = self.cfg.effective_weights();
        let mut tape = Tape::new();
        let tp = self.transport.bind(&mut tape, true);
        let xin = tape.constant(with_cond(x, x_cond)?);
        let t_x = self.transport.forward(&mut tape, &tp, xin)?;
        let x_plain = tape.constant(x.clone());
        let lt = loss_trans(&mut tape, x_plain, t_x)?;

        let mut terms = Vec::new();
        let mut out = StepLosses { l_trans: tape.item(lt)?, ..StepLosses::default() };
        if self.cfg.use_transport_cost {
            terms.push(tape.scale(lt, w_trans)?);
        }
        if self.cfg.use_gan {
            let disc = self.disc.as_ref().ok_or_else(|| NetError::Contract("no discriminator".into()))?;
            let dp = disc.bind(&mut tape, false);
            let fake = match x_cond {
                Some(c) => {
                    let c = tape.constant(c.clone());
                    tape.concat_cols(t_x, c)?
                }
                None => t_x,
            };
            let (d_fake, _) = disc.forward(&mut tape, &dp, fake, BnMode::Train)?;
            let g = gen_loss(&mut tape, d_fake)?;
            out.l_gan_g = tape.item(g)?;
            terms.push(g);
        }
        if pair_x.rows() > 0 {
            let pin = tape.constant(with_cond(pair_x, pair_cond)?);
            let t_p = self.transport.forward(&mut tape, &tp, pin)?;
            let py = tape.constant(pair_y.clone());
            let ls = loss_super(&mut tape, t_p, py)?;
            out.l_super = tape.item(ls)?;
            if self.cfg.use_supervised {
                terms.push(tape.scale(ls, w_super)?);
            }
        } else if self.cfg.use_supervised {
            return Err(NetError::Contract("supervised loss enabled with an empty pair batch".into()));
        }
        let mut total = *terms.first().ok_or_else(|| NetError::Config("every loss term is disabled".into()))?;
        for &t in &terms[1..] {
            total = tape.add(total, t)?;
        }
        out.total = tape.item(total)?;
        let grads = gradients(&mut tape, total, &tp)?;
        let grad_refs: Vec<&Tensor> = grads.iter().collect();
        self.opt_t.step(&mut self.transport.params_mut(), &grad_refs)?;
        Ok(out)
    }

    /// One full pass over the day-2 training cells.
    pub fn run_epoch(&mut self, data: &TrainData) -> Result<EpochRecord, NetError> {
        let epoch = self.epoch();
        let mut rng = stream_rng(self.cfg.seed, 2 + epoch as u64);
        let (n2, n46, np) = (data.day2.rows(), data.day46.rows(), data.pairs.len());
        let mut perm2: Vec<usize> = (0..n2).collect();
        let mut perm46: Vec<usize> = (0..n46).collect();
        let mut permp: Vec<usize> = (0..np).collect();
        perm2.shuffle(&mut rng);
        perm46.shuffle(&mut rng);
        permp.shuffle(&mut rng);

        let bs = self.cfg.batch_size;
        let pb = bs.min(np);
        let cond = self.cfg.conditional;
        let fates2 = data.day2_fates.as_deref();
        let fates46 = data.day46_fates.as_deref();
        let cond_of = |fates: Option<&[Fate]>, rows: &[usize]| -> Option<Tensor> {
            let f = fates?;
            cond.then(|| one_hot_rows(&rows.iter().map(|&r| f[r]).collect::<Vec<_>>()))
        };

        let mut sums = [0.0f64; 6];
        let mut steps = 0usize;
        for (s, batch) in perm2.chunks(bs).enumerate() {
            if batch.len() < 2 {
                continue;
            }
            let x = data.day2.select_rows(batch);
            let x_cond = cond_of(fates2, batch);
            let (mut dl, mut gp) = (0.0, 0.0);
            if self.cfg.use_gan {
                let real_rows: Vec<usize> = (0..batch.len()).map(|i| perm46[(s * bs + i) % n46]).collect();
                let real = with_cond(&data.day46.select_rows(&real_rows), cond_of(fates46, &real_rows).as_ref())?;
                (dl, gp) = self.disc_step(&x, x_cond.as_ref(), &real, &mut rng)?;
            }
            let pair_idx: Vec<(usize, usize)> = (0..pb).map(|i| data.pairs[permp[(s * pb + i) % np]]).collect();
            let p2: Vec<usize> = pair_idx.iter().map(|p| p.0).collect();
            let p46: Vec<usize> = pair_idx.iter().map(|p| p.1).collect();
            let pair_x = data.day2.select_rows(&p2);
            let pair_cond = cond_of(fates2, &p2);
            let pair_y = data.day46.select_rows(&p46);
            let l = self.transport_step(&x, x_cond.as_ref(), &pair_x, pair_cond.as_ref(), &pair_y)?;
            for (acc, v) in sums.iter_mut().zip([l.l_trans, dl, l.l_gan_g, l.l_super, gp, l.total]) {
                *acc += v;
            }
            steps += 1;
        }
        if steps == 0 {
            return Err(NetError::Contract("no training batch with at least two cells".into()));
        }
        let m = sums.map(|v| v / steps as f64);
        let rec = EpochRecord {
            epoch,
            l_trans: m[0],
            l_gan_d: m[1],
            l_gan_g: m[2],
            l_super: m[3],
            gp: m[4],
            total: m[5],
        };
        let finite = m.iter().all(|v| v.is_finite())
            && self.transport.params().iter().all(|p| p.is_finite())
            && self.disc.as_ref().is_none_or(|d| d.params().iter().all(|p| p.is_finite()));
        if !finite {
            return Err(NetError::Math(MathError::NonFinite("epoch losses")));
        }
        Ok(rec)
    }

    fn check_convergence(&mut self) {
        let w = self.cfg.convergence_window;
        let n = self.history.len();
        if n < 2 * w {
            return;
        }
        let mean = |r: &[EpochRecord]| r.iter().map(|e| e.total).sum::<f64>() / r.len() as f64;
        let last = mean(&self.history[n - w..]);
        let prev = mean(&self.history[n - 2 * w..n - w]);
        let rel = (last - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
        if rel < self.cfg.convergence_tol {
            self.converged = true;
        }
    }

    /// Trains until `max_epochs` or convergence, calling `after_epoch` after
    /// every completed epoch (for periodic checkpoints).
    ///
    /// A non-finite value ends training with [`NetError::Diverged`]; the
    /// trainer is rolled back to the state before the failing epoch.
    pub fn train(
        &mut self,
        data: &TrainData,
        mut after_epoch: impl FnMut(&Trainer) -> Result<(), NetError>,
    ) -> Result<(), NetError> {
        data.validate(&self.cfg)?;
        if self.transport.dim() != data.day2.cols() {
            return Err(NetError::Contract(format!(
                "network dimension {} does not match data width {}",
                self.transport.dim(),
                data.day2.cols()
            )));
        }
        while !self.is_finished() {
            let snapshot = self.clone();
            match self.run_epoch(data) {
                Ok(rec) => self.history.push(rec),
                Err(NetError::Math(MathError::NonFinite(what))) => {
                    let epoch = self.epoch();
                    *self = snapshot.clone();
                    return Err(NetError::Diverged {
                        epoch,
                        detail: format!("non-finite value in {what}"),
                        last_good: Box::new(snapshot),
                    });
                }
                Err(e) => {
                    *self = snapshot;
                    return Err(e);
                }
            }
            self.check_convergence();
            after_epoch(self)?;
        }
        Ok(())
    }
}

/// Trains the full model with the flags in `cfg`.
pub fn train_super_ot(data: &TrainData, cfg: &TrainConfig) -> Result<Trainer, NetError> {
    train_method(Method::SuperOt, data, cfg)
}

/// Trains one of the learned baselines.
pub fn train_baseline(kind: Method, data: &TrainData, cfg: &TrainConfig) -> Result<Trainer, NetError> {
    if kind == Method::SuperOt {
        return Err(NetError::Config("super_ot is not a baseline".into()));
    }
    train_method(kind, data, cfg)
}

pub fn train_method(method: Method, data: &TrainData, cfg: &TrainConfig) -> Result<Trainer, NetError> {
    let mut trainer = Trainer::new(method, cfg, data.day2.cols())?;
    trainer.train(data, |_| Ok(()))?;
    Ok(trainer)
}
