//! End-to-end training loop: discriminator updates, Smart Variation of every
//! generator, periodic NSGA-II selection, Q-function updates, per-epoch
//! Improvement-Score model selection and checkpointing.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{select_survivors, Individual};
use crate::gan::{adam_step, AdamConfig, AdamState, Discriminator, GanConfig, Generator};
use crate::metrics::{improvement_score, FastEvaluator, MetricSpec, RowSynthesizer};
use crate::schema::{Table, TableSchema};
use crate::smart_variation::{
    smart_variation, train_q, BufferStats, QConfig, QFunction, ReplayBuffer, VariationBatch,
};
use crate::transform::{CondSampler, DataTransformer, RowIndex, TransformConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Population size.
    pub mu: usize,
    /// Training steps between NSGA-II selections.
    pub select_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub disc_steps: usize,
    pub epsilon: f64,
    pub lambda: f64,
    pub risk_floor: f64,
    pub n_eval: usize,
    pub generator_adam: AdamConfig,
    pub discriminator_adam: AdamConfig,
    pub gan: GanConfig,
    pub transform: TransformConfig,
    pub q: QConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mu: 4,
            select_every: 8,
            epochs: 300,
            batch_size: 500,
            disc_steps: 1,
            epsilon: 0.1,
            lambda: 2.0,
            risk_floor: 0.0,
            n_eval: 500,
            generator_adam: AdamConfig::default(),
            discriminator_adam: AdamConfig::default(),
            gan: GanConfig::default(),
            transform: TransformConfig::default(),
            q: QConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Argument(m));
        if self.mu == 0 {
            return fail("mu must be at least 1".into());
        }
        if self.select_every == 0 {
            return fail("select_every must be at least 1".into());
        }
        if self.disc_steps == 0 {
            return fail("disc_steps must be at least 1".into());
        }
        if self.gan.pac == 0 || self.batch_size == 0 {
            return fail("batch_size and pac must be positive".into());
        }
        if !self.batch_size.is_multiple_of(self.gan.pac) || !self.batch_size.is_multiple_of(self.mu) {
            return fail(format!(
                "batch_size {} must be divisible by pac {} and by mu {}",
                self.batch_size, self.gan.pac, self.mu
            ));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return fail(format!("epsilon must be in [0, 1], got {}", self.epsilon));
        }
        if !(self.lambda > 0.0) {
            return fail(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.gan.gumbel_tau <= 0.0 || self.gan.noise_dim == 0 {
            return fail("gumbel_tau and noise_dim must be positive".into());
        }
        self.generator_adam.validate()?;
        self.discriminator_adam.validate()?;
        self.q.validate()
    }
}

/// Training and metric configuration as stored in a run's `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub metrics: MetricSpec,
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Serializable position of a ChaCha stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position, as a decimal string (it is a u128).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Argument(format!("invalid RNG word position {}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Independent random streams, so toggling one stochastic component does not
/// shift the others.
#[derive(Clone, Debug)]
pub struct RngStreams {
    pub data: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub gumbel: ChaCha8Rng,
    pub rl: ChaCha8Rng,
    pub eval: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            rng
        };
        Self {
            data: stream(1),
            noise: stream(2),
            gumbel: stream(3),
            rl: stream(4),
            eval: stream(5),
        }
    }

    pub fn states(&self) -> RngStates {
        RngStates {
            data: RngState::capture(&self.data),
            noise: RngState::capture(&self.noise),
            gumbel: RngState::capture(&self.gumbel),
            rl: RngState::capture(&self.rl),
            eval: RngState::capture(&self.eval),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngStates {
    pub data: RngState,
    pub noise: RngState,
    pub gumbel: RngState,
    pub rl: RngState,
    pub eval: RngState,
}

impl RngStates {
    pub fn restore(&self) -> Result<RngStreams> {
        Ok(RngStreams {
            data: self.data.restore()?,
            noise: self.noise.restore()?,
            gumbel: self.gumbel.restore()?,
            rl: self.rl.restore()?,
            eval: self.eval.restore()?,
        })
    }
}

/// A generator snapshot chosen at an epoch boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Champion {
    pub id: u64,
    pub epoch: usize,
    pub f_u: f64,
    pub f_r: f64,
    pub generator: Generator,
}

/// One row of `curves.csv` plus diagnostics that stay out of the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub candidate_id: u64,
    pub f_u: f64,
    pub f_r: f64,
    /// Improvement Score against the incumbent; infinite for the first epoch.
    pub improvement: f64,
    pub accepted: bool,
    pub mean_disc_loss: f64,
    pub action_counts: [usize; 3],
}

/// Everything needed to turn generator outputs back into rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema: TableSchema,
    pub transformer: DataTransformer,
    /// Per categorical column, category counts in the original data.
    pub category_counts: Vec<Vec<usize>>,
}

impl ModelBundle {
    pub fn sampler<'a>(&'a self, generator: &'a Generator) -> GeneratorSampler<'a> {
        GeneratorSampler {
            generator,
            transformer: &self.transformer,
            conds: CondSampler::from_counts(self.category_counts.clone()),
        }
    }
}

/// Discriminator, Q-function and bookkeeping at the end of training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSnapshot {
    pub config: TrainConfig,
    pub metrics: MetricSpec,
    pub discriminator: Discriminator,
    pub discriminator_adam: AdamState,
    pub q: QFunction,
    pub buffer: BufferStats,
    pub rng: RngStates,
    pub epoch: usize,
    pub step: u64,
    pub next_id: u64,
}

/// Self-describing checkpoint. Incumbent checkpoints carry only the bundle and
/// the incumbent; the final checkpoint carries everything.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub kind: String,
    pub model: ModelBundle,
    pub incumbent: Option<Champion>,
    pub max_utility: Option<Champion>,
    pub population: Vec<Individual>,
    pub training: Option<TrainingSnapshot>,
}

pub const CHECKPOINT_FORMAT: &str = "tabevo-checkpoint-v1";

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &serde_json::to_vec(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Argument(format!(
                "unsupported checkpoint format {:?}",
                ckpt.format
            )));
        }
        Ok(ckpt)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Samples rows from one generator.
pub struct GeneratorSampler<'a> {
    pub generator: &'a Generator,
    pub transformer: &'a DataTransformer,
    pub conds: CondSampler,
}

const SAMPLE_CHUNK: usize = 4096;

impl RowSynthesizer for GeneratorSampler<'_> {
    fn synthesize(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Table> {
        if n == 0 {
            return Err(Error::Argument("cannot synthesize zero rows".into()));
        }
        let mut parts = Vec::with_capacity(n.div_ceil(SAMPLE_CHUNK));
        let mut left = n;
        while left > 0 {
            let m = left.min(SAMPLE_CHUNK);
            let (c1, _) = self.conds.sample_original(m, rng);
            let z = self.generator.sample_noise(m, rng);
            parts.push(self.generator.generate(z.view(), c1.view(), rng)?);
            left -= m;
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let encoded = concatenate(Axis(0), &views).expect("equal widths");
        self.transformer.decode(encoded.view())
    }
}

/// Which generator of a trained run to sample from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    Improvement,
    MaxUtility,
    Index(usize),
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "improvement" => Ok(Selection::Improvement),
            "max_utility" | "max-utility" => Ok(Selection::MaxUtility),
            other => other
                .strip_prefix("index:")
                .unwrap_or(other)
                .parse()
                .map(Selection::Index)
                .map_err(|_| {
                    Error::Argument(format!(
                        "unknown selection {other:?}; use improvement, max_utility or an index"
                    ))
                }),
        }
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selection::Improvement => write!(f, "improvement"),
            Selection::MaxUtility => write!(f, "max_utility"),
            Selection::Index(k) => write!(f, "index:{k}"),
        }
    }
}

impl Checkpoint {
    pub fn select(&self, selection: Selection) -> Result<&Generator> {
        match selection {
            Selection::Improvement => self.incumbent.as_ref().map(|c| &c.generator),
            Selection::MaxUtility => self.max_utility.as_ref().map(|c| &c.generator),
            Selection::Index(k) => {
                if k >= self.population.len() {
                    return Err(Error::Argument(format!(
                        "generator index {k} out of range for a population of {}",
                        self.population.len()
                    )));
                }
                Some(&self.population[k].generator)
            }
        }
        .ok_or_else(|| Error::Argument(format!("checkpoint has no {selection} generator")))
    }
}

/// Draw `n_rows` rows from the generator chosen by `selection`.
pub fn synthesize(checkpoint: &Checkpoint, n_rows: usize, seed: u64, selection: Selection) -> Result<Table> {
    let generator = checkpoint.select(selection)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    checkpoint.model.sampler(generator).synthesize(n_rows, &mut rng)
}

/// Mutable training state.
pub struct RunState {
    pub population: Vec<Individual>,
    pub discriminator: Discriminator,
    pub discriminator_adam: AdamState,
    pub q: QFunction,
    pub buffer: ReplayBuffer,
    pub incumbent: Option<Champion>,
    pub max_utility: Option<Champion>,
    pub epoch: usize,
    pub step: u64,
    pub next_id: u64,
    pub rng: RngStreams,
}

pub struct TrainOutcome {
    pub state: RunState,
    pub model: ModelBundle,
    pub curves: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, cfg: &TrainConfig, spec: &MetricSpec) -> Checkpoint {
        let st = &self.state;
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            kind: "final".into(),
            model: self.model.clone(),
            incumbent: st.incumbent.clone(),
            max_utility: st.max_utility.clone(),
            population: st.population.clone(),
            training: Some(TrainingSnapshot {
                config: cfg.clone(),
                metrics: spec.clone(),
                discriminator: st.discriminator.clone(),
                discriminator_adam: st.discriminator_adam.clone(),
                q: st.q.clone(),
                buffer: st.buffer.stats(),
                rng: st.rng.states(),
                epoch: st.epoch,
                step: st.step,
                next_id: st.next_id,
            }),
        }
    }
}

/// Run directory writer.
struct RunDir {
    root: PathBuf,
    curves: fs::File,
}

impl RunDir {
    fn create(root: &Path, cfg: &TrainConfig, spec: &MetricSpec) -> Result<Self> {
        fs::create_dir_all(root.join("checkpoints"))?;
        let run_cfg = RunConfig {
            train: cfg.clone(),
            metrics: spec.clone(),
        };
        fs::write(root.join("config.json"), serde_json::to_string_pretty(&run_cfg)?)?;
        let mut curves = fs::File::create(root.join("curves.csv"))?;
        writeln!(curves, "epoch,f_u,f_r,improvement")?;
        Ok(Self {
            root: root.to_path_buf(),
            curves,
        })
    }

    fn append(&mut self, r: &EpochRecord) -> Result<()> {
        writeln!(self.curves, "{}", curve_line(r))?;
        self.curves.flush()?;
        Ok(())
    }
}

fn curve_line(r: &EpochRecord) -> String {
    let improvement = if r.improvement.is_infinite() {
        "inf".to_string()
    } else {
        r.improvement.to_string()
    };
    format!("{},{},{},{}", r.epoch, r.f_u, r.f_r, improvement)
}

/// One row per generator of the final population, for scatter plots.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PopulationEntry {
    pub index: usize,
    pub id: u64,
    pub f_u: f64,
    pub f_r: f64,
    pub rank: Option<usize>,
    pub crowd: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PopulationSummary {
    pub population: Vec<PopulationEntry>,
    pub incumbent: Option<(u64, usize, f64, f64)>,
    pub max_utility: Option<(u64, usize, f64, f64)>,
}

pub fn population_summary(state: &RunState) -> PopulationSummary {
    let brief = |c: &Champion| (c.id, c.epoch, c.f_u, c.f_r);
    PopulationSummary {
        population: state
            .population
            .iter()
            .enumerate()
            .map(|(index, ind)| PopulationEntry {
                index,
                id: ind.id,
                f_u: ind.f_u,
                f_r: ind.f_r,
                rank: ind.rank,
                crowd: ind.crowd,
            })
            .collect(),
        incumbent: state.incumbent.as_ref().map(brief),
        max_utility: state.max_utility.as_ref().map(brief),
    }
}

fn diverged(state: &RunState, out: Option<&Path>, what: &str, losses: &[(String, f64)]) -> Error {
    let norms: Vec<(u64, f64)> = state
        .population
        .iter()
        .map(|i| (i.id, i.generator.net.param_norm()))
        .collect();
    let msg = format!(
        "{what} at epoch {} step {}: losses {:?}; generator parameter norms {:?}; \
         discriminator parameter norm {}",
        state.epoch,
        state.step,
        losses,
        norms,
        state.discriminator.net.param_norm()
    );
    if let Some(dir) = out {
        let dump = serde_json::json!({
            "reason": what,
            "epoch": state.epoch,
            "step": state.step,
            "losses": losses,
            "generator_param_norms": norms,
            "discriminator_param_norm": state.discriminator.net.param_norm(),
        });
        if let Err(e) = fs::write(dir.join("diagnostics.json"), dump.to_string()) {
            log::error!("could not write diagnostics: {e}");
        }
    }
    Error::Diverged(msg)
}

/// Train on `original`. When `out` is given, writes `config.json`,
/// `curves.csv`, `population.json` and the checkpoints under it.
pub fn train(original: &Table, cfg: &TrainConfig, spec: &MetricSpec, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate(original.schema())?;
    if original.n_rows() < cfg.n_eval {
        return Err(Error::Argument(format!(
            "n_eval {} exceeds the {} original rows",
            cfg.n_eval,
            original.n_rows()
        )));
    }
    let mut run_dir = match out {
        Some(dir) => Some(RunDir::create(dir, cfg, spec)?),
        None => None,
    };

    let mut rng = RngStreams::new(cfg.seed);
    let transformer = DataTransformer::fit(original, &cfg.transform)?;
    let conds = CondSampler::from_table(original);
    let model = ModelBundle {
        schema: original.schema().clone(),
        transformer: transformer.clone(),
        category_counts: conds.counts().to_vec(),
    };
    let rows = RowIndex::new(original);
    let encoded = transformer.encode_table(original, &mut rng.data);
    let spans = transformer.spans();
    let cat_spans = transformer.categorical_spans();
    let cond_dim = conds.cond_width();
    let out_dim = transformer.encoded_width();

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(0);
    let discriminator = Discriminator::new(&cfg.gan, out_dim + cond_dim, &mut init_rng);
    let population: Vec<Individual> = (0..cfg.mu as u64)
        .map(|id| {
            let generator = Generator::new(&cfg.gan, spans.clone(), cond_dim, &mut init_rng);
            let adam = AdamState::new(&generator.net);
            Individual {
                id,
                generator,
                adam,
                f_u: 0.0,
                f_r: 0.0,
                rank: None,
                crowd: None,
            }
        })
        .collect();
    let q = QFunction::new(&cfg.q.hidden, cfg.q.adam.clone(), &mut init_rng);
    let mut state = RunState {
        discriminator_adam: AdamState::new(&discriminator.net),
        discriminator,
        population,
        q,
        buffer: ReplayBuffer::new(cfg.q.buffer_capacity),
        incumbent: None,
        max_utility: None,
        epoch: 0,
        step: 0,
        next_id: cfg.mu as u64,
        rng,
    };

    let n = cfg.batch_size;
    let share = n / cfg.mu;
    let iters_per_epoch = original.n_rows().div_ceil(n);
    let mut curves = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        state.epoch = epoch;
        let mut disc_loss_sum = 0.0;
        let mut actions = [0usize; 3];
        for _ in 0..iters_per_epoch {
            state.step += 1;

            for _ in 0..cfg.disc_steps {
                let (c1, chosen) = conds.sample(n, &mut state.rng.data);
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut state.rng.data);
                let chosen2: Vec<_> = perm.iter().map(|&i| chosen[i]).collect();
                let c2 = conds.cond_matrix(&chosen2);
                let real_rows = rows.sample(&chosen2, &mut state.rng.data)?;
                let real = encoded.select(Axis(0), &real_rows);
                let real_in = concatenate(Axis(1), &[real.view(), c2.view()]).unwrap();

                let mut fake = Array2::zeros((n, out_dim));
                for (j, ind) in state.population.iter().enumerate() {
                    let r = j * share..(j + 1) * share;
                    let z = ind.generator.sample_noise(share, &mut state.rng.noise);
                    let g = ind.generator.generate(
                        z.view(),
                        c1.slice(s![r.clone(), ..]),
                        &mut state.rng.gumbel,
                    )?;
                    fake.slice_mut(s![r, ..]).assign(&g);
                }
                let fake_in = concatenate(Axis(1), &[fake.view(), c1.view()]).unwrap();
                let loss = state.discriminator.loss(
                    real_in.view(),
                    fake_in.view(),
                    cfg.gan.gp_coef,
                    &mut state.rng.data,
                )?;
                if !loss.total.is_finite() {
                    let losses = vec![
                        ("discriminator_classification".to_string(), loss.classification),
                        ("gradient_penalty".to_string(), loss.penalty),
                    ];
                    return Err(diverged(&state, out, "non-finite discriminator loss", &losses));
                }
                disc_loss_sum += loss.total;
                adam_step(
                    &mut state.discriminator.net,
                    &loss.grads,
                    &cfg.discriminator_adam,
                    &mut state.discriminator_adam,
                );
                if !state.discriminator.net.param_norm().is_finite() {
                    let losses = vec![("discriminator_total".to_string(), loss.total)];
                    return Err(diverged(&state, out, "non-finite discriminator parameters", &losses));
                }
            }

            // One shared original subsample and synthesis seed per iteration,
            // so parents and children are compared on paired inputs.
            let evaluator = FastEvaluator::new(original, spec, cfg.n_eval, state.rng.eval.next_u64())?;
            for ind in state.population.iter_mut() {
                let (f_u, f_r) = evaluator.evaluate(&model.sampler(&ind.generator))?;
                ind.f_u = f_u;
                ind.f_r = f_r;
            }

            let (c1, chosen) = conds.sample(n, &mut state.rng.data);
            let z = state.population[0].generator.sample_noise(n, &mut state.rng.noise);
            let batch = VariationBatch {
                z: z.view(),
                c1: c1.view(),
                chosen: &chosen,
                categorical_spans: &cat_spans,
                adam: &cfg.generator_adam,
            };
            let mut children = Vec::with_capacity(cfg.mu);
            for j in 0..cfg.mu {
                let child_id = state.next_id;
                state.next_id += 1;
                let mut evaluate = |g: &Generator| evaluator.evaluate(&model.sampler(g));
                let outcome = smart_variation(
                    &state.discriminator,
                    &state.population[j],
                    child_id,
                    &batch,
                    &state.q,
                    &mut state.buffer,
                    cfg.epsilon,
                    &mut state.rng.rl,
                    &mut state.rng.gumbel,
                    &mut evaluate,
                );
                let outcome = match outcome {
                    Ok(o) => o,
                    Err(Error::Diverged(m)) => {
                        return Err(diverged(&state, out, &m, &[]));
                    }
                    Err(e) => return Err(e),
                };
                if !outcome.child.generator.net.param_norm().is_finite() {
                    let losses = vec![
                        ("generator_adversarial".to_string(), outcome.adversarial_loss),
                        ("generator_condition".to_string(), outcome.condition_loss),
                    ];
                    return Err(diverged(&state, out, "non-finite generator parameters", &losses));
                }
                actions[outcome.transition.a] += 1;
                log::trace!(
                    "step {} generator {} action {} reward {}",
                    state.step,
                    state.population[j].id,
                    outcome.transition.a,
                    outcome.transition.r
                );
                children.push(outcome.child);
            }

            let parents = std::mem::take(&mut state.population);
            state.population = if state.step.is_multiple_of(cfg.select_every as u64) {
                select_survivors(parents, children, cfg.risk_floor)
            } else {
                children
            };

            if let Some(td) = train_q(
                &mut state.q,
                &state.buffer,
                cfg.q.batch_size,
                cfg.q.gamma,
                &mut state.rng.rl,
            ) {
                if !td.is_finite() {
                    let losses = vec![("q_td_error".to_string(), td)];
                    return Err(diverged(&state, out, "non-finite Q-function loss", &losses));
                }
            }
        }

        let record = epoch_selection(&mut state, &model, original, spec, cfg, out)?;
        let record = EpochRecord {
            mean_disc_loss: disc_loss_sum / (iters_per_epoch * cfg.disc_steps) as f64,
            action_counts: actions,
            ..record
        };
        log::info!(
            "epoch {epoch}: f_u {:.4} f_r {:.4} improvement {:.4} accepted {} d_loss {:.4} actions {:?}",
            record.f_u,
            record.f_r,
            record.improvement,
            record.accepted,
            record.mean_disc_loss,
            record.action_counts
        );
        if let Some(dir) = run_dir.as_mut() {
            dir.append(&record)?;
        }
        curves.push(record);
    }

    let outcome = TrainOutcome {
        state,
        model,
        curves,
    };
    if let Some(dir) = run_dir {
        outcome
            .checkpoint(cfg, spec)
            .save(dir.root.join("checkpoints").join("final.json"))?;
        fs::write(
            dir.root.join("population.json"),
            serde_json::to_string_pretty(&population_summary(&outcome.state))?,
        )?;
    }
    Ok(outcome)
}

/// Score the best-utility survivor on a fresh subsample and update the
/// incumbent and max-utility snapshots.
fn epoch_selection(
    state: &mut RunState,
    model: &ModelBundle,
    original: &Table,
    spec: &MetricSpec,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<EpochRecord> {
    let mut best = 0;
    for (j, ind) in state.population.iter().enumerate() {
        if ind.f_u > state.population[best].f_u {
            best = j;
        }
    }
    let candidate = &state.population[best];
    let seed = state.rng.eval.next_u64();
    let evaluator = FastEvaluator::new(original, spec, cfg.n_eval, seed)?;
    let (f_u, f_r) = evaluator.evaluate(&model.sampler(&candidate.generator))?;
    let champion = || Champion {
        id: candidate.id,
        epoch: state.epoch,
        f_u,
        f_r,
        generator: candidate.generator.clone(),
    };
    let improvement = match &state.incumbent {
        None => f64::INFINITY,
        Some(inc) => improvement_score((f_u, f_r), (inc.f_u, inc.f_r), cfg.lambda),
    };
    let accepted = improvement > 0.0;
    let max_improved = state.max_utility.as_ref().is_none_or(|m| f_u > m.f_u);
    let new_incumbent = accepted.then(champion);
    let new_max = max_improved.then(champion);
    let record = EpochRecord {
        epoch: state.epoch,
        candidate_id: candidate.id,
        f_u,
        f_r,
        improvement,
        accepted,
        mean_disc_loss: 0.0,
        action_counts: [0; 3],
    };
    if let Some(c) = new_incumbent {
        if let Some(dir) = out {
            let ckpt = Checkpoint {
                format: CHECKPOINT_FORMAT.into(),
                kind: "incumbent".into(),
                model: model.clone(),
                incumbent: Some(c.clone()),
                max_utility: None,
                population: Vec::new(),
                training: None,
            };
            ckpt.save(dir.join("checkpoints").join("incumbent.json"))?;
        }
        state.incumbent = Some(c);
    }
    if let Some(c) = new_max {
        state.max_utility = Some(c);
    }
    Ok(record)
}

/// Render `curves` exactly as `curves.csv` is written.
pub fn curves_csv(curves: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,f_u,f_r,improvement\n");
    for r in curves {
        s.push_str(&curve_line(r));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_parsing() {
        assert_eq!("improvement".parse::<Selection>().unwrap(), Selection::Improvement);
        assert_eq!("max_utility".parse::<Selection>().unwrap(), Selection::MaxUtility);
        assert_eq!("3".parse::<Selection>().unwrap(), Selection::Index(3));
        assert_eq!("index:2".parse::<Selection>().unwrap(), Selection::Index(2));
        assert!("best".parse::<Selection>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 505,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            mu: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rng_state_round_trip() {
        let mut streams = RngStreams::new(9);
        streams.noise.next_u64();
        let states = streams.states();
        let json = serde_json::to_string(&states).unwrap();
        let back: RngStates = serde_json::from_str(&json).unwrap();
        let mut restored = back.restore().unwrap();
        assert_eq!(restored.noise.next_u64(), streams.noise.next_u64());
        assert_eq!(restored.eval.next_u64(), streams.eval.next_u64());
    }
}
