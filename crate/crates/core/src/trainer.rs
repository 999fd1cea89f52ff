//! Training loop: per-batch objective, Adam updates, historical-cache
//! refresh, validation-driven early stopping and checkpointing.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{self, Batch, InteractionTable, Split};
use crate::error::{Error, Result};
use crate::eval::{self, RankingMetrics, DEFAULT_KS};
use crate::graph::BipartiteGraph;
use crate::losses::{total_loss, KernelParams};
use crate::model::{mix_historical, update_historical, HeadGrads, HistoricalCache, ModelState, ParamGrads};
use crate::objective;

pub const METRICS_HEADER: &str =
    "epoch,loss_uibt,loss_uuii,loss_bcl,loss_total,recall@10,recall@20,recall@50,ndcg@10,ndcg@20,ndcg@50";

const NEGATIVE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    RecDcl,
    Dcl,
    Bpr,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::RecDcl => "recdcl",
            ObjectiveKind::Dcl => "dcl",
            ObjectiveKind::Bpr => "bpr",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "recdcl" => Some(ObjectiveKind::RecDcl),
            "dcl" => Some(ObjectiveKind::Dcl),
            "bpr" => Some(ObjectiveKind::Bpr),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub kernel: KernelParams,
    pub lambda_dcl: f64,
    pub gamma_au: f64,
    pub objective: ObjectiveKind,
    pub eval_every: usize,
    pub patience: usize,
    pub seed: u64,
    pub uuii_include_diagonal: bool,
    pub identity_projector: bool,
    pub normalized_scoring: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::preset("beauty").expect("built-in preset")
    }
}

pub const PRESETS: [&str; 4] = ["beauty", "food", "game", "yelp"];

pub const CONFIG_KEYS: [&str; 21] = [
    "F",
    "L",
    "B",
    "lr",
    "epochs",
    "gamma",
    "alpha",
    "beta",
    "tau",
    "kernel_a",
    "kernel_c",
    "kernel_e",
    "lambda_dcl",
    "gamma_au",
    "objective",
    "eval_every",
    "patience",
    "seed",
    "uuii_include_diagonal",
    "identity_projector",
    "normalized_scoring",
];

impl TrainConfig {
    /// Best published settings per dataset. Embedding size 2048 and 2-layer
    /// propagation throughout; batch size 256 on Beauty, 1024 elsewhere.
    pub fn preset(name: &str) -> Result<Self> {
        let (gamma, alpha, tau, beta, batch_size) = match name {
            "beauty" => (0.01, 0.2, 0.1, 5.0, 256),
            "food" => (0.05, 1.0, 0.3, 10.0, 1024),
            "game" => (0.01, 0.2, 0.3, 10.0, 1024),
            "yelp" => (0.1, 2.0, 0.5, 1.0, 1024),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(TrainConfig {
            dim: 2048,
            layers: 2,
            batch_size,
            lr: 0.001,
            epochs: 300,
            gamma,
            alpha,
            beta,
            tau,
            kernel: KernelParams::default(),
            lambda_dcl: 0.005,
            gamma_au: 1.0,
            objective: ObjectiveKind::RecDcl,
            eval_every: 1,
            patience: 10,
            seed: 2024,
            uuii_include_diagonal: false,
            identity_projector: false,
            normalized_scoring: false,
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
        }
        fn flag(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" | "1" => Ok(true),
                "false" | "0" => Ok(false),
                _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
            }
        }
        match key {
            "F" => self.dim = num(key, value)?,
            "L" => self.layers = num(key, value)?,
            "B" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "kernel_a" => self.kernel.a = num(key, value)?,
            "kernel_c" => self.kernel.c = num(key, value)?,
            "kernel_e" => self.kernel.e = num(key, value)?,
            "lambda_dcl" => self.lambda_dcl = num(key, value)?,
            "gamma_au" => self.gamma_au = num(key, value)?,
            "objective" => {
                self.objective = ObjectiveKind::parse(value)
                    .ok_or_else(|| Error::Config(format!("`objective`: expected recdcl, dcl or bpr, got `{value}`")))?
            }
            "eval_every" => self.eval_every = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "uuii_include_diagonal" => self.uuii_include_diagonal = flag(key, value)?,
            "identity_projector" => self.identity_projector = flag(key, value)?,
            "normalized_scoring" => self.normalized_scoring = flag(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines. `#` starts a comment. A `preset` line
    /// resets every field to that preset before the other lines apply,
    /// wherever it appears.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            entries.push((n + 1, key.trim(), value.trim()));
        }
        if let Some((_, _, name)) = entries.iter().find(|e| e.1 == "preset") {
            *self = TrainConfig::preset(name)?;
        }
        for (line, key, value) in entries {
            if key == "preset" {
                continue;
            }
            self.set(key, value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {line}: {msg}")),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// `KEY=VALUE` override as given on the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override must be KEY=VALUE, got `{kv}`")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.dim < 2 {
            return bad(format!("F must be at least 2, got {}", self.dim));
        }
        if self.batch_size < 2 {
            return bad(format!("B must be at least 2, got {}", self.batch_size));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if self.patience < 1 {
            return bad("patience must be at least 1".into());
        }
        if self.eval_every < 1 {
            return bad("eval_every must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda_dcl", self.lambda_dcl),
            ("gamma_au", self.gamma_au),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        self.kernel.validate()
    }

    /// Resolved configuration as ordered `key = value` lines, parseable by
    /// [`TrainConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("F", self.dim.to_string()),
            ("L", self.layers.to_string()),
            ("B", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("gamma", self.gamma.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("tau", self.tau.to_string()),
            ("kernel_a", self.kernel.a.to_string()),
            ("kernel_c", self.kernel.c.to_string()),
            ("kernel_e", self.kernel.e.to_string()),
            ("lambda_dcl", self.lambda_dcl.to_string()),
            ("gamma_au", self.gamma_au.to_string()),
            ("objective", self.objective.name().to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("uuii_include_diagonal", self.uuii_include_diagonal.to_string()),
            ("identity_projector", self.identity_projector.to_string()),
            ("normalized_scoring", self.normalized_scoring.to_string()),
        ]
    }
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Bias-corrected Adam with one moment pair per parameter group.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    groups: Vec<(&'static str, Moments)>,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            groups: Vec::new(),
        }
    }
}

impl AdamState {
    /// One update over named `(params, grads)` groups. Every gradient is
    /// checked before anything is written, so a rejected step leaves
    /// parameters, moments and the step counter untouched.
    pub fn step(&mut self, groups: Vec<(&'static str, &mut [f64], &[f64])>, lr: f64) -> Result<()> {
        for (name, params, grads) in &groups {
            if params.len() != grads.len() {
                return Err(Error::shape(
                    format!("{name}: {} gradient entries", params.len()),
                    grads.len(),
                ));
            }
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient((*name).to_string()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, params, grads) in groups {
            let slot = match self.groups.iter().position(|(n, _)| *n == name) {
                Some(p) => p,
                None => {
                    self.groups.push((
                        name,
                        Moments {
                            m: vec![0.0; params.len()],
                            v: vec![0.0; params.len()],
                        },
                    ));
                    self.groups.len() - 1
                }
            };
            let mo = &mut self.groups[slot].1;
            for k in 0..params.len() {
                let g = grads[k];
                mo.m[k] = self.beta1 * mo.m[k] + (1.0 - self.beta1) * g;
                mo.v[k] = self.beta2 * mo.v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = mo.m[k] / bc1;
                let v_hat = mo.v[k] / bc2;
                params[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step(state: &mut ModelState, grads: &ParamGrads, adam: &mut AdamState, lr: f64) -> Result<()> {
    let ModelState {
        embeddings,
        projector,
        predictor,
        ..
    } = state;
    let std = "standard layout";
    let mut groups: Vec<(&'static str, &mut [f64], &[f64])> = vec![(
        "embeddings",
        embeddings.as_slice_mut().expect(std),
        grads.embeddings.as_slice().expect(std),
    )];
    if let (false, Some(g)) = (projector.identity, grads.projector.as_ref()) {
        groups.push((
            "projector",
            projector.weight.as_slice_mut().expect(std),
            g.as_slice().expect(std),
        ));
    }
    groups.push((
        "w1",
        predictor.w1.as_slice_mut().expect(std),
        grads.w1.as_slice().expect(std),
    ));
    groups.push((
        "b1",
        predictor.b1.as_slice_mut().expect(std),
        grads.b1.as_slice().expect(std),
    ));
    groups.push((
        "w2",
        predictor.w2.as_slice_mut().expect(std),
        grads.w2.as_slice().expect(std),
    ));
    groups.push((
        "b2",
        predictor.b2.as_slice_mut().expect(std),
        grads.b2.as_slice().expect(std),
    ));
    adam.step(groups, lr)
}

/// Component losses of one batch or averaged over an epoch. For `dcl` and
/// `bpr` only `total` is populated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EpochLosses {
    pub uibt: f64,
    pub uuii: f64,
    pub bcl: f64,
    pub total: f64,
}

impl EpochLosses {
    fn accumulate(&mut self, o: &EpochLosses) {
        self.uibt += o.uibt;
        self.uuii += o.uuii;
        self.bcl += o.bcl;
        self.total += o.total;
    }

    fn scaled(self, s: f64) -> Self {
        EpochLosses {
            uibt: self.uibt * s,
            uuii: self.uuii * s,
            bcl: self.bcl * s,
            total: self.total * s,
        }
    }
}

/// Objective value and head gradients of one batch. The historical cache is
/// read only; `hist` must already be initialized for `recdcl`.
pub fn batch_objective(
    state: &ModelState,
    graph: &BipartiteGraph,
    batch: &Batch,
    hist: &HistoricalCache,
    negatives: &[u32],
    config: &TrainConfig,
) -> Result<(EpochLosses, HeadGrads, crate::model::ForwardCache)> {
    let cache = state.forward(graph, batch)?;
    let (losses, heads) = match config.objective {
        ObjectiveKind::RecDcl => {
            let (eu, ei) = mix_historical(&cache, hist, config.tau);
            let (eu_hat, ei_hat) = objective::normalized_targets(eu, ei);
            let report = total_loss(
                &objective::uibt_component(&cache, config.gamma)?,
                &objective::uuii_component(&cache, config.kernel, config.uuii_include_diagonal)?,
                &objective::bcl_component(&cache, &eu_hat, &ei_hat)?,
                config.alpha,
                config.beta,
            );
            let losses = EpochLosses {
                uibt: report.uibt,
                uuii: report.uuii,
                bcl: report.bcl,
                total: report.total,
            };
            (losses, objective::heads_from(&report.grads))
        }
        ObjectiveKind::Dcl => {
            let comp = objective::dcl_component(&cache, config.gamma_au, config.lambda_dcl)?;
            let losses = EpochLosses {
                total: comp.value,
                ..Default::default()
            };
            (losses, objective::heads_from(&comp.grads))
        }
        ObjectiveKind::Bpr => {
            let (value, d_final) = objective::bpr_objective(&cache, negatives, state.n_users)?;
            let losses = EpochLosses {
                total: value,
                ..Default::default()
            };
            let heads = HeadGrads {
                final_emb: Some(d_final),
                ..Default::default()
            };
            (losses, heads)
        }
    };
    Ok((losses, heads, cache))
}

/// One uniformly drawn non-train item per batch row.
fn sample_negatives(batch: &Batch, train_items: &[Vec<u32>], n_items: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    batch
        .users
        .iter()
        .map(|&u| {
            let seen = &train_items[u as usize];
            let mut j = rng.gen_range(0..n_items as u32);
            // a user who has seen everything keeps the last draw
            for _ in 0..64 {
                if seen.binary_search(&j).is_err() {
                    break;
                }
                j = rng.gen_range(0..n_items as u32);
            }
            j
        })
        .collect()
}

/// Everything that changes during training, owned by one thread.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub table: &'a InteractionTable,
    pub graph: BipartiteGraph,
    pub state: ModelState,
    pub hist: HistoricalCache,
    pub adam: AdamState,
    train_items: Vec<Vec<u32>>,
    epochs_done: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, table: &'a InteractionTable) -> Result<Self> {
        config.validate()?;
        let graph = BipartiteGraph::build(table)?;
        let state = ModelState::init(
            table.user_count,
            table.item_count,
            config.dim,
            config.layers,
            config.identity_projector,
            config.seed,
        )?;
        let hist = HistoricalCache::new(state.node_count(), config.dim);
        Ok(Trainer {
            config,
            table,
            graph,
            state,
            hist,
            adam: AdamState::default(),
            train_items: table.items_by_user(Split::Train),
            epochs_done: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    fn epoch_plan(&self, epoch: usize) -> Result<(Vec<Batch>, ChaCha8Rng)> {
        let batches = corpus::batches(self.table, self.config.batch_size, self.config.seed, epoch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ NEGATIVE_SALT);
        rng.set_stream(epoch as u64);
        Ok((batches, rng))
    }

    /// Runs the next epoch and returns its mean batch losses. Batches with
    /// fewer than two rows are skipped: batch statistics are undefined there.
    pub fn train_epoch(&mut self) -> Result<EpochLosses> {
        let epoch = self.epochs_done + 1;
        let (batches, mut rng) = self.epoch_plan(epoch)?;
        let mut sum = EpochLosses::default();
        let mut used = 0usize;
        for (index, batch) in batches.iter().enumerate() {
            if batch.len() < 2 {
                continue;
            }
            let negatives = match self.config.objective {
                ObjectiveKind::Bpr => sample_negatives(batch, &self.train_items, self.table.item_count, &mut rng),
                _ => Vec::new(),
            };
            let uses_hist = self.config.objective == ObjectiveKind::RecDcl;
            let (losses, heads, cache) = if uses_hist && !self.hist.initialized {
                let cache = self.state.forward(&self.graph, batch)?;
                self.hist.ensure_initialized(&cache);
                batch_objective(&self.state, &self.graph, batch, &self.hist, &negatives, &self.config)?
            } else {
                batch_objective(&self.state, &self.graph, batch, &self.hist, &negatives, &self.config)?
            };
            if !losses.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: index,
                    detail: format!(
                        "loss uibt={} uuii={} bcl={} total={}",
                        losses.uibt, losses.uuii, losses.bcl, losses.total
                    ),
                });
            }
            let grads = self.state.backward(&self.graph, &cache, &heads)?;
            adam_step(&mut self.state, &grads, &mut self.adam, self.config.lr)?;
            if uses_hist {
                update_historical(&mut self.hist, &cache);
            }
            sum.accumulate(&losses);
            used += 1;
        }
        self.epochs_done = epoch;
        if used == 0 {
            return Err(Error::Config("no training batch with at least 2 pairs".into()));
        }
        Ok(sum.scaled(1.0 / used as f64))
    }

    /// Mean loss over the next epoch's batches at the current parameters,
    /// without updating anything.
    pub fn probe_loss(&self) -> Result<EpochLosses> {
        let (batches, mut rng) = self.epoch_plan(self.epochs_done + 1)?;
        let mut hist = self.hist.clone();
        let mut sum = EpochLosses::default();
        let mut used = 0usize;
        for batch in batches.iter().filter(|b| b.len() >= 2) {
            let negatives = match self.config.objective {
                ObjectiveKind::Bpr => sample_negatives(batch, &self.train_items, self.table.item_count, &mut rng),
                _ => Vec::new(),
            };
            if !hist.initialized {
                hist.ensure_initialized(&self.state.forward(&self.graph, batch)?);
            }
            let (losses, _, cache) = batch_objective(&self.state, &self.graph, batch, &hist, &negatives, &self.config)?;
            update_historical(&mut hist, &cache);
            sum.accumulate(&losses);
            used += 1;
        }
        if used == 0 {
            return Err(Error::Config("no training batch with at least 2 pairs".into()));
        }
        Ok(sum.scaled(1.0 / used as f64))
    }

    pub fn evaluate(&self, split: Split, ks: &[usize]) -> Result<RankingMetrics> {
        eval::evaluate(
            &self.state,
            &self.graph,
            self.table,
            split,
            ks,
            self.config.normalized_scoring,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub losses: EpochLosses,
    pub valid: RankingMetrics,
}

impl HistoryRow {
    pub fn csv_line(&self) -> String {
        let l = &self.losses;
        let mut s = format!("{},{},{},{},{}", self.epoch, l.uibt, l.uuii, l.bcl, l.total);
        for k in DEFAULT_KS {
            let _ = write!(s, ",{}", self.valid.recall_at(k).unwrap_or(f64::NAN));
        }
        for k in DEFAULT_KS {
            let _ = write!(s, ",{}", self.valid.ndcg_at(k).unwrap_or(f64::NAN));
        }
        s
    }
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

pub struct FitOutcome {
    pub best_state: ModelState,
    pub best_hist: HistoricalCache,
    pub best_epoch: usize,
    pub best_recall20: f64,
    pub history: Vec<HistoryRow>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub graph: BipartiteGraph,
}

/// Trains with validation every `eval_every` epochs (and after the last
/// epoch), keeping the state with the best validation Recall@20 and stopping
/// after `patience` evaluations without strict improvement.
pub fn fit(config: &TrainConfig, table: &InteractionTable) -> Result<FitOutcome> {
    let mut trainer = Trainer::new(config.clone(), table)?;
    let mut history = Vec::new();
    let mut best: Option<(ModelState, HistoricalCache, usize, f64)> = None;
    let mut stale = 0usize;
    let mut stopped_early = false;
    for epoch in 1..=config.epochs {
        let losses = trainer.train_epoch()?;
        if epoch % config.eval_every != 0 && epoch != config.epochs {
            continue;
        }
        let valid = trainer.evaluate(Split::Valid, &DEFAULT_KS)?;
        let r20 = valid.recall_at(20).expect("default cutoffs include 20");
        history.push(HistoryRow { epoch, losses, valid });
        match &best {
            Some((_, _, _, b)) if r20 <= *b => stale += 1,
            _ => {
                best = Some((trainer.state.clone(), trainer.hist.clone(), epoch, r20));
                stale = 0;
            }
        }
        if stale >= config.patience {
            stopped_early = true;
            break;
        }
    }
    let epochs_run = trainer.epochs_done();
    let (best_state, best_hist, best_epoch, best_recall20) = match best {
        Some(b) => b,
        None => (trainer.state.clone(), trainer.hist.clone(), epochs_run, f64::NAN),
    };
    Ok(FitOutcome {
        best_state,
        best_hist,
        best_epoch,
        best_recall20,
        history,
        epochs_run,
        stopped_early,
        graph: trainer.graph,
    })
}
