//! Quantized Q-learning for zero-delay encoder design.
//!
//! The learner runs the coding problem as a controlled Markov chain on
//! beliefs: the state is the predictor `pi_t` (the law of `X_t` given the
//! channel symbols sent so far), the action is a quantizer, and the cost is
//! the expected distortion [`stage_cost`]. Q-factors live on the type
//! lattice, i.e. on `(quantize(pi_t, n), Q_t)` pairs, while the cost and the
//! belief dynamics are always evaluated at the exact belief.
//!
//! Exploration is uniform over the quantizer space and independent of the
//! Q-factors. The step size of a pair is `1 / (1 + N)`, where `N` counts
//! every visit to the pair up to and including the current one.

use std::collections::{BTreeMap, HashMap};

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{predictor_update, stage_cost, BeliefError, DistortionSpec, Quantizer};
use crate::markov_source::{FiniteSource, ProbabilityVector, SourceError};
use crate::quantizer_space::{QuantizerSpace, SpaceError, SpaceMode};
use crate::simplex_quantizer::{quantize, StateKey, TypeVector};

pub const POLICY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QLearningError {
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("Q-table has no entries")]
    EmptyTable,
    #[error("snapshots disagree on (n, beta): ({0}, {1}) vs ({2}, {3})")]
    ConfigMismatch(u32, f64, u32, f64),
    #[error("schema error: {0}")]
    Schema(String),
}

/// Which law the training path starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartLaw {
    /// The invariant distribution of the source.
    #[default]
    Invariant,
    /// The source's own initial distribution.
    SourceInitial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Lattice parameter for the belief quantizer.
    pub n: u32,
    pub beta: f64,
    /// Threshold on the sup-norm change of the table over one window.
    pub stop_epsilon: f64,
    /// Window length, in steps, of the stopping check.
    pub check_interval: u64,
    pub max_steps: u64,
    pub seed: u64,
    /// Visit count a lattice state needs before the policy covers it.
    pub min_state_visits: u64,
    pub start: StartLaw,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n: 5,
            beta: 0.9999,
            stop_epsilon: 1e-4,
            check_interval: 10_000,
            max_steps: 5_000_000,
            seed: 0,
            min_state_visits: 10,
            start: StartLaw::Invariant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), QLearningError> {
        let bad = |msg: String| Err(QLearningError::InvalidConfig(msg));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta {} outside (0, 1)", self.beta));
        }
        if !(self.stop_epsilon > 0.0) {
            return bad(format!("stop_epsilon {} must be positive", self.stop_epsilon));
        }
        if self.check_interval == 0 {
            return bad("check_interval must be positive".into());
        }
        Ok(())
    }
}

/// One Q-factor and the number of updates applied to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub q: f64,
    pub visits: u64,
}

#[derive(Debug, Clone)]
struct StateRow {
    key: StateKey,
    /// Updates applied at this state (any action).
    visits: u64,
    actions: IndexMap<Quantizer, Entry>,
    min: f64,
    argmin: usize,
    min_stale: bool,
}

impl StateRow {
    fn new(key: StateKey) -> Self {
        Self { key, visits: 0, actions: IndexMap::new(), min: f64::INFINITY, argmin: 0, min_stale: false }
    }

    /// `min_v Q(state, v)` over the whole space; unvisited pairs hold their
    /// initial value 0.
    fn min_over_space(&mut self, space_size: Option<u128>) -> f64 {
        match space_size {
            Some(size) if self.actions.len() as u128 >= size => {
                if self.min_stale {
                    let (i, v) = self
                        .actions
                        .values()
                        .enumerate()
                        .fold((0, f64::INFINITY), |best, (i, e)| if e.q < best.1 { (i, e.q) } else { best });
                    self.argmin = i;
                    self.min = v;
                    self.min_stale = false;
                }
                self.min
            }
            _ => 0.0,
        }
    }

    fn record(&mut self, slot: usize, value: f64) {
        if value <= self.min {
            self.min = value;
            self.argmin = slot;
        } else if slot == self.argmin {
            self.min_stale = true;
        }
    }
}

/// Tabular Q-factors over visited (lattice state, quantizer) pairs.
#[derive(Debug, Clone)]
pub struct QTable {
    n: u32,
    beta: f64,
    m: usize,
    levels: usize,
    mode: SpaceMode,
    space_size: Option<u128>,
    rows: Vec<StateRow>,
    index: HashMap<StateKey, usize>,
}

impl QTable {
    pub fn new(n: u32, beta: f64, space: &QuantizerSpace) -> Self {
        Self {
            n,
            beta,
            m: space.m(),
            levels: space.levels(),
            mode: space.mode(),
            space_size: space.size(),
            rows: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Number of stored (state, action) pairs.
    pub fn len(&self) -> usize {
        self.rows.iter().map(|r| r.actions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lattice states that received at least one update.
    pub fn visited_states(&self) -> usize {
        self.rows.iter().filter(|r| r.visits > 0).count()
    }

    pub fn state_visits(&self, key: &StateKey) -> u64 {
        self.index.get(key).map_or(0, |&i| self.rows[i].visits)
    }

    pub fn get(&self, key: &StateKey, action: &Quantizer) -> Option<Entry> {
        self.index.get(key).and_then(|&i| self.rows[i].actions.get(action).copied())
    }

    /// Stored value, with unvisited pairs at their initial value 0.
    pub fn value(&self, key: &StateKey, action: &Quantizer) -> f64 {
        self.get(key, action).map_or(0.0, |e| e.q)
    }

    /// `min_v Q(key, v)` over the whole quantizer space.
    pub fn min_value(&self, key: &StateKey) -> f64 {
        let Some(&i) = self.index.get(key) else { return 0.0 };
        let row = &self.rows[i];
        match self.space_size {
            Some(size) if row.actions.len() as u128 >= size => {
                row.actions.values().map(|e| e.q).fold(f64::INFINITY, f64::min)
            }
            _ => 0.0,
        }
    }

    /// All entries as `(state, action, entry)`, sorted by state then action.
    pub fn entries(&self) -> Vec<(StateKey, Quantizer, Entry)> {
        let mut out: Vec<_> = self
            .rows
            .iter()
            .flat_map(|r| r.actions.iter().map(|(a, e)| (r.key.clone(), a.clone(), *e)))
            .collect();
        out.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
        out
    }

    /// Per-state visit counts, sorted by state.
    pub fn states(&self) -> Vec<(StateKey, u64)> {
        let mut out: Vec<_> = self.rows.iter().map(|r| (r.key.clone(), r.visits)).collect();
        out.sort();
        out
    }

    pub fn snapshot(&self) -> QSnapshot {
        QSnapshot {
            n: self.n,
            beta: self.beta,
            values: self
                .rows
                .iter()
                .flat_map(|r| r.actions.iter().map(|(a, e)| ((r.key.clone(), a.clone()), e.q)))
                .collect(),
        }
    }

    fn row_index(&mut self, key: StateKey) -> usize {
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.rows.len();
        self.index.insert(key.clone(), i);
        self.rows.push(StateRow::new(key));
        i
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&QTableFile::from(self)).expect("table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, QLearningError> {
        let file: QTableFile = serde_json::from_str(text).map_err(|e| QLearningError::Schema(e.to_string()))?;
        file.try_into()
    }
}

/// Serialized form of a [`QTable`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct QTableFile {
    n: u32,
    beta: f64,
    m: usize,
    levels: usize,
    mode: SpaceMode,
    entries: Vec<QTableFileEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QTableFileEntry {
    state: Vec<u32>,
    action: Quantizer,
    q: f64,
    visits: u64,
}

impl From<&QTable> for QTableFile {
    fn from(t: &QTable) -> Self {
        Self {
            n: t.n,
            beta: t.beta,
            m: t.m,
            levels: t.levels,
            mode: t.mode,
            entries: t
                .entries()
                .into_iter()
                .map(|(s, action, e)| QTableFileEntry { state: s.counts().to_vec(), action, q: e.q, visits: e.visits })
                .collect(),
        }
    }
}

impl TryFrom<QTableFile> for QTable {
    type Error = QLearningError;

    fn try_from(file: QTableFile) -> Result<Self, QLearningError> {
        let space = QuantizerSpace::new(file.m, file.levels, file.mode)?;
        let mut table = QTable::new(file.n, file.beta, &space);
        for e in file.entries {
            let key = TypeVector::new(e.state, file.n)
                .map_err(|err| QLearningError::Schema(err.to_string()))?
                .table_key();
            if key.counts().len() != file.m || !space.contains(&e.action) {
                return Err(QLearningError::Schema(format!("entry {:?} does not fit the space", e.action)));
            }
            let i = table.row_index(key);
            let row = &mut table.rows[i];
            row.visits += e.visits;
            let (slot, _) = row.actions.insert_full(e.action, Entry { q: e.q, visits: e.visits });
            row.record(slot, e.q);
        }
        Ok(table)
    }
}

/// Plain map of Q-values, for comparing tables.
#[derive(Debug, Clone, PartialEq)]
pub struct QSnapshot {
    pub n: u32,
    pub beta: f64,
    pub values: HashMap<(StateKey, Quantizer), f64>,
}

/// `max |a - b|` over the union of keys, missing entries counting as 0.
pub fn sup_norm_delta(a: &QSnapshot, b: &QSnapshot) -> Result<f64, QLearningError> {
    if a.n != b.n || a.beta != b.beta {
        return Err(QLearningError::ConfigMismatch(a.n, a.beta, b.n, b.beta));
    }
    let one_sided = |x: &QSnapshot, y: &QSnapshot| {
        x.values
            .iter()
            .map(|(k, v)| (v - y.values.get(k).copied().unwrap_or(0.0)).abs())
            .fold(0.0, f64::max)
    };
    Ok(one_sided(a, b).max(one_sided(b, a)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxStepsReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub steps: u64,
    pub distinct_states: usize,
    /// Sup-norm change over the last completed window (infinite if none).
    pub final_delta: f64,
    pub reason: StopReason,
}

/// What a single Q-factor update did; handed to the training observer.
#[derive(Debug, Clone, PartialEq)]
pub struct Update<'a> {
    pub step: u64,
    pub state: &'a StateKey,
    pub action: &'a Quantizer,
    /// Updates applied to this pair before this one.
    pub prior_visits: u64,
    pub alpha: f64,
    pub cost: f64,
    pub old_q: f64,
    pub new_q: f64,
}

/// Runs the learner with uniform exploration over `space`.
pub fn train(
    source: &FiniteSource,
    dist: &DistortionSpec,
    space: &QuantizerSpace,
    cfg: &TrainConfig,
) -> Result<(QTable, TrainStats), QLearningError> {
    train_observed(source, dist, space, cfg, |_| {})
}

/// [`train`], calling `observer` after every Q-factor update.
pub fn train_observed(
    source: &FiniteSource,
    dist: &DistortionSpec,
    space: &QuantizerSpace,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&Update<'_>),
) -> Result<(QTable, TrainStats), QLearningError> {
    cfg.validate()?;
    if space.m() != source.m() {
        return Err(QLearningError::InvalidConfig(format!(
            "quantizer space is over {} symbols, source has {}",
            space.m(),
            source.m()
        )));
    }
    let values = source.values();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut table = QTable::new(cfg.n, cfg.beta, space);

    let mut belief = match cfg.start {
        StartLaw::Invariant => source.invariant_distribution()?,
        StartLaw::SourceInitial => source.initial().clone(),
    };
    let mut x = belief.sample(&mut rng);
    let mut state = table.row_index(quantize(&belief, cfg.n).table_key());
    let mut action = space.sample_member(&mut rng);
    let mut symbol = action.map()[x];

    // value of every pair touched in the current window at the window start
    let mut window: HashMap<(usize, Quantizer), f64> = HashMap::new();
    let mut final_delta = f64::INFINITY;
    let mut reason = StopReason::MaxStepsReached;
    let mut steps = 0;

    while steps < cfg.max_steps {
        let cost = stage_cost(&belief, &action, values, dist);
        let next_x = source.step(x, &mut rng);
        let next_belief = predictor_update(&belief, &action, symbol, source)?;
        let next_state = table.row_index(quantize(&next_belief, cfg.n).table_key());
        let continuation = table.rows[next_state].min_over_space(table.space_size);

        let row = &mut table.rows[state];
        row.visits += 1;
        let slot = match row.actions.get_index_of(&action) {
            Some(slot) => slot,
            None => row.actions.insert_full(action.clone(), Entry { q: 0.0, visits: 0 }).0,
        };
        let entry = &mut row.actions[slot];
        let old_q = entry.q;
        let prior_visits = entry.visits;
        entry.visits += 1;
        let alpha = 1.0 / (1.0 + entry.visits as f64);
        entry.q = (1.0 - alpha) * old_q + alpha * (cost + cfg.beta * continuation);
        let new_q = entry.q;
        row.record(slot, new_q);
        window.entry((state, action.clone())).or_insert(old_q);
        observer(&Update {
            step: steps,
            state: &table.rows[state].key,
            action: &action,
            prior_visits,
            alpha,
            cost,
            old_q,
            new_q,
        });

        steps += 1;
        x = next_x;
        belief = next_belief;
        state = next_state;
        action = space.sample_member(&mut rng);
        symbol = action.map()[x];

        if steps % cfg.check_interval == 0 {
            final_delta = window
                .drain()
                .map(|((s, a), start)| (table.rows[s].actions[&a].q - start).abs())
                .fold(0.0, f64::max);
            log::debug!(
                "step {steps}: window delta {final_delta:.3e}, {} states visited",
                table.visited_states()
            );
            if final_delta <= cfg.stop_epsilon {
                reason = StopReason::Converged;
                break;
            }
        }
    }
    let stats = TrainStats { steps, distinct_states: table.visited_states(), final_delta, reason };
    log::info!(
        "training stopped after {} steps ({:?}), {} states, delta {:.3e}",
        stats.steps,
        stats.reason,
        stats.distinct_states,
        stats.final_delta
    );
    Ok((table, stats))
}

/// Deterministic stationary encoder: lattice state to quantizer, with a
/// fixed fallback for states outside the map.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n: u32,
    levels: usize,
    fallback: Quantizer,
    action_map: BTreeMap<StateKey, Quantizer>,
}

impl Policy {
    pub fn new(
        n: u32,
        levels: usize,
        fallback: Quantizer,
        action_map: BTreeMap<StateKey, Quantizer>,
    ) -> Result<Self, QLearningError> {
        let m = fallback.len();
        let fits = |q: &Quantizer| q.len() == m && q.span() <= levels;
        if n == 0 || levels == 0 || !fits(&fallback) {
            return Err(QLearningError::Schema("fallback does not fit (n, levels)".into()));
        }
        for (state, action) in &action_map {
            if state.counts().len() != m || state.counts().iter().sum::<u32>() != n {
                return Err(QLearningError::Schema(format!("state {:?} is not a point of P_{n}", state.counts())));
            }
            if !fits(action) {
                return Err(QLearningError::Schema(format!("action {:?} does not fit", action.map())));
            }
        }
        Ok(Self { n, levels, fallback, action_map })
    }

    /// The same quantizer at every belief.
    pub fn constant(n: u32, levels: usize, action: Quantizer) -> Self {
        Self { n, levels, fallback: action, action_map: BTreeMap::new() }
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Source alphabet size.
    pub fn m(&self) -> usize {
        self.fallback.len()
    }

    pub fn fallback(&self) -> &Quantizer {
        &self.fallback
    }

    pub fn action_map(&self) -> &BTreeMap<StateKey, Quantizer> {
        &self.action_map
    }

    /// Quantizer for the lattice state `key`.
    pub fn action_for(&self, key: &StateKey) -> &Quantizer {
        self.action_map.get(key).unwrap_or(&self.fallback)
    }

    /// Quantizer for an exact belief.
    pub fn act(&self, belief: &ProbabilityVector) -> &Quantizer {
        self.action_for(&quantize(belief, self.n).table_key())
    }

    /// Applies a channel-symbol permutation to every quantizer.
    pub fn relabeled(&self, perm: &[u8]) -> Self {
        let f = |q: &Quantizer| q.relabel(|c| perm[c as usize]);
        Self {
            n: self.n,
            levels: self.levels,
            fallback: f(&self.fallback),
            action_map: self.action_map.iter().map(|(k, q)| (k.clone(), f(q))).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PolicyFile::from(self)).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, QLearningError> {
        let file: PolicyFile = serde_json::from_str(text).map_err(|e| QLearningError::Schema(e.to_string()))?;
        if file.version != POLICY_FORMAT_VERSION {
            return Err(QLearningError::Schema(format!(
                "policy format version {} (expected {POLICY_FORMAT_VERSION})",
                file.version
            )));
        }
        let mut map = BTreeMap::new();
        for e in file.map {
            let key = TypeVector::new(e.state, file.n)
                .map_err(|err| QLearningError::Schema(err.to_string()))?
                .table_key();
            if map.insert(key, e.action).is_some() {
                return Err(QLearningError::Schema("duplicate state".into()));
            }
        }
        Policy::new(file.n, file.levels, file.fallback, map)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyFile {
    version: u32,
    n: u32,
    levels: usize,
    fallback: Quantizer,
    map: Vec<PolicyFileEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyFileEntry {
    state: Vec<u32>,
    action: Quantizer,
}

impl From<&Policy> for PolicyFile {
    fn from(p: &Policy) -> Self {
        Self {
            version: POLICY_FORMAT_VERSION,
            n: p.n,
            levels: p.levels,
            fallback: p.fallback.clone(),
            map: p
                .action_map
                .iter()
                .map(|(k, a)| PolicyFileEntry { state: k.counts().to_vec(), action: a.clone() })
                .collect(),
        }
    }
}

/// `argmin_Q c(pi, Q)` over the members of `space`, or over `candidates`
/// when the space is too large to enumerate. Ties go to the smallest map.
pub fn greedy_quantizer<'a>(
    pi: &ProbabilityVector,
    space: &QuantizerSpace,
    source: &FiniteSource,
    dist: &DistortionSpec,
    candidates: impl Iterator<Item = &'a Quantizer>,
) -> Option<Quantizer> {
    let values = source.values();
    let pick = |best: Option<(f64, Quantizer)>, q: Quantizer| {
        let c = stage_cost(pi, &q, values, dist);
        match best {
            Some((bc, bq)) if bc < c || (bc == c && bq <= q) => Some((bc, bq)),
            _ => Some((c, q)),
        }
    };
    match space.enumerate() {
        Ok(all) => all.fold(None, pick),
        Err(_) => candidates.cloned().fold(None, pick),
    }
    .map(|(_, q)| q)
}

/// Greedy policy from a trained table.
///
/// Every state visited at least `cfg.min_state_visits` times maps to the
/// visited action of least Q-value (smallest map on ties); unvisited actions
/// are excluded because their value is only the initial 0. All other beliefs
/// use the myopic minimizer of the stage cost at the invariant distribution.
pub fn extract_policy(
    table: &QTable,
    cfg: &TrainConfig,
    space: &QuantizerSpace,
    source: &FiniteSource,
    dist: &DistortionSpec,
) -> Result<Policy, QLearningError> {
    if table.is_empty() {
        return Err(QLearningError::EmptyTable);
    }
    let mut action_map = BTreeMap::new();
    for row in &table.rows {
        if row.visits < cfg.min_state_visits.max(1) {
            continue;
        }
        let best = row
            .actions
            .iter()
            .filter(|(_, e)| e.visits >= 1)
            .min_by(|(qa, ea), (qb, eb)| ea.q.total_cmp(&eb.q).then_with(|| qa.cmp(qb)));
        if let Some((q, _)) = best {
            action_map.insert(row.key.clone(), q.clone());
        }
    }
    let zeta = source.invariant_distribution()?;
    let fallback = greedy_quantizer(
        &zeta,
        space,
        source,
        dist,
        table.rows.iter().flat_map(|r| r.actions.keys()),
    )
    .ok_or(QLearningError::EmptyTable)?;
    Ok(Policy { n: table.n, levels: table.levels, fallback, action_map })
}
