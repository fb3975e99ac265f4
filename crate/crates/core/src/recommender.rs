//! The three recommendation policies: uniform random, top-popularity by mean
//! rating, and an online biased matrix-factorization model trained by SGD.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecommenderKind {
    Random,
    #[serde(rename = "toppop")]
    TopPop,
    LatentFactor,
}

impl RecommenderKind {
    pub const ALL: [RecommenderKind; 3] = [Self::Random, Self::TopPop, Self::LatentFactor];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::TopPop => "toppop",
            Self::LatentFactor => "latent_factor",
        }
    }
}

impl fmt::Display for RecommenderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecommenderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "toppop" => Ok(Self::TopPop),
            "latent_factor" | "libfm" | "mf" => Ok(Self::LatentFactor),
            other => Err(Error::Config(format!("unknown recommender `{other}`"))),
        }
    }
}

/// One observed (user, item, score) triple in the simulator's index space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub score: f64,
}

/// Items a user may not be recommended (already rated).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemSet {
    flags: Vec<bool>,
    len: usize,
}

impl ItemSet {
    pub fn new(num_items: usize) -> Self {
        Self {
            flags: vec![false; num_items],
            len: 0,
        }
    }

    pub fn from_items(num_items: usize, items: impl IntoIterator<Item = usize>) -> Self {
        let mut set = Self::new(num_items);
        for i in items {
            set.insert(i);
        }
        set
    }

    /// Returns false if the item was already present.
    pub fn insert(&mut self, item: usize) -> bool {
        if self.flags[item] {
            return false;
        }
        self.flags[item] = true;
        self.len += 1;
        true
    }

    pub fn contains(&self, item: usize) -> bool {
        self.flags.get(item).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn universe(&self) -> usize {
        self.flags.len()
    }

    pub fn is_full(&self) -> bool {
        self.len == self.flags.len()
    }
}

/// Anything that can sit in the recommend → rate → update loop.
pub trait Policy {
    fn recommend(&self, user: usize, exclude: &ItemSet, rng: &mut SimRng) -> Result<usize>;
    fn update(&mut self, batch: &[Interaction]) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Retrain {
    /// Every update runs `epochs` passes over all ratings seen so far.
    Full,
    /// Every update runs `epochs` passes over the new batch only.
    Incremental,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentFactorParams {
    pub dim: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub init_scale: f64,
    pub seed: u64,
    pub retrain: Retrain,
}

impl Default for LatentFactorParams {
    fn default() -> Self {
        Self {
            dim: 8,
            learning_rate: 0.01,
            l2: 0.05,
            epochs: 10,
            init_scale: 0.1,
            seed: 0,
            retrain: Retrain::Full,
        }
    }
}

impl LatentFactorParams {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("latent factor dim must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.l2 >= 0.0 && self.init_scale >= 0.0) {
            return Err(Error::Config("l2 and init_scale must be >= 0".into()));
        }
        Ok(())
    }
}

fn check_index(what: &'static str, index: usize, len: usize) -> Result<()> {
    if index >= len {
        return Err(Error::Index { what, index, len });
    }
    Ok(())
}

fn check_batch(batch: &[Interaction], num_users: usize, num_items: usize) -> Result<()> {
    for r in batch {
        check_index("user", r.user, num_users)?;
        check_index("item", r.item, num_items)?;
        if !r.score.is_finite() {
            return Err(Error::Data(format!(
                "non-finite score for user {} item {}",
                r.user, r.item
            )));
        }
    }
    Ok(())
}

/// Uniform choice over the items not in `exclude`.
fn uniform_unexcluded(user: usize, exclude: &ItemSet, rng: &mut SimRng) -> Result<usize> {
    let open = exclude.universe() - exclude.len();
    if open == 0 {
        return Err(Error::NoCandidates { user });
    }
    let k = rng.random_range(0..open);
    (0..exclude.universe())
        .filter(|&i| !exclude.contains(i))
        .nth(k)
        .ok_or(Error::NoCandidates { user })
}

/// Index of the largest score among non-excluded items; ties go to the lowest index.
fn argmax_unexcluded(
    user: usize,
    exclude: &ItemSet,
    mut score: impl FnMut(usize) -> f64,
) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for item in (0..exclude.universe()).filter(|&i| !exclude.contains(i)) {
        let s = score(item);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((item, s));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::NoCandidates { user })
}

/// Running sum and count of scores per item.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityTable {
    num_users: usize,
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl PopularityTable {
    pub fn new(num_users: usize, num_items: usize) -> Self {
        Self {
            num_users,
            sums: vec![0.0; num_items],
            counts: vec![0; num_items],
        }
    }

    pub fn count(&self, item: usize) -> u64 {
        self.counts[item]
    }

    /// Mean score of `item`; `None` until it has been rated.
    pub fn average(&self, item: usize) -> Option<f64> {
        let c = *self.counts.get(item)?;
        (c > 0).then(|| self.sums[item] / c as f64)
    }
}

impl Policy for PopularityTable {
    fn recommend(&self, user: usize, exclude: &ItemSet, _rng: &mut SimRng) -> Result<usize> {
        check_index("user", user, self.num_users)?;
        // Unrated items rank below every rated one.
        argmax_unexcluded(user, exclude, |i| {
            self.average(i).unwrap_or(f64::NEG_INFINITY)
        })
    }

    fn update(&mut self, batch: &[Interaction]) -> Result<()> {
        check_batch(batch, self.num_users, self.sums.len())?;
        for r in batch {
            self.sums[r.item] += r.score;
            self.counts[r.item] += 1;
        }
        Ok(())
    }
}

/// Gradient of the per-rating loss with respect to the parameters it touches.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGradient {
    pub global_bias: f64,
    pub user_bias: f64,
    pub item_bias: f64,
    pub user_vector: Vec<f64>,
    pub item_vector: Vec<f64>,
}

impl SampleGradient {
    /// Same layout as [`LatentFactorModel::sample_parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = vec![self.global_bias, self.user_bias, self.item_bias];
        v.extend(&self.user_vector);
        v.extend(&self.item_vector);
        v
    }
}

/// Biased matrix factorization: r̂ = b + b_u + b_i + ⟨p_u, q_i⟩.
///
/// SGD minimizes the sum over ratings of
/// `(r - r̂)² + l2 · (b_u² + b_i² + ‖p_u‖² + ‖q_i‖²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFactorModel {
    num_users: usize,
    num_items: usize,
    params: LatentFactorParams,
    global_bias: f64,
    user_bias: Vec<f64>,
    item_bias: Vec<f64>,
    user_vectors: Vec<f64>,
    item_vectors: Vec<f64>,
    history: Vec<Interaction>,
    order_rng: SimRng,
}

impl LatentFactorModel {
    pub fn new(num_users: usize, num_items: usize, params: LatentFactorParams) -> Result<Self> {
        params.validate()?;
        if num_users == 0 || num_items == 0 {
            return Err(Error::Config("model shapes must be positive".into()));
        }
        let d = params.dim;
        let mut init = rng::substream(params.seed, rng::MODEL_INIT);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| params.init_scale * init.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let user_vectors = draw(num_users * d);
        let item_vectors = draw(num_items * d);
        Ok(Self {
            num_users,
            num_items,
            global_bias: 0.0,
            user_bias: vec![0.0; num_users],
            item_bias: vec![0.0; num_items],
            user_vectors,
            item_vectors,
            history: Vec::new(),
            order_rng: rng::substream(params.seed, rng::SGD_ORDER),
            params,
        })
    }

    pub fn params(&self) -> &LatentFactorParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn global_bias(&self) -> f64 {
        self.global_bias
    }

    pub fn history(&self) -> &[Interaction] {
        &self.history
    }

    fn user_vec(&self, u: usize) -> &[f64] {
        let d = self.dim();
        &self.user_vectors[u * d..(u + 1) * d]
    }

    fn item_vec(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.item_vectors[i * d..(i + 1) * d]
    }

    pub fn predict(&self, user: usize, item: usize) -> f64 {
        let dot: f64 = self
            .user_vec(user)
            .iter()
            .zip(self.item_vec(item))
            .map(|(a, b)| a * b)
            .sum();
        self.global_bias + self.user_bias[user] + self.item_bias[item] + dot
    }

    pub fn sample_loss(&self, r: &Interaction) -> f64 {
        let e = r.score - self.predict(r.user, r.item);
        let pu = self.user_vec(r.user);
        let qi = self.item_vec(r.item);
        let reg = self.user_bias[r.user].powi(2)
            + self.item_bias[r.item].powi(2)
            + pu.iter().map(|x| x * x).sum::<f64>()
            + qi.iter().map(|x| x * x).sum::<f64>();
        e * e + self.params.l2 * reg
    }

    pub fn objective(&self, data: &[Interaction]) -> f64 {
        data.iter().map(|r| self.sample_loss(r)).sum()
    }

    pub fn rmse(&self, data: &[Interaction]) -> f64 {
        let sse: f64 = data
            .iter()
            .map(|r| (r.score - self.predict(r.user, r.item)).powi(2))
            .sum();
        (sse / data.len() as f64).sqrt()
    }

    pub fn sample_gradient(&self, r: &Interaction) -> SampleGradient {
        let e = r.score - self.predict(r.user, r.item);
        let l2 = self.params.l2;
        let pu = self.user_vec(r.user);
        let qi = self.item_vec(r.item);
        SampleGradient {
            global_bias: -2.0 * e,
            user_bias: -2.0 * e + 2.0 * l2 * self.user_bias[r.user],
            item_bias: -2.0 * e + 2.0 * l2 * self.item_bias[r.item],
            user_vector: pu
                .iter()
                .zip(qi)
                .map(|(p, q)| -2.0 * e * q + 2.0 * l2 * p)
                .collect(),
            item_vector: pu
                .iter()
                .zip(qi)
                .map(|(p, q)| -2.0 * e * p + 2.0 * l2 * q)
                .collect(),
        }
    }

    /// Parameters touched by a (user, item) rating:
    /// `[global, b_u, b_i, p_u.., q_i..]`.
    pub fn sample_parameters(&self, user: usize, item: usize) -> Vec<f64> {
        let mut v = vec![self.global_bias, self.user_bias[user], self.item_bias[item]];
        v.extend(self.user_vec(user));
        v.extend(self.item_vec(item));
        v
    }

    pub fn set_sample_parameters(&mut self, user: usize, item: usize, values: &[f64]) {
        let d = self.dim();
        assert_eq!(values.len(), 3 + 2 * d, "parameter vector length");
        self.global_bias = values[0];
        self.user_bias[user] = values[1];
        self.item_bias[item] = values[2];
        self.user_vectors[user * d..(user + 1) * d].copy_from_slice(&values[3..3 + d]);
        self.item_vectors[item * d..(item + 1) * d].copy_from_slice(&values[3 + d..]);
    }

    /// One SGD step: every touched parameter moves by `-learning_rate × gradient`,
    /// with the gradient evaluated before any of them change.
    pub fn sgd_step(&mut self, r: &Interaction) {
        let g = self.sample_gradient(r);
        let lr = self.params.learning_rate;
        let d = self.dim();
        self.global_bias -= lr * g.global_bias;
        self.user_bias[r.user] -= lr * g.user_bias;
        self.item_bias[r.item] -= lr * g.item_bias;
        let pu = &mut self.user_vectors[r.user * d..(r.user + 1) * d];
        for (p, gp) in pu.iter_mut().zip(&g.user_vector) {
            *p -= lr * gp;
        }
        let qi = &mut self.item_vectors[r.item * d..(r.item + 1) * d];
        for (q, gq) in qi.iter_mut().zip(&g.item_vector) {
            *q -= lr * gq;
        }
    }

    /// `epochs` shuffled SGD passes over `data`.
    pub fn train(&mut self, data: &[Interaction], epochs: usize) -> Result<()> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..epochs {
            order.shuffle(&mut self.order_rng);
            for &k in &order {
                self.sgd_step(&data[k]);
            }
        }
        if !self.is_finite() {
            return Err(Error::Data(
                "latent factor training diverged (non-finite parameters); lower learning_rate"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.global_bias.is_finite()
            && self.user_bias.iter().all(|v| v.is_finite())
            && self.item_bias.iter().all(|v| v.is_finite())
            && self.user_vectors.iter().all(|v| v.is_finite())
            && self.item_vectors.iter().all(|v| v.is_finite())
    }

    /// Writes the factor snapshot.
    ///
    /// Layout, one comma-separated record per line:
    /// ```text
    /// ratelab-latent-factor,1
    /// shape,<users>,<items>,<dim>
    /// global_bias,<value>
    /// user,<index>,<bias>,<f_1>,...,<f_dim>     (one line per user)
    /// item,<index>,<bias>,<f_1>,...,<f_dim>     (one line per item)
    /// ```
    /// Floats use the shortest representation that parses back exactly.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        let d = self.dim();
        let mut text = format!(
            "ratelab-latent-factor,1\nshape,{},{},{}\nglobal_bias,{}\n",
            self.num_users, self.num_items, d, self.global_bias
        );
        for (tag, biases, vecs) in [
            ("user", &self.user_bias, &self.user_vectors),
            ("item", &self.item_bias, &self.item_vectors),
        ] {
            for (idx, b) in biases.iter().enumerate() {
                text.push_str(&format!("{tag},{idx},{b}"));
                for f in &vecs[idx * d..(idx + 1) * d] {
                    text.push_str(&format!(",{f}"));
                }
                text.push('\n');
            }
        }
        out.write_all(text.as_bytes())
            .map_err(|e| Error::io("<checkpoint>", e))
    }

    /// Reads a snapshot written by [`save`](Self::save). Training history is not
    /// part of the snapshot.
    pub fn load<R: BufRead>(input: R, params: LatentFactorParams) -> Result<Self> {
        let bad = |msg: String| Error::Data(format!("checkpoint: {msg}"));
        let mut lines = input.lines();
        let mut next_line = || -> Result<Option<String>> {
            lines
                .next()
                .transpose()
                .map_err(|e| Error::io("<checkpoint>", e))
        };
        let header = next_line()?.ok_or_else(|| bad("empty".into()))?;
        if header.trim() != "ratelab-latent-factor,1" {
            return Err(bad(format!("unknown header `{header}`")));
        }
        let shape = next_line()?.ok_or_else(|| bad("missing shape".into()))?;
        let dims: Vec<usize> = shape
            .split(',')
            .skip(1)
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("shape: {e}")))?;
        let [users, items, dim] = dims[..] else {
            return Err(bad(format!("bad shape line `{shape}`")));
        };
        let mut model = Self::new(users, items, LatentFactorParams { dim, ..params })?;
        let gb = next_line()?.ok_or_else(|| bad("missing global_bias".into()))?;
        model.global_bias = gb
            .strip_prefix("global_bias,")
            .ok_or_else(|| bad("missing global_bias".into()))?
            .trim()
            .parse()
            .map_err(|e| bad(format!("global_bias: {e}")))?;
        let mut seen = 0usize;
        while let Some(line) = next_line()? {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 + dim {
                return Err(bad(format!(
                    "row has {} fields, expected {}",
                    fields.len(),
                    3 + dim
                )));
            }
            let idx: usize = fields[1].parse().map_err(|e| bad(format!("index: {e}")))?;
            let nums: Vec<f64> = fields[2..]
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("value: {e}")))?;
            let (biases, vecs, len) = match fields[0] {
                "user" => (&mut model.user_bias, &mut model.user_vectors, users),
                "item" => (&mut model.item_bias, &mut model.item_vectors, items),
                other => return Err(bad(format!("unknown row tag `{other}`"))),
            };
            check_index("checkpoint row", idx, len)?;
            biases[idx] = nums[0];
            vecs[idx * dim..(idx + 1) * dim].copy_from_slice(&nums[1..]);
            seen += 1;
        }
        if seen != users + items {
            return Err(bad(format!(
                "expected {} rows, found {seen}",
                users + items
            )));
        }
        Ok(model)
    }
}

impl Policy for LatentFactorModel {
    fn recommend(&self, user: usize, exclude: &ItemSet, _rng: &mut SimRng) -> Result<usize> {
        check_index("user", user, self.num_users)?;
        argmax_unexcluded(user, exclude, |i| self.predict(user, i))
    }

    fn update(&mut self, batch: &[Interaction]) -> Result<()> {
        check_batch(batch, self.num_users, self.num_items)?;
        self.history.extend_from_slice(batch);
        let epochs = self.params.epochs;
        match self.params.retrain {
            Retrain::Full => {
                let data = std::mem::take(&mut self.history);
                let res = self.train(&data, epochs);
                self.history = data;
                res
            }
            Retrain::Incremental => self.train(batch, epochs),
        }
    }
}

/// Mutable state of one of the three recommenders.
#[derive(Debug, Clone, PartialEq)]
pub enum Recommender {
    Random { num_users: usize },
    TopPop(PopularityTable),
    LatentFactor(Box<LatentFactorModel>),
}

impl Recommender {
    pub fn init(
        kind: RecommenderKind,
        num_users: usize,
        num_items: usize,
        params: &LatentFactorParams,
    ) -> Result<Self> {
        if num_users == 0 || num_items == 0 {
            return Err(Error::Config("recommender shapes must be positive".into()));
        }
        Ok(match kind {
            RecommenderKind::Random => Self::Random { num_users },
            RecommenderKind::TopPop => Self::TopPop(PopularityTable::new(num_users, num_items)),
            RecommenderKind::LatentFactor => Self::LatentFactor(Box::new(LatentFactorModel::new(
                num_users,
                num_items,
                params.clone(),
            )?)),
        })
    }

    pub fn kind(&self) -> RecommenderKind {
        match self {
            Self::Random { .. } => RecommenderKind::Random,
            Self::TopPop(_) => RecommenderKind::TopPop,
            Self::LatentFactor(_) => RecommenderKind::LatentFactor,
        }
    }
}

impl Policy for Recommender {
    fn recommend(&self, user: usize, exclude: &ItemSet, rng: &mut SimRng) -> Result<usize> {
        match self {
            Self::Random { num_users } => {
                check_index("user", user, *num_users)?;
                uniform_unexcluded(user, exclude, rng)
            }
            Self::TopPop(t) => t.recommend(user, exclude, rng),
            Self::LatentFactor(m) => m.recommend(user, exclude, rng),
        }
    }

    fn update(&mut self, batch: &[Interaction]) -> Result<()> {
        match self {
            Self::Random { .. } => Ok(()),
            Self::TopPop(t) => t.update(batch),
            Self::LatentFactor(m) => m.update(batch),
        }
    }
}
