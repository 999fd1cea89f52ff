//! Interaction logs: ingest, per-user splitting and positive-pair batching.
//!
//! Raw input is UTF-8 TSV with one `user<TAB>item[<TAB>timestamp]` line per
//! interaction. Tokens are mapped to dense ids in first-seen order and duplicate
//! pairs are collapsed. Splits are drawn per user with a user-local random
//! stream, so re-splitting one user never perturbs another.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Users with fewer interactions than this keep every pair in train.
pub const MIN_INTERACTIONS_FOR_HOLDOUT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Split {
    Train = 0,
    Valid = 1,
    Test = 2,
}

impl Split {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Split> {
        match code {
            0 => Some(Split::Train),
            1 => Some(Split::Valid),
            2 => Some(Split::Test),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionTable {
    pub user_count: usize,
    pub item_count: usize,
    pub pairs: Vec<(u32, u32)>,
    pub splits: Vec<Split>,
    /// Original user token for each dense id.
    pub user_tokens: Vec<String>,
    /// Original item token for each dense id.
    pub item_tokens: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.valid, self.test];
        if all.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config(format!("split ratios must be positive, got {all:?}")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub users: Vec<u32>,
    pub items: Vec<u32>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Reads a raw interaction log.
pub fn ingest(path: impl AsRef<Path>) -> Result<InteractionTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_tsv(reader: impl BufRead) -> Result<InteractionTable> {
    let mut user_ids: HashMap<String, u32> = HashMap::new();
    let mut item_ids: HashMap<String, u32> = HashMap::new();
    let mut user_tokens = Vec::new();
    let mut item_tokens = Vec::new();
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<input>", e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 2 or 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let (user, item) = (fields[0].trim(), fields[1].trim());
        if user.is_empty() || item.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty user or item token".into(),
            });
        }
        if let Some(ts) = fields.get(2) {
            // parsed for validation only; splitting is random, not temporal
            ts.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("malformed timestamp `{}`", ts.trim()),
            })?;
        }
        let u = intern(&mut user_ids, &mut user_tokens, user);
        let i = intern(&mut item_ids, &mut item_tokens, item);
        if seen.insert((u, i)) {
            pairs.push((u, i));
        }
    }

    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let splits = vec![Split::Train; pairs.len()];
    Ok(InteractionTable {
        user_count: user_tokens.len(),
        item_count: item_tokens.len(),
        pairs,
        splits,
        user_tokens,
        item_tokens,
    })
}

fn intern(ids: &mut HashMap<String, u32>, tokens: &mut Vec<String>, token: &str) -> u32 {
    if let Some(&id) = ids.get(token) {
        return id;
    }
    let id = tokens.len() as u32;
    ids.insert(token.to_owned(), id);
    tokens.push(token.to_owned());
    id
}

/// Per-user random partition into train/valid/test.
///
/// Held-out counts are `floor(n * ratio)` for valid and test; the remainder
/// goes to train. Users with fewer than [`MIN_INTERACTIONS_FOR_HOLDOUT`]
/// interactions keep everything in train.
pub fn split(table: &InteractionTable, ratios: SplitRatios, seed: u64) -> Result<InteractionTable> {
    ratios.validate()?;
    let by_user = table.pair_indices_by_user();
    let mut splits = vec![Split::Train; table.pairs.len()];
    for (user, indices) in by_user.iter().enumerate() {
        let n = indices.len();
        if n < MIN_INTERACTIONS_FOR_HOLDOUT {
            continue;
        }
        let n_test = holdout_count(n, ratios.test);
        let n_valid = holdout_count(n, ratios.valid);
        let mut order = indices.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(user as u64);
        order.shuffle(&mut rng);
        for &pi in &order[..n_test] {
            splits[pi] = Split::Test;
        }
        for &pi in &order[n_test..n_test + n_valid] {
            splits[pi] = Split::Valid;
        }
    }
    Ok(InteractionTable {
        splits,
        ..table.clone()
    })
}

fn holdout_count(n: usize, ratio: f64) -> usize {
    // 1e-9 absorbs products like 30 * 0.1 landing just under an integer
    (n as f64 * ratio + 1e-9).floor() as usize
}

/// Shuffled train-pair batches for one epoch.
///
/// The permutation depends only on `(seed, epoch)`. The last batch may be
/// shorter than `batch_size`.
pub fn batches(table: &InteractionTable, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(Error::Config(format!(
            "batch size must be at least 2, got {batch_size}"
        )));
    }
    let mut train: Vec<(u32, u32)> = table.split_pairs(Split::Train).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995_0000_0000);
    rng.set_stream(epoch as u64);
    train.shuffle(&mut rng);
    Ok(train
        .chunks(batch_size)
        .map(|chunk| Batch {
            users: chunk.iter().map(|p| p.0).collect(),
            items: chunk.iter().map(|p| p.1).collect(),
        })
        .collect())
}

impl InteractionTable {
    pub fn from_pairs(user_count: usize, item_count: usize, pairs: Vec<(u32, u32)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut seen = HashSet::new();
        for &(u, i) in &pairs {
            if u as usize >= user_count || i as usize >= item_count {
                return Err(Error::Config(format!(
                    "pair ({u}, {i}) out of range for {user_count} users, {item_count} items"
                )));
            }
            if !seen.insert((u, i)) {
                return Err(Error::Config(format!("duplicate pair ({u}, {i})")));
            }
        }
        let splits = vec![Split::Train; pairs.len()];
        Ok(InteractionTable {
            user_count,
            item_count,
            pairs,
            splits,
            user_tokens: (0..user_count).map(|u| u.to_string()).collect(),
            item_tokens: (0..item_count).map(|i| i.to_string()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn split_pairs(&self, split: Split) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.pairs
            .iter()
            .zip(&self.splits)
            .filter(move |(_, s)| **s == split)
            .map(|(p, _)| *p)
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|s| **s == split).count()
    }

    fn pair_indices_by_user(&self) -> Vec<Vec<usize>> {
        let mut by_user = vec![Vec::new(); self.user_count];
        for (idx, &(u, _)) in self.pairs.iter().enumerate() {
            by_user[u as usize].push(idx);
        }
        by_user
    }

    /// Items per user within one split, each list sorted ascending.
    pub fn items_by_user(&self, split: Split) -> Vec<Vec<u32>> {
        let mut by_user = vec![Vec::new(); self.user_count];
        for (u, i) in self.split_pairs(split) {
            by_user[u as usize].push(i);
        }
        for items in &mut by_user {
            items.sort_unstable();
        }
        by_user
    }

    /// Train-split interaction count per item.
    pub fn item_popularity(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.item_count];
        for (_, i) in self.split_pairs(Split::Train) {
            counts[i as usize] += 1;
        }
        counts
    }

    /// Keeps a random `fraction` of users (at least one) with all of their
    /// pairs, re-indexing users and items densely in first-seen order.
    pub fn subsample_users(&self, fraction: f64, seed: u64) -> Result<InteractionTable> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!(
                "subsample fraction must be in (0, 1], got {fraction}"
            )));
        }
        let keep_n = ((self.user_count as f64 * fraction).round() as usize).max(1);
        let mut users: Vec<u32> = (0..self.user_count as u32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        users.shuffle(&mut rng);
        let kept: HashSet<u32> = users[..keep_n].iter().copied().collect();

        let mut user_map: HashMap<u32, u32> = HashMap::new();
        let mut item_map: HashMap<u32, u32> = HashMap::new();
        let mut user_tokens = Vec::new();
        let mut item_tokens = Vec::new();
        let mut pairs = Vec::new();
        let mut splits = Vec::new();
        for (&(u, i), &s) in self.pairs.iter().zip(&self.splits) {
            if !kept.contains(&u) {
                continue;
            }
            let nu = *user_map.entry(u).or_insert_with(|| {
                user_tokens.push(self.user_tokens[u as usize].clone());
                (user_tokens.len() - 1) as u32
            });
            let ni = *item_map.entry(i).or_insert_with(|| {
                item_tokens.push(self.item_tokens[i as usize].clone());
                (item_tokens.len() - 1) as u32
            });
            pairs.push((nu, ni));
            splits.push(s);
        }
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(InteractionTable {
            user_count: user_tokens.len(),
            item_count: item_tokens.len(),
            pairs,
            splits,
            user_tokens,
            item_tokens,
        })
    }

    /// Writes `user_id<TAB>item_id<TAB>{0|1|2}` lines.
    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (&(u, i), s) in self.pairs.iter().zip(&self.splits) {
            writeln!(w, "{u}\t{i}\t{}", s.code()).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes the pairs as a raw two-column log of dense ids.
    pub fn write_pairs_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for &(u, i) in &self.pairs {
            writeln!(w, "{u}\t{i}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes `token<TAB>id` maps for users and items.
    pub fn write_id_maps(&self, user_path: impl AsRef<Path>, item_path: impl AsRef<Path>) -> Result<()> {
        for (path, tokens) in [
            (user_path.as_ref(), &self.user_tokens),
            (item_path.as_ref(), &self.item_tokens),
        ] {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            for (id, tok) in tokens.iter().enumerate() {
                writeln!(w, "{tok}\t{id}").map_err(|e| Error::io(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn read_manifest(path: impl AsRef<Path>) -> Result<InteractionTable> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse_manifest(BufReader::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn parse_manifest(reader: impl BufRead) -> Result<InteractionTable> {
        let mut pairs = Vec::new();
        let mut splits = Vec::new();
        let mut seen = HashSet::new();
        let (mut max_u, mut max_i) = (0u32, 0u32);
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::io("<manifest>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim_end().split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let parse_id = |s: &str, what: &str| {
                s.parse::<u32>().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("malformed {what} id `{s}`"),
                })
            };
            let u = parse_id(fields[0], "user")?;
            let i = parse_id(fields[1], "item")?;
            let split = fields[2]
                .parse::<u8>()
                .ok()
                .and_then(Split::from_code)
                .ok_or_else(|| Error::Parse {
                    line: line_no,
                    msg: format!("split label must be 0, 1 or 2, got `{}`", fields[2]),
                })?;
            if !seen.insert((u, i)) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("duplicate pair ({u}, {i})"),
                });
            }
            max_u = max_u.max(u);
            max_i = max_i.max(i);
            pairs.push((u, i));
            splits.push(split);
        }
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let user_count = max_u as usize + 1;
        let item_count = max_i as usize + 1;
        Ok(InteractionTable {
            user_count,
            item_count,
            pairs,
            splits,
            user_tokens: (0..user_count).map(|u| u.to_string()).collect(),
            item_tokens: (0..item_count).map(|i| i.to_string()).collect(),
        })
    }
}
