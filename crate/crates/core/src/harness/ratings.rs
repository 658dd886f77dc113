use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Holdout;
use crate::error::{config_err, Error, Result};
use crate::observe::io::fmt_f64;
use crate::observe::ObservationSet;

#[derive(Clone, Debug, PartialEq)]
pub struct Rating {
    pub user: u64,
    pub item: u64,
    pub rating: f64,
    pub timestamp: Option<i64>,
}

/// A ratings file with dense index maps for users and items.
#[derive(Clone, Debug, PartialEq)]
pub struct Ratings {
    pub entries: Vec<Rating>,
}

/// Reads `user::item::rating[::timestamp]` lines.
pub fn read_movielens<R: BufRead>(reader: R) -> Result<Ratings> {
    let mut entries = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let no = idx + 1;
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let toks: Vec<&str> = t.split("::").collect();
        if toks.len() != 3 && toks.len() != 4 {
            return Err(Error::Parse { line: no, msg: format!("expected 3 or 4 `::`-separated fields, found {}", toks.len()) });
        }
        let bad = |what: &str, tok: &str| Error::Parse { line: no, msg: format!("bad {what} `{tok}`") };
        let user = toks[0].parse().map_err(|_| bad("user id", toks[0]))?;
        let item = toks[1].parse().map_err(|_| bad("item id", toks[1]))?;
        let rating: f64 = toks[2].parse().map_err(|_| bad("rating", toks[2]))?;
        if !rating.is_finite() {
            return Err(bad("rating", toks[2]));
        }
        let timestamp = match toks.get(3) {
            Some(ts) => Some(ts.parse().map_err(|_| bad("timestamp", ts))?),
            None => None,
        };
        entries.push(Rating { user, item, rating, timestamp });
    }
    Ok(Ratings { entries })
}

pub fn write_movielens<W: Write>(mut w: W, ratings: &Ratings) -> Result<()> {
    for r in &ratings.entries {
        match r.timestamp {
            Some(ts) => writeln!(w, "{}::{}::{}::{ts}", r.user, r.item, fmt_f64(r.rating))?,
            None => writeln!(w, "{}::{}::{}", r.user, r.item, fmt_f64(r.rating))?,
        }
    }
    Ok(())
}

impl Ratings {
    /// Sorted distinct user and item ids; positions are matrix indices.
    pub fn index_maps(&self) -> (Vec<u64>, Vec<u64>) {
        let mut users: Vec<u64> = self.entries.iter().map(|r| r.user).collect();
        let mut items: Vec<u64> = self.entries.iter().map(|r| r.item).collect();
        users.sort_unstable();
        users.dedup();
        items.sort_unstable();
        items.dedup();
        (users, items)
    }

    /// `(min, max)` of the ratings present.
    pub fn scale(&self) -> (f64, f64) {
        self.entries
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.rating), hi.max(r.rating)))
    }

    /// Matrix cells of every rating. Duplicate (user, item) pairs are an
    /// error.
    fn cells(&self) -> Result<Vec<(usize, usize, f64)>> {
        let (users, items) = self.index_maps();
        let ui: BTreeMap<u64, usize> = users.iter().enumerate().map(|(k, &u)| (u, k)).collect();
        let ii: BTreeMap<u64, usize> = items.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        Ok(self.entries.iter().map(|r| (ui[&r.user], ii[&r.item], r.rating)).collect())
    }

    /// Splits into a training observation set and a holdout of roughly
    /// `fraction` of the ratings, both indexed over all users and items.
    pub fn split(&self, fraction: f64, scale: (f64, f64), seed: u64) -> Result<(ObservationSet, Holdout)> {
        if !(0.0..1.0).contains(&fraction) {
            return config_err(format!("holdout fraction must lie in [0, 1), got {fraction}"));
        }
        let (users, items) = self.index_maps();
        let cells = self.cells()?;
        let mut order: Vec<usize> = (0..cells.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = (fraction * cells.len() as f64).round() as usize;
        let mut test: Vec<usize> = order[..cut].to_vec();
        let mut train: Vec<usize> = order[cut..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        let holdout = Holdout {
            rows: test.iter().map(|&k| cells[k].0).collect(),
            cols: test.iter().map(|&k| cells[k].1).collect(),
            values: test.iter().map(|&k| cells[k].2).collect(),
            scale,
        };
        let obs = ObservationSet::completion(
            (users.len(), items.len()),
            train.iter().map(|&k| cells[k].0).collect(),
            train.iter().map(|&k| cells[k].1).collect(),
            DVector::from_iterator(train.len(), train.iter().map(|&k| cells[k].2)),
        )?;
        Ok((obs, holdout))
    }
}
