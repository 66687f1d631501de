//! Ratings ingestion and low-rank factorization.
//!
//! Ratings arrive in the ml-1m line format `UserID::MovieID::Rating::Timestamp`.
//! Ids are re-indexed densely in first-occurrence order; duplicate
//! (user, item) pairs keep the last rating seen. Factorization is
//! alternating least squares on the observed entries: each half-step is a
//! batch of small ridge solves, which is exactly what the linear-algebra
//! core already provides. Ratings matrices here are sparse, so a dense SVD
//! is not applicable; regularized ALS is the standard completion route.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::{FeatureVector, LinearStatistics, PsdAccumulator};
use crate::stream::{self, StreamPurpose};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{path}:{line}: malformed line: {reason}")]
    MalformedLine {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("rank {rank} exceeds min(users={users}, items={items})")]
    InvalidRank {
        rank: usize,
        users: usize,
        items: usize,
    },
    #[error("regularization must be positive, got {0}")]
    BadRegularization(f64),
    #[error("bad factors file {path}: {reason}")]
    BadFactorsFile { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RatingsDataset {
    pub ratings: Vec<Rating>,
    pub user_ids: Vec<u64>,
    pub item_ids: Vec<u64>,
}

impl RatingsDataset {
    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    /// Build a dataset from already-indexed triples (tests and planted
    /// models). Ids become identities.
    pub fn from_triples(
        num_users: usize,
        num_items: usize,
        triples: &[(usize, usize, f64)],
    ) -> Self {
        Self {
            ratings: triples
                .iter()
                .map(|&(user, item, value)| Rating { user, item, value })
                .collect(),
            user_ids: (0..num_users as u64).collect(),
            item_ids: (0..num_items as u64).collect(),
        }
    }
}

/// Parse an ml-1m ratings file.
pub fn ingest_ratings(path: &Path) -> Result<RatingsDataset, DataError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| DataError::Io {
        path: display.clone(),
        reason: e.to_string(),
    })?;
    let reader = std::io::BufReader::new(file);

    let mut user_index: HashMap<u64, usize> = HashMap::new();
    let mut item_index: HashMap<u64, usize> = HashMap::new();
    let mut pair_slot: HashMap<(usize, usize), usize> = HashMap::new();
    let mut dataset = RatingsDataset::default();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| DataError::Io {
            path: display.clone(),
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| DataError::MalformedLine {
            path: display.clone(),
            line: lineno,
            reason,
        };
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() != 4 {
            return Err(malformed(format!(
                "expected UserID::MovieID::Rating::Timestamp, got {} fields",
                fields.len()
            )));
        }
        let user_id: u64 = fields[0]
            .parse()
            .map_err(|e| malformed(format!("user id: {e}")))?;
        let item_id: u64 = fields[1]
            .parse()
            .map_err(|e| malformed(format!("movie id: {e}")))?;
        let value: f64 = fields[2]
            .parse()
            .map_err(|e| malformed(format!("rating: {e}")))?;
        if !(1.0..=5.0).contains(&value) {
            return Err(malformed(format!("rating {value} outside 1..=5")));
        }
        fields[3]
            .parse::<i64>()
            .map_err(|e| malformed(format!("timestamp: {e}")))?;

        let next_user = user_index.len();
        let user = *user_index.entry(user_id).or_insert_with(|| {
            dataset.user_ids.push(user_id);
            next_user
        });
        let next_item = item_index.len();
        let item = *item_index.entry(item_id).or_insert_with(|| {
            dataset.item_ids.push(item_id);
            next_item
        });
        match pair_slot.entry((user, item)) {
            std::collections::hash_map::Entry::Occupied(slot) => {
                // duplicate pair: last occurrence wins
                dataset.ratings[*slot.get()].value = value;
            }
            std::collections::hash_map::Entry::Vacant(slot) => {
                slot.insert(dataset.ratings.len());
                dataset.ratings.push(Rating { user, item, value });
            }
        }
    }

    if dataset.ratings.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    Ok(dataset)
}

#[derive(Debug, Clone)]
pub struct Factorization {
    pub user_factors: Vec<Vec<f64>>,
    pub item_factors: Vec<Vec<f64>>,
    pub train_rmse: f64,
}

/// Regularized alternating least squares on the observed ratings.
///
/// Each half-step solves, per user (then per item), the k-dimensional ridge
/// system accumulated from that row's observed entries. Item factors are
/// initialized from a seeded Gaussian; `iterations` full sweeps are run and
/// the returned RMSE is measured on the training entries.
pub fn factorize(
    dataset: &RatingsDataset,
    rank: usize,
    iterations: usize,
    regularization: f64,
    seed: u64,
) -> Result<Factorization, DataError> {
    let users = dataset.num_users();
    let items = dataset.num_items();
    if rank < 1 || rank > users.min(items) {
        return Err(DataError::InvalidRank { rank, users, items });
    }
    if !(regularization > 0.0) {
        return Err(DataError::BadRegularization(regularization));
    }
    if dataset.ratings.is_empty() {
        return Err(DataError::EmptyDataset);
    }

    let mut by_user: Vec<Vec<(usize, f64)>> = vec![Vec::new(); users];
    let mut by_item: Vec<Vec<(usize, f64)>> = vec![Vec::new(); items];
    for r in &dataset.ratings {
        by_user[r.user].push((r.item, r.value));
        by_item[r.item].push((r.user, r.value));
    }

    let mut rng = stream::trial_stream(seed, StreamPurpose::Factorization, 0);
    let init_scale = 1.0 / (rank as f64).sqrt();
    let mut user_factors = vec![vec![0.0; rank]; users];
    let mut item_factors: Vec<Vec<f64>> = (0..items)
        .map(|_| {
            (0..rank)
                .map(|_| init_scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let solve_side = |rows: &[Vec<(usize, f64)>], basis: &[Vec<f64>], out: &mut [Vec<f64>]| {
        for (row, target) in rows.iter().zip(out.iter_mut()) {
            let mut gram = PsdAccumulator::zeros(rank, regularization);
            let mut stats = LinearStatistics::zeros(rank);
            for &(j, value) in row {
                let fv = FeatureVector::new(basis[j].clone());
                gram.rank_one_update(&fv).expect("rank matches");
                stats.accumulate(&fv, value).expect("rank matches");
            }
            let solved = gram
                .ridge_solve(&stats)
                .expect("ridge-regularized gram is positive definite");
            target.copy_from_slice(solved.as_slice());
        }
    };

    for _ in 0..iterations {
        solve_side(&by_user, &item_factors, &mut user_factors);
        solve_side(&by_item, &user_factors, &mut item_factors);
    }

    let train_rmse = rmse(dataset, &user_factors, &item_factors);
    Ok(Factorization {
        user_factors,
        item_factors,
        train_rmse,
    })
}

pub fn rmse(dataset: &RatingsDataset, user_factors: &[Vec<f64>], item_factors: &[Vec<f64>]) -> f64 {
    let sse: f64 = dataset
        .ratings
        .iter()
        .map(|r| {
            let pred: f64 = user_factors[r.user]
                .iter()
                .zip(item_factors[r.item].iter())
                .map(|(a, b)| a * b)
                .sum();
            (pred - r.value) * (pred - r.value)
        })
        .sum();
    (sse / dataset.ratings.len() as f64).sqrt()
}

/// Write factors as `k=<rank> users=<n> items=<m>` followed by one
/// whitespace-separated row per user vector, then per item vector.
pub fn write_factors<W: Write>(
    mut out: W,
    user_factors: &[Vec<f64>],
    item_factors: &[Vec<f64>],
) -> std::io::Result<()> {
    let rank = user_factors.first().map(|v| v.len()).unwrap_or(0);
    writeln!(
        out,
        "k={} users={} items={}",
        rank,
        user_factors.len(),
        item_factors.len()
    )?;
    for row in user_factors.iter().chain(item_factors.iter()) {
        let mut first = true;
        for x in row {
            if !first {
                write!(out, " ")?;
            }
            write!(out, "{x:.16e}")?;
            first = false;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_factors_file(
    path: &Path,
    user_factors: &[Vec<f64>],
    item_factors: &[Vec<f64>],
) -> Result<(), DataError> {
    let display = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| DataError::Io {
        path: display.clone(),
        reason: e.to_string(),
    })?;
    let mut buf = std::io::BufWriter::new(file);
    write_factors(&mut buf, user_factors, item_factors).map_err(|e| DataError::Io {
        path: display.clone(),
        reason: e.to_string(),
    })?;
    buf.flush().map_err(|e| DataError::Io {
        path: display,
        reason: e.to_string(),
    })
}

/// Read a factors file back into (user, item) factor matrices.
pub fn read_factors_file(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), DataError> {
    let display = path.display().to_string();
    let bad = |reason: String| DataError::BadFactorsFile {
        path: display.clone(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
        path: display.clone(),
        reason: e.to_string(),
    })?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
    let mut rank = None;
    let mut users = None;
    let mut items = None;
    for part in header.split_whitespace() {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| bad(format!("bad header field `{part}`")))?;
        let parsed: usize = value
            .parse()
            .map_err(|e| bad(format!("header field `{key}`: {e}")))?;
        match key {
            "k" => rank = Some(parsed),
            "users" => users = Some(parsed),
            "items" => items = Some(parsed),
            other => return Err(bad(format!("unknown header field `{other}`"))),
        }
    }
    let rank = rank.ok_or_else(|| bad("header missing k".into()))?;
    let users = users.ok_or_else(|| bad("header missing users".into()))?;
    let items = items.ok_or_else(|| bad("header missing items".into()))?;

    let mut rows = Vec::with_capacity(users + items);
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("row {}: {e}", i + 2)))?;
        if row.len() != rank {
            return Err(bad(format!(
                "row {}: expected {rank} entries, got {}",
                i + 2,
                row.len()
            )));
        }
        rows.push(row);
    }
    if rows.len() != users + items {
        return Err(bad(format!(
            "expected {} rows, got {}",
            users + items,
            rows.len()
        )));
    }
    let item_rows = rows.split_off(users);
    Ok((rows, item_rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write as _;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_parses_ml1m_lines_and_reindexes() {
        let f = write_temp("1::1193::5::978300760\n1::661::3::978302109\n2::1193::4::978300275\n");
        let ds = ingest_ratings(f.path()).unwrap();
        assert_eq!(ds.num_users(), 2);
        assert_eq!(ds.num_items(), 2);
        assert_eq!(ds.user_ids, vec![1, 2]);
        assert_eq!(ds.item_ids, vec![1193, 661]);
        assert_eq!(
            ds.ratings[0],
            Rating {
                user: 0,
                item: 0,
                value: 5.0
            }
        );
    }

    #[test]
    fn ingest_rejects_malformed_lines_with_line_numbers() {
        let f = write_temp("1::1193::5::978300760\n1::661::not_a_rating::978302109\n");
        match ingest_ratings(f.path()) {
            Err(DataError::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_out_of_range_rating() {
        let f = write_temp("1::1193::9::978300760\n");
        assert!(matches!(
            ingest_ratings(f.path()),
            Err(DataError::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn ingest_empty_file_is_an_error() {
        let f = write_temp("");
        assert!(matches!(
            ingest_ratings(f.path()),
            Err(DataError::EmptyDataset)
        ));
    }

    #[test]
    fn duplicate_pair_keeps_last_rating() {
        let f = write_temp("7::9::2::1\n7::9::5::2\n8::9::1::3\n");
        let ds = ingest_ratings(f.path()).unwrap();
        assert_eq!(ds.ratings.len(), 2);
        assert_eq!(ds.ratings[0].value, 5.0);
    }

    #[test]
    fn exact_rank_one_matrix_is_recovered() {
        // all entries u_i * v_j: a rank-1 factorization exists exactly
        let u = [1.0, 2.0, 3.0, 4.0];
        let v = [0.5, -1.0, 2.0];
        let mut triples = Vec::new();
        for (i, &a) in u.iter().enumerate() {
            for (j, &b) in v.iter().enumerate() {
                triples.push((i, j, a * b));
            }
        }
        let ds = RatingsDataset::from_triples(4, 3, &triples);
        let f = factorize(&ds, 1, 60, 1e-12, 3).unwrap();
        assert!(f.train_rmse <= 1e-8, "rmse {}", f.train_rmse);
    }

    #[test]
    fn rank_exceeding_matrix_size_is_rejected() {
        let ds = RatingsDataset::from_triples(2, 3, &[(0, 0, 1.0), (1, 2, 2.0)]);
        assert!(matches!(
            factorize(&ds, 3, 5, 0.1, 0),
            Err(DataError::InvalidRank { .. })
        ));
    }

    #[test]
    fn factors_file_roundtrip() {
        let users = vec![vec![1.0, -0.5], vec![0.25, 2.0_f64.sqrt()]];
        let items = vec![vec![std::f64::consts::PI, 0.0]];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_factors_file(f.path(), &users, &items).unwrap();
        let (u, i) = read_factors_file(f.path()).unwrap();
        assert_eq!(u, users);
        assert_eq!(i, items);
    }

    #[test]
    fn factors_file_header_is_validated() {
        let f = write_temp("k=2 users=1\n1.0 2.0\n");
        assert!(matches!(
            read_factors_file(f.path()),
            Err(DataError::BadFactorsFile { .. })
        ));
    }
}
