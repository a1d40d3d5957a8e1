//! Parameter sweeps over indexes, producing per-query CSV rows and a JSON
//! aggregate document.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ball_tree::BallTree;
use crate::bc_tree::{BcTree, LeafPruning};
use crate::data::{HyperplaneQuery, PointSet};
use crate::error::{Error, Result};
use crate::oracle::{exact_topk, recall, GroundTruth};
use crate::tree::{Budget, Counters, P2hIndex, Preference, SearchParams, SearchResult};

/// Header comment of the CSV report. Bump when columns change.
pub const CSV_SCHEMA: &str = "# p2h-bench-csv v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ball,
    Bc,
    BcWoCone,
    BcWoBall,
    BcWoBoth,
    Oracle,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Ball,
        Algorithm::Bc,
        Algorithm::BcWoCone,
        Algorithm::BcWoBall,
        Algorithm::BcWoBoth,
        Algorithm::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ball => "ball",
            Algorithm::Bc => "bc",
            Algorithm::BcWoCone => "bc_wo_cone",
            Algorithm::BcWoBall => "bc_wo_ball",
            Algorithm::BcWoBoth => "bc_wo_both",
            Algorithm::Oracle => "oracle",
        }
    }

    fn pruning(self) -> Option<LeafPruning> {
        match self {
            Algorithm::Bc => Some(LeafPruning::FULL),
            Algorithm::BcWoCone => Some(LeafPruning::WITHOUT_CONE),
            Algorithm::BcWoBall => Some(LeafPruning::WITHOUT_BALL),
            Algorithm::BcWoBoth => Some(LeafPruning::NONE),
            Algorithm::Ball | Algorithm::Oracle => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .or(match key.as_str() {
                "balltree" | "ball_tree" => Some(Algorithm::Ball),
                "bctree" | "bc_tree" => Some(Algorithm::Bc),
                "bc_wo_c" => Some(Algorithm::BcWoCone),
                "bc_wo_b" => Some(Algorithm::BcWoBall),
                "bc_wo_bc" => Some(Algorithm::BcWoBoth),
                _ => None,
            })
            .ok_or_else(|| {
                format!("unknown algorithm '{s}' (expected ball, bc, bc_wo_cone, bc_wo_ball, bc_wo_both or oracle)")
            })
    }
}

/// A budget as written on the command line: unlimited, an absolute number of
/// verifications, or a fraction of `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetSpec {
    Unlimited,
    Absolute(u64),
    Fraction(f64),
}

impl BudgetSpec {
    /// Fractions round up and never drop below `k`.
    pub fn resolve(self, n: usize, k: usize) -> Budget {
        match self {
            BudgetSpec::Unlimited => Budget::Unlimited,
            BudgetSpec::Absolute(c) => Budget::Candidates(c),
            BudgetSpec::Fraction(f) => {
                let c = (f * n as f64).ceil() as u64;
                Budget::Candidates(c.max(k as u64))
            }
        }
    }
}

impl fmt::Display for BudgetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BudgetSpec::Unlimited => f.write_str("inf"),
            BudgetSpec::Absolute(c) => write!(f, "{c}"),
            BudgetSpec::Fraction(x) => write!(f, "{}%", x * 100.0),
        }
    }
}

impl FromStr for BudgetSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "inf" | "unlimited" | "exact" | "none" => return Ok(BudgetSpec::Unlimited),
            _ => {}
        }
        let fraction = if let Some(pct) = s.strip_suffix('%') {
            let v: f64 = pct
                .trim()
                .parse()
                .map_err(|_| format!("bad budget percentage '{s}'"))?;
            Some(v / 100.0)
        } else if s.contains('.') {
            Some(
                s.parse::<f64>()
                    .map_err(|_| format!("bad budget fraction '{s}'"))?,
            )
        } else {
            None
        };
        match fraction {
            Some(f) if f > 0.0 && f <= 1.0 => Ok(BudgetSpec::Fraction(f)),
            Some(_) => Err(format!("budget fraction '{s}' must be in (0, 1]")),
            None => match s.parse::<u64>() {
                Ok(c) if c > 0 => Ok(BudgetSpec::Absolute(c)),
                _ => Err(format!("bad budget '{s}' (expected inf, N, 0.x or N%)")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub algorithms: Vec<Algorithm>,
    pub leaf_sizes: Vec<usize>,
    pub ks: Vec<usize>,
    pub budgets: Vec<BudgetSpec>,
    pub preference: Preference,
    pub seed: u64,
    pub queries: usize,
    pub repetitions: usize,
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            algorithms: vec![Algorithm::Ball, Algorithm::Bc],
            leaf_sizes: vec![100],
            ks: vec![1, 10, 20, 40],
            budgets: vec![BudgetSpec::Unlimited],
            preference: Preference::Center,
            seed: 0,
            queries: 100,
            repetitions: 1,
            threads: 1,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("algorithm", self.algorithms.is_empty()),
            ("leaf size", self.leaf_sizes.is_empty()),
            ("k", self.ks.is_empty()),
            ("budget", self.budgets.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::InvalidInput(format!("{name} list is empty")));
        }
        if self.leaf_sizes.contains(&0) {
            return Err(Error::InvalidInput("leaf size must be at least 1".into()));
        }
        if self.ks.contains(&0) {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        if self.repetitions == 0 || self.queries == 0 || self.threads == 0 {
            return Err(Error::InvalidInput(
                "repetitions, queries and threads must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn k_max(&self) -> usize {
        self.ks.iter().copied().max().unwrap_or(1)
    }
}

/// One query execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub algorithm: Algorithm,
    pub leaf_size: usize,
    pub k: usize,
    pub budget: String,
    pub preference: Preference,
    pub repetition: usize,
    pub query: usize,
    pub recall: f64,
    pub time_us: f64,
    pub candidates_verified: u64,
    pub center_ip_count: u64,
    pub nodes_visited: u64,
    pub leaves_scanned: u64,
    pub build_time_us: f64,
    pub index_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Stats {
        let mut count = 0usize;
        let mut sum = 0.0;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            count += 1;
            sum += v;
            min = min.min(v);
            max = max.max(v);
        }
        if count == 0 {
            return Stats {
                mean: 0.0,
                min: 0.0,
                max: 0.0,
            };
        }
        Stats {
            mean: sum / count as f64,
            min,
            max,
        }
    }
}

/// Summary of one `(algorithm, leaf size, k, budget)` point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub algorithm: Algorithm,
    pub leaf_size: usize,
    pub k: usize,
    pub budget: String,
    pub preference: Preference,
    pub build_time_us: f64,
    pub index_bytes: u64,
    pub runs: usize,
    pub recall: Stats,
    pub time_us: Stats,
    /// Mean query time of each repetition, in order.
    pub repetition_mean_time_us: Vec<f64>,
    pub candidates_verified: Stats,
    pub center_ip_count: Stats,
    pub nodes_visited: Stats,
    pub leaves_scanned: Stats,
    pub totals: Counters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub n: usize,
    pub dim: usize,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: String,
    pub dataset: DatasetInfo,
    pub queries: usize,
    pub repetitions: usize,
    pub threads: usize,
    pub seed: u64,
    pub aggregates: Vec<Aggregate>,
    #[serde(skip)]
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = fs::File::create(path)?;
        file.write_all(self.to_csv()?.as_bytes())?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = Vec::new();
        writeln!(out, "{CSV_SCHEMA}")?;
        {
            let mut writer = csv::Writer::from_writer(&mut out);
            for row in &self.rows {
                writer
                    .serialize(row)
                    .map_err(|e| Error::Io(std::io::Error::other(e)))?;
            }
            writer.flush()?;
        }
        Ok(String::from_utf8(out).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(std::io::Error::other(e)))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Parses rows back from [`BenchReport::to_csv`] output.
    pub fn parse_csv(text: &str) -> Result<Vec<BenchRow>> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        reader
            .deserialize()
            .map(|r| r.map_err(|e| Error::malformed("csv", e.to_string())))
            .collect()
    }
}

enum Built {
    Ball(BallTree),
    Bc(BcTree, LeafPruning),
    Oracle,
}

impl Built {
    fn search(
        &self,
        data: &PointSet,
        q: &HyperplaneQuery,
        params: &SearchParams,
    ) -> Result<SearchResult> {
        match self {
            Built::Ball(t) => t.search(q, params),
            Built::Bc(t, pruning) => t.search_with(q, params, *pruning),
            Built::Oracle => Ok(SearchResult {
                neighbors: exact_topk(data, q, params.k)?,
                counters: Counters {
                    candidates_verified: data.len() as u64,
                    ..Counters::default()
                },
            }),
        }
    }
}

/// Runs every configured point over `queries`, scoring recall against
/// `truth`.
pub fn run_bench(
    data: &PointSet,
    queries: &[HyperplaneQuery],
    truth: &GroundTruth,
    config: &BenchConfig,
) -> Result<BenchReport> {
    config.validate()?;
    if truth.neighbors.len() != queries.len() {
        return Err(Error::MissingGroundTruth(format!(
            "{} ground-truth lists for {} queries",
            truth.neighbors.len(),
            queries.len()
        )));
    }
    if let Some(&k) = config.ks.iter().find(|&&k| k > truth.k_max) {
        return Err(Error::MissingGroundTruth(format!(
            "k = {k} exceeds ground truth k_max = {}",
            truth.k_max
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;

    let mut rows = Vec::new();
    let mut aggregates = Vec::new();
    for &algorithm in &config.algorithms {
        let leaf_sizes: &[usize] = if algorithm == Algorithm::Oracle {
            &[0]
        } else {
            &config.leaf_sizes
        };
        for &leaf_size in leaf_sizes {
            let started = Instant::now();
            let (built, index_bytes) = match algorithm {
                Algorithm::Oracle => (Built::Oracle, 0),
                Algorithm::Ball => {
                    let t = BallTree::build(data, leaf_size, config.seed)?;
                    let bytes = t.to_bytes().len() as u64;
                    (Built::Ball(t), bytes)
                }
                other => {
                    let t = BcTree::build(data, leaf_size, config.seed)?;
                    let bytes = t.to_bytes().len() as u64;
                    (Built::Bc(t, other.pruning().unwrap_or_default()), bytes)
                }
            };
            let build_time_us = started.elapsed().as_secs_f64() * 1e6;
            let budgets: &[BudgetSpec] = if algorithm == Algorithm::Oracle {
                &[BudgetSpec::Unlimited]
            } else {
                &config.budgets
            };

            for &k in &config.ks {
                for &budget_spec in budgets {
                    let params = SearchParams {
                        k: k.min(data.len()),
                        budget: budget_spec.resolve(data.len(), k),
                        preference: config.preference,
                    };
                    let mut point_rows = Vec::new();
                    for repetition in 0..config.repetitions {
                        let timed: Vec<(SearchResult, f64)> = pool.install(|| {
                            queries
                                .par_iter()
                                .map(|q| {
                                    let t = Instant::now();
                                    let res = built.search(data, q, &params)?;
                                    Ok((res, t.elapsed().as_secs_f64() * 1e6))
                                })
                                .collect::<Result<Vec<_>>>()
                        })?;
                        for (query, (res, time_us)) in timed.into_iter().enumerate() {
                            let r = recall(&res.neighbors, truth.top(query, params.k)?, params.k)?;
                            point_rows.push(BenchRow {
                                algorithm,
                                leaf_size,
                                k: params.k,
                                budget: budget_spec.to_string(),
                                preference: config.preference,
                                repetition,
                                query,
                                recall: r,
                                time_us,
                                candidates_verified: res.counters.candidates_verified,
                                center_ip_count: res.counters.center_ip_count,
                                nodes_visited: res.counters.nodes_visited,
                                leaves_scanned: res.counters.leaves_scanned,
                                build_time_us,
                                index_bytes,
                            });
                        }
                    }
                    aggregates.push(aggregate(&point_rows, config.repetitions));
                    rows.extend(point_rows);
                }
            }
        }
    }
    Ok(BenchReport {
        schema: CSV_SCHEMA.trim_start_matches("# ").to_string(),
        dataset: DatasetInfo {
            n: data.len(),
            dim: data.dim(),
            fingerprint: format!("{:016x}", truth.data_fingerprint),
        },
        queries: queries.len(),
        repetitions: config.repetitions,
        threads: config.threads,
        seed: config.seed,
        aggregates,
        rows,
    })
}

/// Summarizes the rows of a single configuration point.
pub fn aggregate(rows: &[BenchRow], repetitions: usize) -> Aggregate {
    let first = &rows[0];
    let mut totals = Counters::default();
    for r in rows {
        totals += Counters {
            center_ip_count: r.center_ip_count,
            candidates_verified: r.candidates_verified,
            nodes_visited: r.nodes_visited,
            leaves_scanned: r.leaves_scanned,
        };
    }
    let repetition_mean_time_us = (0..repetitions)
        .map(|rep| {
            Stats::of(
                rows.iter()
                    .filter(|r| r.repetition == rep)
                    .map(|r| r.time_us),
            )
            .mean
        })
        .collect();
    Aggregate {
        algorithm: first.algorithm,
        leaf_size: first.leaf_size,
        k: first.k,
        budget: first.budget.clone(),
        preference: first.preference,
        build_time_us: first.build_time_us,
        index_bytes: first.index_bytes,
        runs: rows.len(),
        recall: Stats::of(rows.iter().map(|r| r.recall)),
        time_us: Stats::of(rows.iter().map(|r| r.time_us)),
        repetition_mean_time_us,
        candidates_verified: Stats::of(rows.iter().map(|r| r.candidates_verified as f64)),
        center_ip_count: Stats::of(rows.iter().map(|r| r.center_ip_count as f64)),
        nodes_visited: Stats::of(rows.iter().map(|r| r.nodes_visited as f64)),
        leaves_scanned: Stats::of(rows.iter().map(|r| r.leaves_scanned as f64)),
        totals,
    }
}
