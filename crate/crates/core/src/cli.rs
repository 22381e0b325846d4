//! Implementations of the `generate`, `run` and `report` commands. The
//! binary only parses arguments and maps errors to exit codes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::ranking::write_rankers;
use crate::sim::{
    ideal_ranker_baseline, mean_and_std, read_metrics_csv, run_experiment, write_metrics_csv,
    write_outcomes_csv, CellLabel, MetricsRow, PreparedWorld, RankingPolicy, Scenario, World,
};
use crate::trips::{
    read_queries_csv, read_trips_csv, read_users_csv, write_queries_csv, write_trips_csv,
    write_users_csv, TripStore,
};

pub const TRIPS_FILE: &str = "trips.csv";
pub const USERS_FILE: &str = "users.csv";
pub const QUERIES_FILE: &str = "queries.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Number of trailing days summarised by `report`.
pub const FINAL_WINDOW_DAYS: u32 = 5;

/// Writes through a temporary file and renames it into place.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        fill(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

#[derive(Debug, Clone)]
pub struct GenerateSummary {
    pub n_users: usize,
    pub n_trips: usize,
    pub n_queries: usize,
    pub files: Vec<PathBuf>,
}

pub fn generate(cfg: &Config, out: &Path) -> Result<GenerateSummary> {
    let world = World::generate(&cfg.world(), cfg.seed)?;
    fs::create_dir_all(out)?;
    let files = vec![
        out.join(TRIPS_FILE),
        out.join(USERS_FILE),
        out.join(QUERIES_FILE),
    ];
    write_atomic(&files[0], |w| write_trips_csv(world.store.trips(), w))?;
    write_atomic(&files[1], |w| write_users_csv(&world.population, w))?;
    write_atomic(&files[2], |w| write_queries_csv(&world.queries, w))?;
    Ok(GenerateSummary {
        n_users: world.population.len(),
        n_trips: world.store.len(),
        n_queries: world.queries.len(),
        files,
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Rebuilds a world from the CSV files written by [`generate`].
pub fn load_world(cfg: &Config, data_dir: &Path) -> Result<World> {
    let population = read_users_csv(open(&data_dir.join(USERS_FILE))?)?;
    if let Some(u) = population.iter().find(|u| u.topics.dim() != cfg.topic_dim) {
        return Err(Error::Data(format!(
            "user {} has {} topics but the config says topic_dim = {}",
            u.user_id,
            u.topics.dim(),
            cfg.topic_dim
        )));
    }
    let trips = read_trips_csv(open(&data_dir.join(TRIPS_FILE))?)?;
    let queries = read_queries_csv(open(&data_dir.join(QUERIES_FILE))?)?;
    if queries.is_empty() {
        return Err(Error::Empty("query file"));
    }
    Ok(World {
        population,
        store: TripStore::new(trips, cfg.cell_size_m)?,
        queries,
        derivation: cfg.derivation(),
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub n_seeds: Option<usize>,
    pub scenario: Option<Scenario>,
    pub epsilons: Option<Vec<f64>>,
    pub thresholds: Option<Vec<f64>>,
    pub verbose_outcomes: bool,
}

impl RunOptions {
    /// Config with command-line overrides applied.
    pub fn apply(&self, cfg: &Config) -> Result<Config> {
        let mut cfg = cfg.clone();
        if let Some(n) = self.n_seeds {
            cfg.n_seeds = n;
        }
        if let Some(s) = self.scenario {
            cfg.scenario = s;
        }
        if let Some(e) = &self.epsilons {
            cfg.epsilons = e.clone();
        }
        if let Some(t) = &self.thresholds {
            cfg.thresholds = t.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: Config,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

fn cells(cfg: &Config) -> Vec<CellLabel> {
    let mut out = Vec::new();
    for &threshold in &cfg.thresholds {
        for &eps in &cfg.epsilons {
            out.push(CellLabel {
                epsilon: Some(eps),
                threshold,
                scenario: cfg.scenario,
            });
        }
        if cfg.ideal_baseline {
            out.push(CellLabel {
                epsilon: None,
                threshold,
                scenario: cfg.scenario,
            });
        }
    }
    out
}

/// Runs every sweep cell of the configuration against the data in
/// `data_dir`, writing one metrics CSV per cell. The manifest is written
/// before any result.
pub fn run(cfg: &Config, data_dir: &Path, out: &Path, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let cfg = opts.apply(cfg)?;
    let world = load_world(&cfg, data_dir)?;
    fs::create_dir_all(out)?;

    let cells = cells(&cfg);
    let outputs: Vec<PathBuf> = cells
        .iter()
        .map(|c| out.join(format!("{}.csv", c.file_stem())))
        .collect();
    let inputs = [TRIPS_FILE, USERS_FILE, QUERIES_FILE]
        .iter()
        .map(|f| {
            Ok(InputDigest {
                path: f.to_string(),
                sha256: sha256_file(&data_dir.join(f))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        seeds: cfg.seeds(),
        inputs,
        outputs: outputs
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect(),
    };
    write_atomic(&out.join(MANIFEST_FILE), |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    })?;

    let prepared = PreparedWorld::new(&world, &cfg.features())?;
    let seeds = cfg.seeds();
    for (cell, path) in cells.iter().zip(&outputs) {
        let exp = cfg.experiment(cell.epsilon.unwrap_or(0.0), cell.threshold, cell.scenario);
        let result = match cell.epsilon {
            Some(_) => run_experiment(
                &exp,
                &prepared,
                &seeds,
                RankingPolicy::Learned,
                opts.verbose_outcomes,
            )?,
            None => ideal_ranker_baseline(&exp, &prepared, &seeds)?,
        };
        write_atomic(path, |w| write_metrics_csv(cell, &result.runs, w))?;
        if opts.verbose_outcomes {
            write_atomic(&out.join(format!("outcomes_{}.csv", cell.key())), |w| {
                write_outcomes_csv(&result.runs, w)
            })?;
            if cell.epsilon.is_some() {
                let dir = out.join("rankers");
                fs::create_dir_all(&dir)?;
                for r in &result.runs {
                    let path = dir.join(format!("rankers_{}_seed-{}.csv", cell.key(), r.seed));
                    write_atomic(&path, |w| {
                        write_rankers(r.rankers.iter().map(|(u, rk)| (*u, rk)), w)
                    })?;
                }
            }
        }
    }
    Ok(outputs)
}

/// Cross-seed summary of one metrics series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSummary {
    pub epsilon: String,
    pub threshold: f64,
    pub scenario: Scenario,
    /// Per-day cross-seed means.
    pub daily_rank: BTreeMap<u32, f64>,
    pub daily_success: BTreeMap<u32, f64>,
    pub first_day_rank: f64,
    /// Mean and standard deviation across seeds of each seed's mean rank
    /// over the final window.
    pub final_rank: (f64, f64),
    pub final_success: (f64, f64),
    pub n_seeds: usize,
}

pub fn summarize(rows: &[MetricsRow]) -> Result<SeriesSummary> {
    let first = rows.first().ok_or(Error::Empty("metrics rows"))?;
    let mut per_day: BTreeMap<u32, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut per_seed: BTreeMap<u64, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        let e = per_day.entry(r.day).or_default();
        e.0.push(r.mean_best_rank);
        e.1.push(r.success_prob);
        per_seed.entry(r.seed).or_default().push(r);
    }
    let last_day = *per_day.keys().next_back().expect("non-empty");
    let window_start = (last_day + 1).saturating_sub(FINAL_WINDOW_DAYS);
    let mut seed_rank = Vec::new();
    let mut seed_success = Vec::new();
    for rs in per_seed.values() {
        let w: Vec<&&MetricsRow> = rs.iter().filter(|r| r.day >= window_start).collect();
        seed_rank.push(w.iter().map(|r| r.mean_best_rank).sum::<f64>() / w.len() as f64);
        seed_success.push(w.iter().map(|r| r.success_prob).sum::<f64>() / w.len() as f64);
    }
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let daily_rank: BTreeMap<u32, f64> = per_day.iter().map(|(d, (r, _))| (*d, mean(r))).collect();
    let daily_success = per_day.iter().map(|(d, (_, s))| (*d, mean(s))).collect();
    Ok(SeriesSummary {
        epsilon: first.epsilon.clone(),
        threshold: first.threshold,
        scenario: first.scenario,
        first_day_rank: daily_rank[per_day.keys().next().expect("non-empty")],
        daily_rank,
        daily_success,
        final_rank: mean_and_std(&seed_rank),
        final_success: mean_and_std(&seed_success),
        n_seeds: per_seed.len(),
    })
}

#[derive(Debug, Clone)]
pub struct Report {
    pub summary: String,
    pub files: Vec<PathBuf>,
}

/// Aggregates every `metrics_*.csv` and `ideal_*.csv` in `metrics_dir` into per-figure
/// series (one column per epsilon, one row per day) and a text summary.
pub fn report(metrics_dir: &Path, out: Option<&Path>) -> Result<Report> {
    let mut paths: Vec<PathBuf> = fs::read_dir(metrics_dir)
        .map_err(|e| Error::Data(format!("{}: {e}", metrics_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_name().is_some_and(|n| {
                    let n = n.to_string_lossy();
                    n.starts_with("metrics_") || n.starts_with("ideal_")
                })
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Empty("metrics directory"));
    }

    let mut groups: BTreeMap<(String, Scenario), Vec<SeriesSummary>> = BTreeMap::new();
    for p in &paths {
        let rows = read_metrics_csv(open(p)?)?;
        if rows.is_empty() {
            continue;
        }
        let s = summarize(&rows)?;
        groups
            .entry((s.threshold.to_string(), s.scenario))
            .or_default()
            .push(s);
    }
    if groups.is_empty() {
        return Err(Error::Empty("metrics rows"));
    }

    let out_dir = out.unwrap_or(metrics_dir);
    fs::create_dir_all(out_dir)?;
    let mut summary = String::new();
    writeln!(
        summary,
        "{:<9} {:>4} {:>7} {:>10} {:>18} {:>18} {:>6}",
        "scenario", "C", "eps", "day0 rank", "final rank", "final success", "seeds"
    )
    .unwrap();
    let mut files = Vec::new();
    for ((c, scenario), mut series) in groups {
        series.sort_by(|a, b| epsilon_order(&a.epsilon).total_cmp(&epsilon_order(&b.epsilon)));
        for s in &series {
            writeln!(
                summary,
                "{:<9} {:>4} {:>7} {:>10.3} {:>10.3} ± {:<5.3} {:>10.3} ± {:<5.3} {:>6}",
                scenario.to_string(),
                c,
                s.epsilon,
                s.first_day_rank,
                s.final_rank.0,
                s.final_rank.1,
                s.final_success.0,
                s.final_success.1,
                s.n_seeds
            )
            .unwrap();
        }
        for (metric, pick) in [("rank", 0), ("success", 1)] {
            let path = out_dir.join(format!("report_C-{c}_{scenario}_{metric}.csv"));
            write_atomic(&path, |w| {
                let mut cw = csv::Writer::from_writer(w);
                let mut header = vec!["day".to_string()];
                header.extend(series.iter().map(|s| format!("eps_{}", s.epsilon)));
                cw.write_record(&header)?;
                let days: Vec<u32> = series[0].daily_rank.keys().copied().collect();
                for d in days {
                    let mut rec = vec![d.to_string()];
                    for s in &series {
                        let m = if pick == 0 {
                            &s.daily_rank
                        } else {
                            &s.daily_success
                        };
                        rec.push(m.get(&d).map_or(String::new(), |v| v.to_string()));
                    }
                    cw.write_record(&rec)?;
                }
                cw.flush()?;
                Ok(())
            })?;
            files.push(path);
        }
    }
    Ok(Report { summary, files })
}

fn epsilon_order(label: &str) -> f64 {
    label.parse().unwrap_or(f64::INFINITY)
}
