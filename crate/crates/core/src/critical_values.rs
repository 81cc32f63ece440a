//! Critical values for the monitoring boundaries.
//!
//! The weighted and Rényi schemes use Monte Carlo quantiles of suprema of a
//! planar Wiener process `W = (W₁, W₂)`:
//!
//! * weighted, `0 ≤ η < 1`: `sup_{0<t≤1} ‖W(t)‖² / t^η`
//! * Rényi, `η > 1`: `sup_{1≤t<∞} ‖W(t)‖² / t^η`
//!
//! Time inversion `W(t) = t W(1/t)` maps the Rényi functional onto
//! `sup_{0<t≤1} ‖W(t)‖² / t^{2−η}`. [`RenyiMethod`] selects between direct
//! simulation on `[1, T]`, that inverted form, and the form with exponent
//! `1 − η` that appears in parts of the literature; the last one gives
//! smaller values and is kept so published tables can be reproduced.
//!
//! The Darling–Erdős boundary uses the Gumbel quantile `−log(−log(1 − α))`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, VolError};
use crate::rng::{derive_seed, rng_from_seed};

/// Default truncation `T` of the Rényi functional.
pub const DEFAULT_HORIZON_RATIO: f64 = 1000.0;

/// Dyadic refinement levels inside the first cell of the uniform grid.
const FIRST_CELL_LEVELS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenyiMethod {
    /// `sup_{1≤t≤T} ‖W(t)‖²/t^η` on a geometric grid.
    Direct,
    /// `sup_{0<t≤1} ‖W(t)‖²/t^{2−η}`.
    TimeInversion,
    /// `sup_{0<t≤1} ‖W(t)‖²/t^{1−η}`.
    PrintedExponent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvScheme {
    Weighted,
    Renyi(RenyiMethod),
    DarlingErdos,
}

impl CvScheme {
    pub fn name(&self) -> &'static str {
        match self {
            CvScheme::Weighted => "weighted",
            CvScheme::Renyi(RenyiMethod::Direct) => "renyi",
            CvScheme::Renyi(RenyiMethod::TimeInversion) => "renyi_inverted",
            CvScheme::Renyi(RenyiMethod::PrintedExponent) => "renyi_printed",
            CvScheme::DarlingErdos => "de",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "weighted" => CvScheme::Weighted,
            "renyi" => CvScheme::Renyi(RenyiMethod::Direct),
            "renyi_inverted" => CvScheme::Renyi(RenyiMethod::TimeInversion),
            "renyi_printed" => CvScheme::Renyi(RenyiMethod::PrintedExponent),
            "de" | "darling_erdos" => CvScheme::DarlingErdos,
            other => return invalid(format!("unknown critical-value scheme '{other}'")),
        })
    }

    pub fn validate_eta(&self, eta: f64) -> Result<()> {
        let ok = match self {
            CvScheme::Weighted => (0.0..1.0).contains(&eta),
            CvScheme::Renyi(_) => eta > 1.0 && eta.is_finite(),
            CvScheme::DarlingErdos => true,
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("eta = {eta} not admissible for scheme {}", self.name()))
        }
    }
}

impl fmt::Display for CvScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvRequest {
    pub grid_points: usize,
    pub reps: usize,
    /// `T` for direct Rényi simulation on `[1, T]`.
    pub horizon_ratio: f64,
    pub seed: u64,
}

impl Default for CvRequest {
    fn default() -> Self {
        Self { grid_points: 10_000, reps: 20_000, horizon_ratio: DEFAULT_HORIZON_RATIO, seed: 20_240_601 }
    }
}

impl CvRequest {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 10 {
            return invalid(format!("grid needs at least 10 points, got {}", self.grid_points));
        }
        if self.reps < 100 {
            return invalid(format!("need at least 100 replications, got {}", self.reps));
        }
        if !(self.horizon_ratio > 1.0 && self.horizon_ratio.is_finite()) {
            return invalid(format!("horizon ratio must exceed 1, got {}", self.horizon_ratio));
        }
        Ok(())
    }

    /// Whether the request meets the size recommended for published tables.
    pub fn is_table_grade(&self) -> bool {
        self.grid_points >= 10_000 && self.reps >= 10_000
    }
}

/// Quantile estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvEstimate {
    pub c: f64,
    pub se: f64,
}

/// Exact `−log(−log(1 − level))`.
pub fn cv_darling_erdos(level: f64) -> Result<f64> {
    check_level(level)?;
    Ok(-(-(1.0 - level).ln()).ln())
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        invalid(format!("level must lie in (0, 1), got {level}"))
    }
}

/// Time points and weights `t^{-p}` of a functional `sup_t w(t) ‖W(t)‖²`.
#[derive(Debug, Clone)]
pub struct SupGrid {
    /// Standard deviation of each increment; the first node is reached from 0.
    increments_sd: Vec<f64>,
    weights: Vec<f64>,
}

impl SupGrid {
    /// `(0, 1]` with `points` uniform nodes, the first cell refined
    /// dyadically so that the supremum near `t = 0` is resolved. The node set
    /// does not depend on `p`, so equal seeds give equal paths for every
    /// exponent.
    pub fn unit_interval(points: usize, p: f64) -> Self {
        let h = 1.0 / points as f64;
        let mut t = Vec::with_capacity(points + FIRST_CELL_LEVELS);
        for i in (1..=FIRST_CELL_LEVELS).rev() {
            t.push(h * 0.5f64.powi(i as i32));
        }
        t.extend((1..=points).map(|j| j as f64 * h));
        Self::from_times(&t, p)
    }

    /// `[1, T]` with `points` geometric nodes.
    pub fn geometric(points: usize, horizon: f64, p: f64) -> Self {
        let t: Vec<f64> = (0..points).map(|j| horizon.powf(j as f64 / (points - 1) as f64)).collect();
        Self::from_times(&t, p)
    }

    fn from_times(t: &[f64], p: f64) -> Self {
        let mut prev = 0.0;
        let mut increments_sd = Vec::with_capacity(t.len());
        for &ti in t {
            increments_sd.push((ti - prev).sqrt());
            prev = ti;
        }
        let weights = t.iter().map(|&ti| ti.powf(-p)).collect();
        Self { increments_sd, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// One realization of the supremum; `dims` is 1 or 2.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R, dims: usize) -> f64 {
        let (mut w1, mut w2) = (0.0f64, 0.0f64);
        let mut best = f64::NEG_INFINITY;
        for (sd, wt) in self.increments_sd.iter().zip(&self.weights) {
            let z1: f64 = StandardNormal.sample(rng);
            w1 += z1 * sd;
            let sq = if dims == 2 {
                let z2: f64 = StandardNormal.sample(rng);
                w2 += z2 * sd;
                w1 * w1 + w2 * w2
            } else {
                w1 * w1
            };
            best = best.max(sq * wt);
        }
        best
    }

    /// Sorted suprema over `reps` replications with per-replication seeds.
    pub fn sorted_suprema(&self, reps: usize, seed: u64, dims: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..reps as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_from_seed(derive_seed(seed, i));
                self.sample(&mut rng, dims)
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

fn grid_for(scheme: CvScheme, eta: f64, req: &CvRequest) -> Result<SupGrid> {
    scheme.validate_eta(eta)?;
    Ok(match scheme {
        CvScheme::Weighted => SupGrid::unit_interval(req.grid_points, eta),
        CvScheme::Renyi(RenyiMethod::Direct) => SupGrid::geometric(req.grid_points, req.horizon_ratio, eta),
        CvScheme::Renyi(RenyiMethod::TimeInversion) => SupGrid::unit_interval(req.grid_points, 2.0 - eta),
        CvScheme::Renyi(RenyiMethod::PrintedExponent) => SupGrid::unit_interval(req.grid_points, 1.0 - eta),
        CvScheme::DarlingErdos => return invalid("Darling-Erdos critical values are closed form"),
    })
}

/// Empirical `(1 − level)` quantile of sorted draws with the order-statistic
/// standard error `sqrt(p(1−p)/n) / f̂(c)`, `f̂` a Gaussian kernel density
/// estimate with Silverman's bandwidth.
pub fn quantile_with_se(sorted: &[f64], level: f64) -> Result<CvEstimate> {
    check_level(level)?;
    let n = sorted.len();
    if n < 2 {
        return invalid("need at least two draws");
    }
    let p = 1.0 - level;
    let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
    let c = sorted[idx];

    let mean = sorted.iter().sum::<f64>() / n as f64;
    let sd = (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let q = |u: f64| sorted[((u * n as f64) as usize).min(n - 1)];
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    let se = if h > 0.0 {
        let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h * n as f64);
        let lo = sorted.partition_point(|&x| x < c - 8.0 * h);
        let hi = sorted.partition_point(|&x| x <= c + 8.0 * h);
        let dens: f64 =
            sorted[lo..hi].iter().map(|&x| (-0.5 * ((x - c) / h).powi(2)).exp()).sum::<f64>() * norm;
        if dens > 0.0 {
            (p * (1.0 - p) / n as f64).sqrt() / dens
        } else {
            f64::INFINITY
        }
    } else {
        0.0
    };
    Ok(CvEstimate { c, se })
}

/// Critical values for several levels from one simulation pass.
pub fn simulate_cv_levels(scheme: CvScheme, eta: f64, levels: &[f64], req: &CvRequest) -> Result<Vec<CvEstimate>> {
    if scheme == CvScheme::DarlingErdos {
        return levels.iter().map(|&l| Ok(CvEstimate { c: cv_darling_erdos(l)?, se: 0.0 })).collect();
    }
    req.validate()?;
    for &l in levels {
        check_level(l)?;
    }
    let grid = grid_for(scheme, eta, req)?;
    let draws = grid.sorted_suprema(req.reps, req.seed, 2);
    levels.iter().map(|&l| quantile_with_se(&draws, l)).collect()
}

pub fn simulate_cv_weighted(eta: f64, level: f64, req: &CvRequest) -> Result<CvEstimate> {
    Ok(simulate_cv_levels(CvScheme::Weighted, eta, &[level], req)?[0])
}

/// Direct simulation on `[1, T]`.
pub fn simulate_cv_renyi(eta: f64, level: f64, req: &CvRequest) -> Result<CvEstimate> {
    Ok(simulate_cv_levels(CvScheme::Renyi(RenyiMethod::Direct), eta, &[level], req)?[0])
}

/// One row of a critical-value table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvEntry {
    pub scheme: CvScheme,
    pub eta: f64,
    pub level: f64,
    pub c: f64,
    pub se: f64,
    pub grid: usize,
    pub reps: usize,
    pub seed: u64,
}

pub const CV_CSV_HEADER: &str = "scheme,eta,level,c,se,grid,reps,seed";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CvTable {
    entries: Vec<CvEntry>,
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

impl CvTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[CvEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts or replaces the entry with the same scheme, `η`, level and
    /// simulation settings.
    pub fn insert(&mut self, e: CvEntry) {
        if let Some(slot) = self.entries.iter_mut().find(|x| {
            x.scheme == e.scheme
                && same(x.eta, e.eta)
                && same(x.level, e.level)
                && x.grid == e.grid
                && x.reps == e.reps
                && x.seed == e.seed
        }) {
            *slot = e;
        } else {
            self.entries.push(e);
        }
    }

    /// Any entry for `(scheme, η, level)`; the one with most replications
    /// wins.
    pub fn get(&self, scheme: CvScheme, eta: f64, level: f64) -> Option<&CvEntry> {
        let eta_matters = scheme != CvScheme::DarlingErdos;
        self.entries
            .iter()
            .filter(|x| x.scheme == scheme && (!eta_matters || same(x.eta, eta)) && same(x.level, level))
            .max_by_key(|x| x.reps)
    }

    /// Entry simulated with exactly the settings of `req`.
    pub fn get_exact(&self, scheme: CvScheme, eta: f64, level: f64, req: &CvRequest) -> Option<&CvEntry> {
        self.entries.iter().find(|x| {
            x.scheme == scheme
                && same(x.eta, eta)
                && same(x.level, level)
                && x.grid == req.grid_points
                && x.reps == req.reps
                && x.seed == req.seed
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CV_CSV_HEADER);
        s.push('\n');
        let mut rows = self.entries.clone();
        rows.sort_by(|a, b| {
            (a.scheme, a.grid, a.reps, a.seed)
                .cmp(&(b.scheme, b.grid, b.reps, b.seed))
                .then(a.eta.total_cmp(&b.eta))
                .then(a.level.total_cmp(&b.level))
        });
        for e in rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                e.scheme.name(),
                e.eta,
                e.level,
                e.c,
                e.se,
                e.grid,
                e.reps,
                e.seed
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == CV_CSV_HEADER => {}
            other => return Err(VolError::Data(format!("bad critical-value header: {other:?}"))),
        }
        let mut table = CvTable::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 8 {
                return Err(VolError::Data(format!("row {}: expected 8 fields, got {}", i + 2, f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| VolError::Data(format!("row {}: {e}", i + 2)));
            let int = |s: &str| s.parse::<u64>().map_err(|e| VolError::Data(format!("row {}: {e}", i + 2)));
            table.insert(CvEntry {
                scheme: CvScheme::parse(f[0])?,
                eta: num(f[1])?,
                level: num(f[2])?,
                c: num(f[3])?,
                se: num(f[4])?,
                grid: int(f[5])? as usize,
                reps: int(f[6])? as usize,
                seed: int(f[7])?,
            });
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&fs::read_to_string(path)?)
    }

    /// Writes through a temporary file in the same directory and renames it
    /// into place, so readers never see a partial table.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(
            ".{}.{}.tmp",
            path.file_name().and_then(|s| s.to_str()).unwrap_or("cv"),
            std::process::id()
        ));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(self.to_csv().as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// Critical values for every `(η, level)` pair, read from `cache` where
/// available and simulated otherwise. New entries are written back.
///
/// Only requests with the default horizon ratio use the cache, since the
/// file format does not record it.
pub fn build_cv_table(
    scheme: CvScheme,
    etas: &[f64],
    levels: &[f64],
    req: &CvRequest,
    cache: Option<&Path>,
) -> Result<CvTable> {
    if etas.is_empty() {
        return invalid("no eta values requested");
    }
    if levels.is_empty() {
        return invalid("no levels requested");
    }
    for &eta in etas {
        scheme.validate_eta(eta)?;
    }
    for &l in levels {
        check_level(l)?;
    }
    let use_cache = cache.is_some() && req.horizon_ratio == DEFAULT_HORIZON_RATIO;
    let mut stored = match cache {
        Some(p) if use_cache && p.exists() => CvTable::load(p)?,
        _ => CvTable::new(),
    };
    let de_req = CvRequest { grid_points: 0, reps: 0, ..*req };
    let key_req = if scheme == CvScheme::DarlingErdos { &de_req } else { req };

    let mut out = CvTable::new();
    let mut dirty = false;
    let mut unique: BTreeMap<u64, f64> = BTreeMap::new();
    for &eta in etas {
        unique.insert(eta.to_bits(), eta);
    }
    for &eta in unique.values() {
        let missing: Vec<f64> =
            levels.iter().copied().filter(|&l| stored.get_exact(scheme, eta, l, key_req).is_none()).collect();
        if !missing.is_empty() {
            let est = simulate_cv_levels(scheme, eta, &missing, req)?;
            for (&level, e) in missing.iter().zip(est) {
                stored.insert(CvEntry {
                    scheme,
                    eta,
                    level,
                    c: e.c,
                    se: e.se,
                    grid: key_req.grid_points,
                    reps: key_req.reps,
                    seed: req.seed,
                });
            }
            dirty = true;
        }
        for &l in levels {
            out.insert(*stored.get_exact(scheme, eta, l, key_req).expect("entry just ensured"));
        }
    }
    if let (Some(p), true, true) = (cache, use_cache, dirty) {
        stored.save(p)?;
    }
    Ok(out)
}
