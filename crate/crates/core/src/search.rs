//! Protocol sweeps with checkpointing, and the aggregations run on their
//! output: histograms, top-k selection and entropy curves.
//!
//! A sweep walks a fixed sequence of protocols (expression ordinal times
//! spot setting, optionally a seeded sample of it) in shards of
//! `checkpoint_interval` entries. Each completed shard is appended to a
//! JSONL file, its record offsets to a binary sidecar index, and then the
//! manifest is replaced. Resuming truncates both files to the manifest's
//! lengths and continues with the next shard, so an interrupted run ends
//! with exactly the bytes of an uninterrupted one.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certification::Certifier;
use crate::error::{Error, Result};
use crate::npa::Level;
use crate::scalar::Real;
use crate::scenario::{
    classical_bound, expression_at, expression_count, is_canonical, CoefficientMatrix, Protocol, Scenario, Spot,
    Symmetry,
};
use crate::sdp::SolverOptions;

pub const RECORD_VERSION: &str = "bef-record/1";
const MANIFEST_VERSION: &str = "bef-manifest/1";

/// Entropies at or below this count as zero.
pub const ZERO_ENTROPY_CUTOFF: f64 = 1e-6;

/// Bell values within this of the classical bound certify nothing.
pub const CLASSICAL_SLACK: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpotSelection {
    All,
    List(Vec<Spot>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub seed: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub scenario: Scenario,
    pub noise_levels: Vec<f64>,
    pub level: Level,
    pub spots: SpotSelection,
    /// Skip expressions that are not the canonical representative of their
    /// relabeling class. Every spot of a representative is still visited.
    pub dedupe_symmetries: bool,
    pub sample: Option<Sample>,
    pub output_path: PathBuf,
    /// Protocols per shard.
    pub checkpoint_interval: u64,
    pub flex: bool,
    pub solver: SolverOptions,
    /// Continue from an existing manifest instead of starting over.
    #[serde(default)]
    pub resume: bool,
    /// Stop after this many shards in this run.
    #[serde(default)]
    pub max_shards: Option<u64>,
}

/// The part of the configuration that determines the output bytes.
#[derive(Serialize)]
struct HashedConfig<'a> {
    scenario: Scenario,
    noise_levels: &'a [f64],
    level: Level,
    spots: &'a SpotSelection,
    dedupe_symmetries: bool,
    sample: Option<Sample>,
    checkpoint_interval: u64,
    flex: bool,
    solver: SolverOptions,
    scalar: &'a str,
}

impl SearchConfig {
    pub fn new(scenario: Scenario, output_path: impl Into<PathBuf>) -> Self {
        Self {
            scenario,
            noise_levels: vec![1e-6, 0.1, 0.2],
            level: Level::default(),
            spots: SpotSelection::All,
            dedupe_symmetries: false,
            sample: None,
            output_path: output_path.into(),
            checkpoint_interval: 64,
            flex: false,
            solver: SolverOptions::default(),
            resume: false,
            max_shards: None,
        }
    }

    pub fn spot_list(&self) -> Vec<Spot> {
        match &self.spots {
            SpotSelection::All => Spot::all(self.scenario),
            SpotSelection::List(list) => list.clone(),
        }
    }

    /// Size of the unsampled protocol space.
    pub fn protocol_space(&self) -> u64 {
        expression_count(self.scenario).saturating_mul(self.spot_list().len() as u64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_levels.is_empty() {
            return Err(Error::Config("no noise levels".into()));
        }
        if let Some(p) = self.noise_levels.iter().find(|p| !(**p >= 0.0 && **p < 1.0)) {
            return Err(Error::Config(format!("noise level {p} outside [0, 1)")));
        }
        if self.checkpoint_interval == 0 {
            return Err(Error::Config("checkpoint interval must be positive".into()));
        }
        let spots = self.spot_list();
        if spots.is_empty() {
            return Err(Error::Config("no spot settings".into()));
        }
        for s in &spots {
            if s.x >= self.scenario.n_alice() || s.y >= self.scenario.n_bob() {
                return Err(Error::Config(format!("spot {s} outside scenario {}", self.scenario)));
            }
        }
        if let Some(sample) = self.sample {
            if sample.count > self.protocol_space() {
                return Err(Error::Config(format!(
                    "sample of {} exceeds the {} protocols available",
                    sample.count,
                    self.protocol_space()
                )));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of everything that affects the records.
    pub fn hash<T: Real>(&self) -> String {
        let hashed = HashedConfig {
            scenario: self.scenario,
            noise_levels: &self.noise_levels,
            level: self.level,
            spots: &self.spots,
            dedupe_symmetries: self.dedupe_symmetries,
            sample: self.sample,
            checkpoint_interval: self.checkpoint_interval,
            flex: self.flex,
            solver: self.solver,
            scalar: std::any::type_name::<T>(),
        };
        let bytes = serde_json::to_vec(&hashed).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn manifest_path(&self) -> PathBuf {
        sidecar(&self.output_path, "manifest.json")
    }

    fn index_path(&self) -> PathBuf {
        sidecar(&self.output_path, "idx")
    }
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".");
    name.push(ext);
    PathBuf::from(name)
}

/// The fixed protocol sequence of a configuration.
struct Plan {
    spots: Vec<Spot>,
    sampled: Option<Vec<u64>>,
    len: u64,
}

impl Plan {
    fn new(config: &SearchConfig) -> Self {
        let spots = config.spot_list();
        let space = config.protocol_space();
        match config.sample {
            Some(s) => {
                let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
                let mut picked: Vec<u64> = rand::seq::index::sample(&mut rng, space as usize, s.count as usize)
                    .into_iter()
                    .map(|i| i as u64)
                    .collect();
                picked.sort_unstable();
                Self { spots, len: picked.len() as u64, sampled: Some(picked) }
            }
            None => Self { spots, sampled: None, len: space },
        }
    }

    /// `(protocol index, expression ordinal, spot)` at sequence position `i`.
    fn at(&self, i: u64) -> (u64, u64, Spot) {
        let q = match &self.sampled {
            Some(v) => v[i as usize],
            None => i,
        };
        let n = self.spots.len() as u64;
        (q, q / n, self.spots[(q % n) as usize])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexSummary {
    pub flex: f64,
    pub box_certifiable: bool,
    /// Largest attainable probabilities, indexed `x * M + y`.
    pub maxima: Vec<[f64; 4]>,
}

/// Results of one protocol at one noise level. Entropy fields without the
/// `_raw` suffix apply the sub-classical rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub p: f64,
    pub sub_classical: bool,
    pub lower: Option<[f64; 4]>,
    pub upper: Option<[f64; 4]>,
    pub shannon: Option<f64>,
    pub min_entropy: Option<f64>,
    pub shannon_ansatz: Option<f64>,
    pub shannon_raw: Option<f64>,
    pub min_entropy_raw: Option<f64>,
    pub shannon_ansatz_raw: Option<f64>,
    pub analytic_bound: Option<f64>,
    pub ansatz_permutation: Option<[usize; 4]>,
    /// The sub-classical test and the box disagree on whether any entropy
    /// is certified, judged on the raw Shannon value.
    pub classification_mismatch: bool,
    pub flex: Option<FlexSummary>,
    pub error: Option<String>,
}

impl NoiseRecord {
    fn failed(p: f64, sub_classical: bool, error: String) -> Self {
        Self {
            p,
            sub_classical,
            lower: None,
            upper: None,
            shannon: None,
            min_entropy: None,
            shannon_ansatz: None,
            shannon_raw: None,
            min_entropy_raw: None,
            shannon_ansatz_raw: None,
            analytic_bound: None,
            ansatz_permutation: None,
            classification_mismatch: false,
            flex: None,
            error: Some(error),
        }
    }

    pub fn value(&self, measure: Measure) -> Option<f64> {
        match measure {
            Measure::Shannon => self.shannon,
            Measure::MinEntropy => self.min_entropy,
            Measure::ShannonAnsatz => self.shannon_ansatz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRecord {
    pub version: String,
    /// Position in the unsampled protocol space.
    pub index: u64,
    pub ordinal: u64,
    pub scenario: Scenario,
    pub alpha: CoefficientMatrix,
    pub spot: Spot,
    pub level: Level,
    pub tolerance: f64,
    pub psd_tolerance: f64,
    pub classical_bound: i64,
    pub tsirelson: Option<f64>,
    /// `B` does not exceed the classical bound.
    pub non_certifying: bool,
    /// Some box or flex problem had no feasible point.
    pub infeasible: bool,
    pub spot_correlator_in_expression: bool,
    pub noise: Vec<NoiseRecord>,
    pub error: Option<String>,
}

impl ProtocolRecord {
    pub fn at_noise(&self, p: f64) -> Option<&NoiseRecord> {
        self.noise.iter().find(|n| same_noise(n.p, p))
    }

    pub fn value(&self, field: Field) -> Option<f64> {
        match field {
            Field::Tsirelson => self.tsirelson,
            Field::Measure(m, p) => self.at_noise(p)?.value(m),
            Field::Flex(p) => self.at_noise(p)?.flex.as_ref().map(|f| f.flex),
        }
    }
}

fn same_noise(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

/// Runs the full pipeline for one protocol. Failures are recorded, never
/// returned.
pub fn certify_protocol<T: Real>(
    certifier: &Certifier<T>,
    alpha: &CoefficientMatrix,
    spot: Spot,
    bound: &Result<T>,
    noise_levels: &[f64],
    with_flex: bool,
) -> ProtocolRecord {
    let classical = classical_bound(alpha);
    let options = certifier.options();
    let mut record = ProtocolRecord {
        version: RECORD_VERSION.to_string(),
        index: 0,
        ordinal: 0,
        scenario: alpha.scenario(),
        alpha: alpha.clone(),
        spot,
        level: certifier.level(),
        tolerance: options.tolerance,
        psd_tolerance: options.psd_tolerance,
        classical_bound: classical,
        tsirelson: None,
        non_certifying: false,
        infeasible: false,
        spot_correlator_in_expression: alpha.get(spot.x, spot.y) != 0,
        noise: Vec::new(),
        error: None,
    };
    let b = match bound {
        Ok(b) => *b,
        Err(e) => {
            record.error = Some(format!("tsirelson bound: {e}"));
            record.infeasible = e.is_infeasible();
            return record;
        }
    };
    let bf = b.to_f64_lossy();
    record.tsirelson = Some(bf);
    record.non_certifying = bf <= classical as f64 + CLASSICAL_SLACK;
    let protocol = match Protocol::new(alpha.clone(), b, spot) {
        Ok(p) => p,
        Err(e) => {
            record.error = Some(e.to_string());
            return record;
        }
    };
    for &p in noise_levels {
        let pt = T::lit(p);
        let sub_classical = (1.0 - p) * bf <= classical as f64 + CLASSICAL_SLACK;
        let mut nr = match certifier.certify(&protocol, pt) {
            Ok(c) => {
                let e = &c.entropy;
                NoiseRecord {
                    p,
                    sub_classical: c.sub_classical,
                    lower: Some(c.probability_box.lower.map(|v| v.to_f64_lossy())),
                    upper: Some(c.probability_box.upper.map(|v| v.to_f64_lossy())),
                    shannon: Some(c.shannon.to_f64_lossy()),
                    min_entropy: Some(c.min_entropy.to_f64_lossy()),
                    shannon_ansatz: c.shannon_ansatz.map(|v| v.to_f64_lossy()),
                    shannon_raw: Some(e.shannon_certified.to_f64_lossy()),
                    min_entropy_raw: Some(e.min_entropy_certified.to_f64_lossy()),
                    shannon_ansatz_raw: e.shannon_ansatz.map(|v| v.to_f64_lossy()),
                    analytic_bound: Some(e.analytic_bound.to_f64_lossy()),
                    ansatz_permutation: e.ansatz_permutation,
                    classification_mismatch: c.sub_classical
                        != (e.shannon_certified.to_f64_lossy() <= ZERO_ENTROPY_CUTOFF),
                    flex: None,
                    error: None,
                }
            }
            Err(e) => {
                record.infeasible |= e.is_infeasible();
                NoiseRecord::failed(p, sub_classical, e.to_string())
            }
        };
        if with_flex {
            match certifier.flex(alpha, b, pt) {
                Ok(f) => {
                    nr.flex = Some(FlexSummary {
                        flex: f.flex.to_f64_lossy(),
                        box_certifiable: f.box_certifiable,
                        maxima: f.maxima.iter().map(|q| q.map(|v| v.to_f64_lossy())).collect(),
                    })
                }
                Err(e) => {
                    record.infeasible |= e.is_infeasible();
                    let msg = format!("flex: {e}");
                    nr.error = Some(nr.error.map_or(msg.clone(), |prev| format!("{prev}; {msg}")));
                }
            }
        }
        record.noise.push(nr);
    }
    record
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: String,
    config_hash: String,
    shards_completed: u64,
    records: u64,
    output_bytes: u64,
}

impl Manifest {
    fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    fn store(&self, path: &Path) -> Result<()> {
        let tmp = sidecar(path, "tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSummary {
    pub p: f64,
    pub records: u64,
    pub zero_shannon: u64,
    pub zero_min_entropy: u64,
    pub zero_shannon_ansatz: u64,
    pub max_shannon: f64,
    pub max_min_entropy: f64,
    pub max_shannon_ansatz: f64,
    pub errors: u64,
    /// Records whose classification by bound and by box disagree.
    pub mismatches: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub total: u64,
    pub certifying: u64,
    pub errors: u64,
    pub noise: Vec<NoiseSummary>,
    pub shards_completed: u64,
    pub total_shards: u64,
    pub complete: bool,
}

impl SearchSummary {
    pub fn at_noise(&self, p: f64) -> Option<&NoiseSummary> {
        self.noise.iter().find(|n| same_noise(n.p, p))
    }
}

/// Aggregates records; order does not matter.
pub fn summarize(records: &[ProtocolRecord], noise_levels: &[f64]) -> SearchSummary {
    let zero = |v: Option<f64>| v.is_some_and(|v| v <= ZERO_ENTROPY_CUTOFF);
    let noise = noise_levels
        .iter()
        .map(|&p| {
            let mut s = NoiseSummary {
                p,
                records: 0,
                zero_shannon: 0,
                zero_min_entropy: 0,
                zero_shannon_ansatz: 0,
                max_shannon: 0.0,
                max_min_entropy: 0.0,
                max_shannon_ansatz: 0.0,
                errors: 0,
                mismatches: 0,
            };
            for r in records {
                let Some(n) = r.at_noise(p) else { continue };
                s.records += 1;
                s.errors += n.error.is_some() as u64;
                s.mismatches += n.classification_mismatch as u64;
                s.zero_shannon += zero(n.shannon) as u64;
                s.zero_min_entropy += zero(n.min_entropy) as u64;
                s.zero_shannon_ansatz += zero(n.shannon_ansatz) as u64;
                s.max_shannon = s.max_shannon.max(n.shannon.unwrap_or(0.0));
                s.max_min_entropy = s.max_min_entropy.max(n.min_entropy.unwrap_or(0.0));
                s.max_shannon_ansatz = s.max_shannon_ansatz.max(n.shannon_ansatz.unwrap_or(0.0));
            }
            s
        })
        .collect();
    SearchSummary {
        total: records.len() as u64,
        certifying: records.iter().filter(|r| r.tsirelson.is_some() && !r.non_certifying).count() as u64,
        errors: records.iter().filter(|r| r.error.is_some()).count() as u64,
        noise,
        shards_completed: 0,
        total_shards: 0,
        complete: false,
    }
}

/// Runs (or resumes) a sweep and summarizes everything written so far.
pub fn run_search<T: Real>(config: &SearchConfig) -> Result<SearchSummary> {
    config.validate()?;
    let hash = config.hash::<T>();
    let manifest_path = config.manifest_path();
    let index_path = config.index_path();

    let mut manifest = if config.resume && manifest_path.exists() {
        let m = Manifest::load(&manifest_path)?;
        if m.config_hash != hash {
            return Err(Error::Config(format!(
                "manifest {} was written for a different configuration",
                manifest_path.display()
            )));
        }
        m
    } else {
        Manifest {
            version: MANIFEST_VERSION.to_string(),
            config_hash: hash,
            shards_completed: 0,
            records: 0,
            output_bytes: 0,
        }
    };
    if let Some(parent) = config.output_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut output =
        OpenOptions::new().create(true).read(true).write(true).truncate(false).open(&config.output_path)?;
    output.set_len(manifest.output_bytes)?;
    output.seek(SeekFrom::End(0))?;
    let mut index = OpenOptions::new().create(true).read(true).write(true).truncate(false).open(&index_path)?;
    index.set_len(manifest.records * 16)?;
    index.seek(SeekFrom::End(0))?;
    manifest.store(&manifest_path)?;

    let plan = Plan::new(config);
    let total_shards = plan.len.div_ceil(config.checkpoint_interval);
    let certifier = Certifier::<T>::with_options(config.scenario, config.level, config.solver);
    let mut budget = config.max_shards.unwrap_or(u64::MAX);

    while manifest.shards_completed < total_shards && budget > 0 {
        let start = manifest.shards_completed * config.checkpoint_interval;
        let end = (start + config.checkpoint_interval).min(plan.len);
        let records = run_shard(config, &certifier, &plan, start, end);
        let mut offset = manifest.output_bytes;
        let mut text = Vec::new();
        let mut idx = Vec::with_capacity(records.len() * 16);
        for r in &records {
            let line = serde_json::to_string(r)?;
            idx.extend_from_slice(&r.index.to_le_bytes());
            idx.extend_from_slice(&offset.to_le_bytes());
            text.extend_from_slice(line.as_bytes());
            text.push(b'\n');
            offset += line.len() as u64 + 1;
        }
        output.write_all(&text)?;
        output.sync_data()?;
        index.write_all(&idx)?;
        index.sync_data()?;
        manifest.shards_completed += 1;
        manifest.records += records.len() as u64;
        manifest.output_bytes = offset;
        manifest.store(&manifest_path)?;
        budget -= 1;
    }

    let records = read_records(&config.output_path)?;
    let mut summary = summarize(&records, &config.noise_levels);
    summary.shards_completed = manifest.shards_completed;
    summary.total_shards = total_shards;
    summary.complete = manifest.shards_completed == total_shards;
    Ok(summary)
}

fn run_shard<T: Real>(
    config: &SearchConfig,
    certifier: &Certifier<T>,
    plan: &Plan,
    start: u64,
    end: u64,
) -> Vec<ProtocolRecord> {
    let entries: Vec<(u64, u64, Spot, CoefficientMatrix)> = (start..end)
        .filter_map(|i| {
            let (q, ordinal, spot) = plan.at(i);
            let alpha = expression_at(config.scenario, ordinal)?;
            if config.dedupe_symmetries && !is_canonical(&alpha, Symmetry::Full) {
                return None;
            }
            Some((q, ordinal, spot, alpha))
        })
        .collect();
    // one bound per expression
    let mut ordinals: Vec<(u64, CoefficientMatrix)> = entries.iter().map(|e| (e.1, e.3.clone())).collect();
    ordinals.dedup_by_key(|e| e.0);
    let bounds: Vec<(u64, Result<T>)> =
        ordinals.par_iter().map(|(o, alpha)| (*o, certifier.tsirelson_bound(alpha))).collect();
    entries
        .par_iter()
        .map(|(q, ordinal, spot, alpha)| {
            let bound = &bounds.iter().find(|b| b.0 == *ordinal).expect("bound computed").1;
            let mut r = certify_protocol(certifier, alpha, *spot, bound, &config.noise_levels, config.flex);
            r.index = *q;
            r.ordinal = *ordinal;
            r
        })
        .collect()
}

/// Reads a JSONL record file.
pub fn read_records(path: &Path) -> Result<Vec<ProtocolRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ProtocolRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(record);
    }
    Ok(out)
}

/// Reads the sidecar index: `(protocol index, byte offset)` per record.
pub fn read_index(path: &Path) -> Result<Vec<(u64, u64)>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 16 != 0 {
        return Err(Error::Parse(format!("index {} has a partial entry", path.display())));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let q = u64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let o = u64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            (q, o)
        })
        .collect())
}

/// Reads the single record starting at `offset`.
pub fn read_record_at(path: &Path, offset: u64) -> Result<ProtocolRecord> {
    let mut file = File::open(path)?;
    file.seek(SeekFrom::Start(offset))?;
    let mut line = String::new();
    BufReader::new(file).read_line(&mut line)?;
    serde_json::from_str(&line).map_err(|e| Error::Parse(format!("record at byte {offset}: {e}")))
}

/// Entropy measure stored per noise level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    /// Certified (minimum) Shannon entropy over the box.
    Shannon,
    MinEntropy,
    /// Shannon entropy of the ansatz distribution.
    ShannonAnsatz,
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Measure::Shannon => "shannon",
            Measure::MinEntropy => "min-entropy",
            Measure::ShannonAnsatz => "shannon-ansatz",
        })
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "shannon" | "h" => Ok(Measure::Shannon),
            "min-entropy" | "min" | "hmin" => Ok(Measure::MinEntropy),
            "shannon-ansatz" | "ansatz" => Ok(Measure::ShannonAnsatz),
            other => Err(Error::Parse(format!("unknown measure {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

/// Bins `measure` at noise `p` over `[0, 2]`. Values at the top edge go in
/// the last bin; records without a value at `p` are skipped.
pub fn histogram(records: &[ProtocolRecord], measure: Measure, p: f64, bin_width: f64) -> Result<Vec<Bin>> {
    if !(bin_width > 0.0 && bin_width <= 2.0) {
        return Err(Error::Domain(format!("bin width {bin_width} outside (0, 2]")));
    }
    let values: Vec<f64> = records.iter().filter_map(|r| r.at_noise(p)?.value(measure)).collect();
    if values.is_empty() {
        return Err(Error::NoMatchingRecords(format!("no {measure} values at p = {p}")));
    }
    let n = (2.0 / bin_width - 1e-9).ceil() as usize;
    let mut bins: Vec<Bin> =
        (0..n).map(|i| Bin { lo: i as f64 * bin_width, hi: ((i + 1) as f64 * bin_width).min(2.0), count: 0 }).collect();
    for v in values {
        let i = ((v.max(0.0) / bin_width).floor() as usize).min(n - 1);
        bins[i].count += 1;
    }
    Ok(bins)
}

pub fn write_histogram_csv(bins: &[Bin], mut out: impl Write) -> Result<()> {
    writeln!(out, "bin_lo,bin_hi,count")?;
    for b in bins {
        writeln!(out, "{:.6},{:.6},{}", b.lo, b.hi, b.count)?;
    }
    Ok(())
}

/// A record quantity that filters and objectives refer to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Field {
    Measure(Measure, f64),
    Tsirelson,
    Flex(f64),
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Measure(m, p) => write!(f, "{m}@{p}"),
            Field::Tsirelson => f.write_str("tsirelson"),
            Field::Flex(p) => write!(f, "flex@{p}"),
        }
    }
}

impl FromStr for Field {
    type Err = Error;

    /// `tsirelson`, `flex@P`, or `MEASURE@P`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("tsirelson") || s.eq_ignore_ascii_case("b") {
            return Ok(Field::Tsirelson);
        }
        let (name, p) = s.split_once('@').ok_or_else(|| Error::Parse(format!("field {s:?} needs @noise")))?;
        let p: f64 = p.trim().parse().map_err(|_| Error::Parse(format!("bad noise level in {s:?}")))?;
        if name.trim().eq_ignore_ascii_case("flex") {
            Ok(Field::Flex(p))
        } else {
            Ok(Field::Measure(name.parse()?, p))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Comparison {
    Gt,
    Ge,
    Lt,
    Le,
    /// Within the given distance.
    Near(f64),
}

/// Default tolerance for `~` filters.
pub const DEFAULT_NEAR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Filter {
    pub field: Field,
    pub comparison: Comparison,
    pub value: f64,
}

impl Filter {
    pub fn accepts(&self, record: &ProtocolRecord) -> bool {
        let Some(v) = record.value(self.field) else { return false };
        match self.comparison {
            Comparison::Gt => v > self.value,
            Comparison::Ge => v >= self.value,
            Comparison::Lt => v < self.value,
            Comparison::Le => v <= self.value,
            Comparison::Near(eps) => (v - self.value).abs() <= eps,
        }
    }
}

impl FromStr for Filter {
    type Err = Error;

    /// `FIELD>V`, `FIELD>=V`, `FIELD<V`, `FIELD<=V` or `FIELD~V[:EPS]`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad filter {s:?}"));
        let pos = s.find(['<', '>', '~']).ok_or_else(bad)?;
        let field: Field = s[..pos].parse()?;
        let rest = &s[pos..];
        let (comparison, value) = if let Some(v) = rest.strip_prefix(">=") {
            (Comparison::Ge, v)
        } else if let Some(v) = rest.strip_prefix("<=") {
            (Comparison::Le, v)
        } else if let Some(v) = rest.strip_prefix('>') {
            (Comparison::Gt, v)
        } else if let Some(v) = rest.strip_prefix('<') {
            (Comparison::Lt, v)
        } else {
            let v = &rest[1..];
            match v.split_once(':') {
                Some((v, eps)) => (Comparison::Near(eps.trim().parse().map_err(|_| bad())?), v),
                None => (Comparison::Near(DEFAULT_NEAR), v),
            }
        };
        Ok(Filter { field, comparison, value: value.trim().parse().map_err(|_| bad())? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Maximize(Field),
    Minimize(Field),
    /// Smallest maximum absolute slope of the measure across the record's
    /// noise grid.
    Smoothest(Measure),
}

impl FromStr for Objective {
    type Err = Error;

    /// `max:FIELD`, `min:FIELD` or `smooth:MEASURE`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').ok_or_else(|| Error::Parse(format!("bad objective {s:?}")))?;
        match kind.trim() {
            "max" => Ok(Objective::Maximize(rest.parse()?)),
            "min" => Ok(Objective::Minimize(rest.parse()?)),
            "smooth" => Ok(Objective::Smoothest(rest.parse()?)),
            other => Err(Error::Parse(format!("unknown objective kind {other:?}"))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Maximize(field) => write!(f, "max:{field}"),
            Objective::Minimize(field) => write!(f, "min:{field}"),
            Objective::Smoothest(m) => write!(f, "smooth:{m}"),
        }
    }
}

/// Largest `|dH/dp|` between consecutive noise levels.
pub fn max_slope(record: &ProtocolRecord, measure: Measure) -> Option<f64> {
    let mut points: Vec<(f64, f64)> =
        record.noise.iter().map(|n| Some((n.p, n.value(measure)?))).collect::<Option<_>>()?;
    if points.len() < 2 {
        return None;
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    points.windows(2).map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs()).reduce(f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Criteria {
    pub filters: Vec<Filter>,
    pub objective: Objective,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranked<'a> {
    pub score: f64,
    pub record: &'a ProtocolRecord,
}

/// Filters, then ranks by the objective (best first). Ties go to the
/// smaller `(alpha, spot)` serialization.
pub fn select_top<'a>(records: &'a [ProtocolRecord], criteria: &Criteria) -> Result<Vec<Ranked<'a>>> {
    let mut ranked: Vec<(f64, String, Ranked<'a>)> = records
        .iter()
        .filter(|r| criteria.filters.iter().all(|f| f.accepts(r)))
        .filter_map(|r| {
            let (score, key) = match criteria.objective {
                Objective::Maximize(field) => (r.value(field)?, -r.value(field)?),
                Objective::Minimize(field) => (r.value(field)?, r.value(field)?),
                Objective::Smoothest(m) => (max_slope(r, m)?, max_slope(r, m)?),
            };
            Some((key, format!("{} {}", r.alpha, r.spot), Ranked { score, record: r }))
        })
        .collect();
    if ranked.is_empty() {
        return Err(Error::NoMatchingRecords("no record passes the filters".into()));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let limit = criteria.limit.unwrap_or(usize::MAX);
    Ok(ranked.into_iter().take(limit).map(|r| r.2).collect())
}

/// One point of an entropy-versus-noise curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub p: f64,
    pub sub_classical: bool,
    pub shannon: f64,
    pub min_entropy: f64,
    pub shannon_ansatz: Option<f64>,
    /// `H(ansatz) - H_certified` on the unclamped box values.
    pub ansatz_gap: Option<f64>,
}

impl CurvePoint {
    pub fn value(&self, measure: Measure) -> Option<f64> {
        match measure {
            Measure::Shannon => Some(self.shannon),
            Measure::MinEntropy => Some(self.min_entropy),
            Measure::ShannonAnsatz => self.shannon_ansatz,
        }
    }
}

/// Certifies `protocol` at every noise level of `grid`.
pub fn entropy_curve<T: Real>(
    certifier: &Certifier<T>,
    protocol: &Protocol<T>,
    grid: &[f64],
) -> Result<Vec<CurvePoint>> {
    grid.iter()
        .map(|&p| {
            let c = certifier.certify(protocol, T::lit(p))?;
            Ok(CurvePoint {
                p,
                sub_classical: c.sub_classical,
                shannon: c.shannon.to_f64_lossy(),
                min_entropy: c.min_entropy.to_f64_lossy(),
                shannon_ansatz: c.shannon_ansatz.map(|v| v.to_f64_lossy()),
                ansatz_gap: c.entropy.ansatz_gap().map(|v| v.to_f64_lossy()),
            })
        })
        .collect()
}

pub fn write_curve_csv(points: &[CurvePoint], measure: Measure, mut out: impl Write) -> Result<()> {
    writeln!(out, "p,value")?;
    for pt in points {
        match pt.value(measure) {
            Some(v) => writeln!(out, "{},{:.6}", pt.p, v)?,
            None => writeln!(out, "{},", pt.p)?,
        }
    }
    Ok(())
}
