use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use bellcert::certification::Certifier;
use bellcert::scenario::{classical_bound, Protocol};
use bellcert::sdp::{SdpStatus, SolverOptions};
use bellcert::search::{
    entropy_curve, histogram, read_records, run_search, select_top, write_curve_csv, write_histogram_csv, Criteria,
    Filter, Measure, Objective, Sample, SearchConfig, SpotSelection,
};
use bellcert::{CoefficientMatrix, Error, Level, Scenario, Spot};
use clap::{Args, Parser, Subcommand};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_SOLVER: u8 = 4;
const EXIT_IO: u8 = 5;

/// Device-independent randomness certification from Bell expressions.
#[derive(Parser, Debug)]
#[command(name = "bellcert", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Hierarchy level: 1, 1+AB or 2.
    #[arg(long, global = true, default_value = "1+AB", value_parser = parse_level)]
    level: Level,
    /// Relative gap and feasibility tolerance of the SDP solver.
    #[arg(long, global = true, env = "BELLCERT_SDP_TOL")]
    tolerance: Option<f64>,
    /// Smallest eigenvalue accepted on a moment matrix.
    #[arg(long, global = true)]
    psd_tolerance: Option<f64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Omit the provenance line.
    #[arg(long, global = true)]
    no_header: bool,
}

#[derive(Args, Debug)]
struct ProtocolArgs {
    /// Correlator coefficients, rows separated by ';', e.g. "1,1;1,-1".
    #[arg(long, allow_hyphen_values = true, value_parser = parse_alpha)]
    alpha: CoefficientMatrix,
    /// Tsirelson bound to use instead of computing it.
    #[arg(long)]
    bound: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Quantum bound of a Bell expression.
    Tsirelson {
        #[arg(long, allow_hyphen_values = true, value_parser = parse_alpha)]
        alpha: CoefficientMatrix,
    },
    /// Probability box and certified entropies of one protocol.
    Certify {
        #[command(flatten)]
        protocol: ProtocolArgs,
        /// Spot setting, 1-based "x,y".
        #[arg(long, default_value = "1,1", value_parser = parse_spot)]
        spot: Spot,
        /// Noise level.
        #[arg(long)]
        p: f64,
    },
    /// Flex of a Bell expression.
    Flex {
        #[command(flatten)]
        protocol: ProtocolArgs,
        /// Noise level.
        #[arg(long)]
        p: f64,
        /// Also print the largest attainable probabilities per setting pair.
        #[arg(long)]
        maxima: bool,
    },
    /// Sweep a protocol space into a JSONL file.
    Sweep(SweepArgs),
    /// Histogram of an entropy measure from sweep output, as CSV.
    Hist {
        /// JSONL records written by sweep.
        #[arg(long)]
        input: PathBuf,
        /// shannon, min-entropy or shannon-ansatz.
        #[arg(long, default_value = "shannon", value_parser = parse_measure)]
        measure: Measure,
        /// Noise level to histogram.
        #[arg(long)]
        p: f64,
        /// Bin width over [0, 2].
        #[arg(long, default_value_t = 0.02)]
        bin_width: f64,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Rank sweep records.
    Select {
        /// JSONL records written by sweep.
        #[arg(long)]
        input: PathBuf,
        /// e.g. "shannon@1e-6>1.7" or "shannon@1e-6~2:0.01"; repeatable.
        #[arg(long = "filter", value_parser = parse_filter)]
        filters: Vec<Filter>,
        /// "max:FIELD", "min:FIELD" or "smooth:MEASURE".
        #[arg(long, value_parser = parse_objective)]
        objective: Objective,
        /// Rows to print.
        #[arg(long, default_value_t = 10)]
        limit: usize,
    },
    /// Certified entropy over a noise grid, as CSV.
    Curve {
        #[command(flatten)]
        protocol: ProtocolArgs,
        /// Spot setting, 1-based "x,y".
        #[arg(long, default_value = "1,1", value_parser = parse_spot)]
        spot: Spot,
        /// Comma-separated noise levels.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        grid: Vec<f64>,
        /// shannon, min-entropy or shannon-ansatz.
        #[arg(long, default_value = "shannon", value_parser = parse_measure)]
        measure: Measure,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Settings per party, "N,M" or "NxM".
    #[arg(long, value_parser = parse_scenario)]
    scenario: Scenario,
    /// Records file; the index and manifest sit next to it.
    #[arg(long)]
    output: PathBuf,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',', default_value = "1e-6,0.1,0.2")]
    noise: Vec<f64>,
    /// Restrict to these spots; repeatable. All spots by default.
    #[arg(long = "spot", value_parser = parse_spot)]
    spots: Vec<Spot>,
    /// Skip expressions equivalent under relabeling.
    #[arg(long)]
    dedupe: bool,
    /// Random subset size.
    #[arg(long)]
    sample: Option<u64>,
    /// Seed of the random subset.
    #[arg(long, default_value_t = 0, requires = "sample")]
    seed: u64,
    /// Protocols per shard; each completed shard is checkpointed.
    #[arg(long, default_value_t = 64)]
    checkpoint_interval: u64,
    /// Compute flex at every noise level.
    #[arg(long)]
    flex: bool,
    /// Continue an interrupted sweep.
    #[arg(long)]
    resume: bool,
    /// Stop after this many shards.
    #[arg(long)]
    max_shards: Option<u64>,
}

fn parse_level(s: &str) -> Result<Level, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_alpha(s: &str) -> Result<CoefficientMatrix, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_spot(s: &str) -> Result<Spot, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_measure(s: &str) -> Result<Measure, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_filter(s: &str) -> Result<Filter, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    let (n, m) = s.split_once([',', 'x', 'X']).ok_or_else(|| format!("scenario {s:?} must look like N,M"))?;
    let dim = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("scenario {s:?}: {e}"));
    Scenario::new(dim(n)?, dim(m)?).map_err(|e| e.to_string())
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if let Error::Io(io) = e {
            return io.into();
        }
        let code = match &e {
            Error::Solver { status: SdpStatus::Infeasible, .. } => EXIT_INFEASIBLE,
            Error::Solver { .. } | Error::MalformedProblem(_) | Error::EmptyPolytope(_) => EXIT_SOLVER,
            Error::Io(_) | Error::Json(_) | Error::Parse(_) => EXIT_IO,
            Error::NoMatchingRecords(_) => EXIT_FAILURE,
            _ => EXIT_USAGE,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        // a closed pipe downstream (`| head`) is not an error
        if e.kind() == io::ErrorKind::BrokenPipe {
            return Failure { code: 0, message: String::new() };
        }
        Failure { code: EXIT_IO, message: format!("I/O error: {e}") }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

fn check_noise(p: f64) -> Result<(), Failure> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(usage(format!("noise level {p} outside [0, 1)")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) if f.code == 0 => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("bellcert: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let common = &cli.common;
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| usage(e.to_string()))?;
    }
    let mut options = SolverOptions::default();
    if let Some(t) = common.tolerance {
        if !(t > 0.0 && t < 1.0) {
            return Err(usage(format!("tolerance {t} outside (0, 1)")));
        }
        options.tolerance = t;
    }
    if let Some(t) = common.psd_tolerance {
        if !(t > 0.0 && t < 1.0) {
            return Err(usage(format!("psd tolerance {t} outside (0, 1)")));
        }
        options.psd_tolerance = t;
    }
    let header = |what: &str, extra: &str| {
        (!common.no_header).then(|| {
            format!(
                "# bellcert {what} level={} tolerance={:e} psd_tolerance={:e}{extra}",
                common.level, options.tolerance, options.psd_tolerance
            )
        })
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();

    match cli.command {
        Command::Tsirelson { alpha } => {
            let certifier = Certifier::<f64>::with_options(alpha.scenario(), common.level, options);
            let b = certifier.tsirelson_bound(&alpha)?;
            if let Some(h) = header("tsirelson", &format!(" alpha={alpha}")) {
                writeln!(out, "{h}")?;
            }
            writeln!(out, "{b:.6}")?;
        }
        Command::Certify { protocol, spot, p } => {
            check_noise(p)?;
            let alpha = protocol.alpha;
            let certifier = Certifier::<f64>::with_options(alpha.scenario(), common.level, options);
            let b = match protocol.bound {
                Some(b) => b,
                None => certifier.tsirelson_bound(&alpha)?,
            };
            let c = certifier.certify(&Protocol::new(alpha.clone(), b, spot)?, p)?;
            if let Some(h) = header("certify", &format!(" alpha={alpha} spot={spot} p={p}")) {
                writeln!(out, "{h}")?;
            }
            let quad = |v: [f64; 4]| v.map(|x| format!("{x:.6}")).join(",");
            let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| format!("{x:.6}"));
            let e = &c.entropy;
            writeln!(out, "tsirelson_bound: {b:.6}")?;
            writeln!(out, "classical_bound: {}", c.classical_bound)?;
            writeln!(out, "target: {:.6}", c.probability_box.target)?;
            writeln!(out, "sub_classical: {}", c.sub_classical)?;
            writeln!(out, "box_lower: {}", quad(c.probability_box.lower))?;
            writeln!(out, "box_upper: {}", quad(c.probability_box.upper))?;
            writeln!(out, "shannon: {:.6}", c.shannon)?;
            writeln!(out, "min_entropy: {:.6}", c.min_entropy)?;
            writeln!(out, "shannon_ansatz: {}", opt(c.shannon_ansatz))?;
            writeln!(out, "shannon_box: {:.6}", e.shannon_certified)?;
            writeln!(out, "min_entropy_box: {:.6}", e.min_entropy_certified)?;
            writeln!(out, "analytic_bound: {:.6}", e.analytic_bound)?;
            writeln!(out, "spot_correlator_in_expression: {}", c.spot_correlator_in_expression)?;
        }
        Command::Flex { protocol, p, maxima } => {
            check_noise(p)?;
            let alpha = protocol.alpha;
            let certifier = Certifier::<f64>::with_options(alpha.scenario(), common.level, options);
            let b = match protocol.bound {
                Some(b) => b,
                None => certifier.tsirelson_bound(&alpha)?,
            };
            let report = certifier.flex(&alpha, b, p)?;
            if let Some(h) = header("flex", &format!(" alpha={alpha} p={p} bound={b:.6}")) {
                writeln!(out, "{h}")?;
            }
            writeln!(out, "{:.6}", report.flex)?;
            if maxima {
                for spot in Spot::all(alpha.scenario()) {
                    let m = report.maxima_at(spot).map(|v| format!("{v:.6}")).join(",");
                    writeln!(out, "{spot}: {m}")?;
                }
                writeln!(out, "box_certifiable: {}", report.box_certifiable)?;
            }
        }
        Command::Sweep(args) => {
            for &p in &args.noise {
                check_noise(p)?;
            }
            let mut config = SearchConfig::new(args.scenario, args.output);
            config.noise_levels = args.noise;
            config.level = common.level;
            config.spots = if args.spots.is_empty() { SpotSelection::All } else { SpotSelection::List(args.spots) };
            config.dedupe_symmetries = args.dedupe;
            config.sample = args.sample.map(|count| Sample { seed: args.seed, count });
            config.checkpoint_interval = args.checkpoint_interval;
            config.flex = args.flex;
            config.solver = options;
            config.resume = args.resume;
            config.max_shards = args.max_shards;
            let summary = run_search::<f64>(&config)?;
            if let Some(h) = header(
                "sweep",
                &format!(
                    " scenario={}x{} config_hash={}",
                    args.scenario.n_alice(),
                    args.scenario.n_bob(),
                    config.hash::<f64>()
                ),
            ) {
                writeln!(out, "{h}")?;
            }
            writeln!(out, "records: {}", summary.total)?;
            writeln!(out, "certifying: {}", summary.certifying)?;
            writeln!(out, "errors: {}", summary.errors)?;
            writeln!(out, "shards: {}/{}", summary.shards_completed, summary.total_shards)?;
            writeln!(out, "complete: {}", summary.complete)?;
            writeln!(
                out,
                "p,zero_shannon,zero_min_entropy,zero_shannon_ansatz,max_shannon,max_min_entropy,max_shannon_ansatz,mismatches"
            )?;
            for n in &summary.noise {
                writeln!(
                    out,
                    "{},{},{},{},{:.6},{:.6},{:.6},{}",
                    n.p,
                    n.zero_shannon,
                    n.zero_min_entropy,
                    n.zero_shannon_ansatz,
                    n.max_shannon,
                    n.max_min_entropy,
                    n.max_shannon_ansatz,
                    n.mismatches
                )?;
            }
        }
        Command::Hist { input, measure, p, bin_width, output } => {
            let records = read_records(&input)?;
            let bins = histogram(&records, measure, p, bin_width)?;
            let h = header("hist", &format!(" input={} measure={measure} p={p}", input.display()));
            write_to(output, |w| {
                if let Some(h) = &h {
                    writeln!(w, "{h}")?;
                }
                write_histogram_csv(&bins, w)
            })?;
        }
        Command::Select { input, filters, objective, limit } => {
            let records = read_records(&input)?;
            let criteria = Criteria { filters, objective, limit: Some(limit) };
            match select_top(&records, &criteria) {
                Ok(top) => {
                    if let Some(h) = header("select", &format!(" input={} objective={objective}", input.display())) {
                        writeln!(out, "{h}")?;
                    }
                    writeln!(out, "rank\tscore\talpha\tspot\ttsirelson")?;
                    for (i, r) in top.iter().enumerate() {
                        let b = r.record.tsirelson.map_or("none".to_string(), |b| format!("{b:.6}"));
                        writeln!(out, "{}\t{:.6}\t{}\t{}\t{b}", i + 1, r.score, r.record.alpha, r.record.spot)?;
                    }
                }
                // an empty selection is an answer, not a failure
                Err(Error::NoMatchingRecords(m)) => eprintln!("bellcert: no matching records: {m}"),
                Err(e) => return Err(e.into()),
            }
        }
        Command::Curve { protocol, spot, grid, measure, output } => {
            for &p in &grid {
                check_noise(p)?;
            }
            let alpha = protocol.alpha;
            let certifier = Certifier::<f64>::with_options(alpha.scenario(), common.level, options);
            let b = match protocol.bound {
                Some(b) => b,
                None => certifier.tsirelson_bound(&alpha)?,
            };
            let points = entropy_curve(&certifier, &Protocol::new(alpha.clone(), b, spot)?, &grid)?;
            let h = header(
                "curve",
                &format!(
                    " alpha={alpha} spot={spot} bound={b:.6} classical={} measure={measure}",
                    classical_bound(&alpha)
                ),
            );
            write_to(output, |w| {
                if let Some(h) = &h {
                    writeln!(w, "{h}")?;
                }
                write_curve_csv(&points, measure, w)
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

fn write_to(path: Option<PathBuf>, f: impl FnOnce(&mut dyn Write) -> bellcert::Result<()>) -> Result<(), Failure> {
    match path {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}
