//! Batch front end: instance generation, brute-force oracle, campaigns and
//! decay-rate reports.
//!
//! Every artifact carries a header with the tool version, a hash of the
//! inputs that produced it and the seeds in use, and is written atomically.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::benchmark::{
    default_pause_points, default_pause_times, results_csv, run_forward_campaign, run_reverse_study, samples_csv,
    EmbeddingKind, ForwardCell, GroundRecord, InstanceRun, PreparedInstance, ResultRow, ReverseMode,
    ReverseSettings, ReverseStudyResult, SamplerConfig,
};
use crate::error::{Error, Result};
use crate::instance_gen::{generate_instance_with, FileHeader, InstanceParams, ProblemInstance, Theta};
use crate::io::{csv_header, fmt_real, short_hash};
use crate::oracle::{self, MAX_SPECTRUM_VARS};
use crate::rng;
use crate::samplers::{SchedulePoints, SvmcParams};
use crate::schedules::{AmplitudeTable, Amplitudes};
use crate::topology::{build_chimera, HardwareGraph};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Device job-time limit, recorded as a warning only.
const JOB_TIME_LIMIT_US: f64 = 1.0e6;
/// Device anneal-time limit per sample, recorded as a warning only.
const ANNEAL_TIME_LIMIT_US: f64 = 2.0e6;

#[derive(Debug, Parser)]
#[command(name = "qabench", version, about = "Quantum-annealing controls benchmark on portfolio QUBOs")]
pub struct Cli {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: available processors).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate portfolio instances and a seed manifest.
    Gen(GenArgs),
    /// Brute-force spectra, ground records and energy histograms.
    Oracle(OracleArgs),
    /// Run a benchmark campaign described by a JSON config.
    Run(RunArgs),
    /// Fit decay rates over the sizes in a results table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Asset count, or an inclusive range such as `2..5`.
    #[arg(long)]
    pub m: String,
    /// Slices per asset.
    #[arg(long)]
    pub w: usize,
    /// Budget.
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    /// Instances per asset count.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Price-history length.
    #[arg(long, default_value_t = crate::instance_gen::DEFAULT_HISTORY_LEN)]
    pub history_len: usize,
    /// Lagrange weights `returns,budget,risk`.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub theta: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Instance JSON files.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Bins of the range histogram.
    #[arg(long, default_value_t = 100)]
    pub bins: usize,
    /// Skip the full spectrum CSV.
    #[arg(long)]
    pub no_spectrum: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Campaign config (JSON).
    pub config: PathBuf,
    /// Validate the config and exit without computing.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Results table written by `run`.
    pub results: PathBuf,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let pool = match cli.jobs {
        Some(0) => {
            eprintln!("error: --jobs must be positive");
            return EXIT_USAGE;
        }
        Some(j) => rayon::ThreadPoolBuilder::new().num_threads(j).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_IO;
        }
    };
    match pool.install(|| execute(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, cli.seed, &cli.out).map(|_| EXIT_OK),
        Command::Oracle(a) => cmd_oracle(a, &cli.out),
        Command::Run(a) => cmd_run(&a.config, a.dry_run, cli.seed, &cli.out),
        Command::Report(a) => cmd_report(&a.results, &cli.out).map(|_| EXIT_OK),
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

/// Parses `5`, `2..5` or `2..=5` into an inclusive list.
pub fn parse_range(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Parameter(format!("bad range {s:?}"));
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?),
        None => {
            let v = num(s)?;
            (v, v)
        }
    };
    if lo > hi {
        return Err(bad());
    }
    Ok((lo..=hi).collect())
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Seed of instance `k` with `m` assets and `w` slices under master seed `seed`.
pub fn instance_seed(seed: u64, m: usize, w: usize, k: usize) -> u64 {
    rng::derive(seed, &[m as u64, w as u64, k as u64])
}

/// Generates `count` instances per asset count; returns the written paths.
pub fn cmd_gen(a: &GenArgs, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let sizes = parse_range(&a.m)?;
    let theta = match &a.theta {
        Some(t) => Theta::from_array([t[0], t[1], t[2]]),
        None => Theta::default(),
    };
    let config = format!(
        "gen m={} w={} b={} count={} history_len={} theta={:?}",
        a.m,
        a.w,
        fmt_real(a.b),
        a.count,
        a.history_len,
        theta.as_array().map(fmt_real)
    );
    let hash = short_hash(config.as_bytes());
    let dir = out.join("instances");
    let mut manifest = csv_header(&hash, &[seed]);
    manifest.push_str("file,m,w,n,seed\n");
    let mut written = Vec::new();
    for &m in &sizes {
        for k in 0..a.count {
            let s = instance_seed(seed, m, a.w, k);
            let params = InstanceParams {
                theta,
                history_len: a.history_len,
                ..InstanceParams::new(m, a.w, a.b, s)
            };
            let inst = generate_instance_with(&params)?;
            let name = format!("m{m}_w{}_{k:04}.json", a.w);
            let path = dir.join(&name);
            write_atomic(&path, &inst.to_json(Some(FileHeader::new(hash.clone(), vec![seed, s])))?)?;
            let _ = writeln!(manifest, "{name},{m},{},{},{s}", a.w, m * a.w);
            written.push(path);
        }
    }
    write_atomic(&dir.join("manifest.csv"), &manifest)?;
    Ok(written)
}

/// Runs the brute-force oracle on each file. Instances above the capacity
/// limit are skipped and reported; the exit code is then partial.
pub fn cmd_oracle(a: &OracleArgs, out: &Path) -> Result<i32> {
    let dir = out.join("oracle");
    let mut skipped = 0usize;
    for path in &a.files {
        let text = read_text(path)?;
        let inst = ProblemInstance::from_json(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let stem = file_stem(path);
        if inst.n() > MAX_SPECTRUM_VARS {
            eprintln!(
                "skipped {}: n = {} exceeds the brute-force limit {MAX_SPECTRUM_VARS}",
                path.display(),
                inst.n()
            );
            skipped += 1;
            continue;
        }
        let prepared = PreparedInstance::new(stem.clone(), inst, None);
        let spectrum = oracle::full_spectrum(&prepared.ising)?;
        let hash = short_hash(text.as_bytes());
        let seeds = [prepared.instance.seed];
        let header = csv_header(&hash, &seeds);
        if !a.no_spectrum {
            write_atomic(&dir.join(format!("{stem}.spectrum.csv")), &spectrum.to_csv(&header))?;
        }
        let energies: Vec<f64> = spectrum.energies().collect();
        let hist = oracle::range_histogram(&energies, a.bins)?;
        write_atomic(&dir.join(format!("{stem}.hist.csv")), &hist.to_csv(&header))?;
        let mut record = GroundRecord::from_spectrum(&spectrum);
        record.header = Some(FileHeader::new(hash, seeds.to_vec()));
        write_atomic(&dir.join(format!("{stem}.ground.json")), &record.to_json()?)?;
    }
    Ok(if skipped > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HardwareConfig {
    pub rows: usize,
    pub cols: usize,
    pub shore: usize,
    pub faults: Vec<usize>,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        Self {
            rows: 16,
            cols: 16,
            shore: 4,
            faults: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub temperature: f64,
    pub sweeps_per_point: usize,
    /// Fixed number of schedule points per anneal.
    pub points: Option<usize>,
    /// Schedule points per microsecond; exclusive with `points`.
    pub points_per_us: Option<f64>,
    pub chain_strength: f64,
    pub num_samples: usize,
    /// CSV table with columns `s,A,B`; linear amplitudes when absent.
    pub amplitudes: Option<String>,
    pub auto_scale: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let base = SamplerConfig::default();
        Self {
            temperature: base.svmc.temperature,
            sweeps_per_point: base.svmc.sweeps_per_point,
            points: None,
            points_per_us: None,
            chain_strength: base.chain_strength,
            num_samples: base.num_samples,
            amplitudes: None,
            auto_scale: base.svmc.auto_scale,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardSection {
    pub embeddings: Vec<EmbeddingKind>,
    pub anneal_times: Vec<f64>,
    pub gauges: Vec<usize>,
}

impl Default for ForwardSection {
    fn default() -> Self {
        Self {
            embeddings: vec![EmbeddingKind::Clique],
            anneal_times: vec![100.0],
            gauges: vec![0],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReverseSection {
    pub modes: Vec<ReverseMode>,
    pub s_p: Vec<f64>,
    pub t_p: Vec<f64>,
    pub embedding: EmbeddingKind,
    pub ramp: f64,
    pub quench: f64,
    pub forward_anneal_time: f64,
}

impl Default for ReverseSection {
    fn default() -> Self {
        let s = ReverseSettings::default();
        Self {
            modes: vec![ReverseMode::E0, ReverseMode::E1, ReverseMode::Ef],
            s_p: default_pause_points(),
            t_p: default_pause_times(),
            embedding: s.embedding,
            ramp: s.ramp,
            quench: s.quench,
            forward_anneal_time: s.forward_anneal_time,
        }
    }
}

/// Campaign description. Relative paths resolve against the config's directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    /// Instance files, or directories whose `*.json` files are all used.
    pub instances: Vec<String>,
    /// Directory of `<stem>.ground.json` records; brute force in process when absent.
    #[serde(default)]
    pub oracle_dir: Option<String>,
    /// Overrides the global `--seed`.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub hardware: HardwareConfig,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub forward: Option<ForwardSection>,
    #[serde(default)]
    pub reverse: Option<ReverseSection>,
    #[serde(default)]
    pub archive_samples: bool,
}

/// A config checked and resolved, ready to run.
#[derive(Debug)]
pub struct Campaign {
    pub config: CampaignConfig,
    pub hash: String,
    pub seed: u64,
    pub instance_files: Vec<PathBuf>,
    pub oracle_dir: Option<PathBuf>,
    pub hardware: HardwareGraph,
    pub sampler: SamplerConfig,
    pub warnings: Vec<String>,
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} must be positive, got {x}")))
    }
}

fn non_empty<T>(name: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        Err(Error::Parameter(format!("{name} must not be empty")))
    } else {
        Ok(())
    }
}

fn expand_instances(base: &Path, entries: &[String]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for e in entries {
        let p = base.join(e);
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(&p)?
                .map(|d| d.map(|d| d.path()))
                .collect::<std::io::Result<_>>()?;
            found.retain(|f| f.extension().is_some_and(|x| x == "json"));
            found.sort();
            files.extend(found);
        } else if p.is_file() {
            files.push(p);
        } else {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("instance path {} does not exist", p.display()),
            )));
        }
    }
    if files.is_empty() {
        return Err(Error::Parameter("no instance files found".into()));
    }
    Ok(files)
}

/// Parses and validates a campaign config without running anything.
pub fn load_campaign(path: &Path, default_seed: u64) -> Result<Campaign> {
    let text = read_text(path)?;
    let config: CampaignConfig =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut warnings = Vec::new();

    let s = &config.sampler;
    positive("sampler.temperature", s.temperature)?;
    if s.sweeps_per_point == 0 || s.num_samples == 0 {
        return Err(Error::Parameter("sweeps_per_point and num_samples must be positive".into()));
    }
    if !(s.chain_strength < 0.0 && s.chain_strength.is_finite()) {
        return Err(Error::Parameter(format!("chain_strength must be negative, got {}", s.chain_strength)));
    }
    let points = match (s.points, s.points_per_us) {
        (Some(_), Some(_)) => return Err(Error::Parameter("give at most one of points and points_per_us".into())),
        (Some(p), None) => SchedulePoints::Fixed(p),
        (None, Some(r)) => {
            positive("sampler.points_per_us", r)?;
            SchedulePoints::PerMicrosecond(r)
        }
        (None, None) => SvmcParams::default().points,
    };
    if let SchedulePoints::Fixed(p) = points {
        if p < 2 {
            return Err(Error::Parameter("points must be at least 2".into()));
        }
    }
    let amplitudes = match &s.amplitudes {
        Some(f) => Amplitudes::table(AmplitudeTable::from_csv(&read_text(&base.join(f))?)?),
        None => Amplitudes::linear(),
    };
    let sampler = SamplerConfig {
        svmc: SvmcParams {
            temperature: s.temperature,
            sweeps_per_point: s.sweeps_per_point,
            points,
            auto_scale: s.auto_scale,
        },
        chain_strength: s.chain_strength,
        num_samples: s.num_samples,
        amplitudes,
    };

    if config.forward.is_none() && config.reverse.is_none() {
        return Err(Error::Parameter("config needs a forward or a reverse section".into()));
    }
    let mut durations = Vec::new();
    if let Some(f) = &config.forward {
        non_empty("forward.embeddings", &f.embeddings)?;
        non_empty("forward.anneal_times", &f.anneal_times)?;
        non_empty("forward.gauges", &f.gauges)?;
        for &t in &f.anneal_times {
            positive("forward.anneal_times", t)?;
            if !crate::schedules::anneal_time_in_device_range(t) {
                warnings.push(format!("anneal time {t} µs is outside the device range"));
            }
            durations.push(t);
        }
        if f.gauges.iter().any(|&g| g > s.num_samples) {
            return Err(Error::Parameter("more gauges than samples".into()));
        }
    }
    if let Some(r) = &config.reverse {
        non_empty("reverse.modes", &r.modes)?;
        non_empty("reverse.s_p", &r.s_p)?;
        non_empty("reverse.t_p", &r.t_p)?;
        positive("reverse.ramp", r.ramp)?;
        positive("reverse.quench", r.quench)?;
        positive("reverse.forward_anneal_time", r.forward_anneal_time)?;
        if let Some(&sp) = r.s_p.iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::Parameter(format!("s_p must lie in (0, 1), got {sp}")));
        }
        if let Some(&tp) = r.t_p.iter().find(|&&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::Parameter(format!("t_p must be non-negative, got {tp}")));
        }
        for &tp in &r.t_p {
            durations.push(r.ramp + tp + r.quench);
        }
    }
    for &d in &durations {
        if d > ANNEAL_TIME_LIMIT_US {
            warnings.push(format!("anneal of {d} µs exceeds the device anneal-time limit"));
        }
        if d * s.num_samples as f64 > JOB_TIME_LIMIT_US {
            warnings.push(format!(
                "{} samples of {d} µs exceed the device job-time limit",
                s.num_samples
            ));
        }
    }

    let h = &config.hardware;
    let faults: BTreeSet<usize> = h.faults.iter().copied().collect();
    let hardware = build_chimera(h.rows, h.cols, h.shore, &faults)?;
    let instance_files = expand_instances(base, &config.instances)?;
    let oracle_dir = config.oracle_dir.as_ref().map(|d| base.join(d));
    if let Some(d) = &oracle_dir {
        if !d.is_dir() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("oracle directory {} does not exist", d.display()),
            )));
        }
    }
    Ok(Campaign {
        seed: config.seed.unwrap_or(default_seed),
        hash: short_hash(text.as_bytes()),
        config,
        instance_files,
        oracle_dir,
        hardware,
        sampler,
        warnings,
    })
}

/// Loads the instances and their oracle records. A missing record leaves the
/// instance without an oracle so the cells that need one fail on their own.
pub fn load_instances(c: &Campaign) -> Result<Vec<PreparedInstance>> {
    c.instance_files
        .iter()
        .map(|path| {
            let inst = ProblemInstance::from_json(&read_text(path)?)
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            let stem = file_stem(path);
            match &c.oracle_dir {
                None => PreparedInstance::with_brute_force(stem, inst),
                Some(dir) => {
                    let rec = dir.join(format!("{stem}.ground.json"));
                    let oracle = if rec.is_file() {
                        Some(GroundRecord::from_json(&read_text(&rec)?)?)
                    } else {
                        log::warn!("no oracle record for {stem}");
                        None
                    };
                    Ok(PreparedInstance::new(stem, inst, oracle))
                }
            }
        })
        .collect()
}

fn archive(out: &Path, cell: &str, runs: &[InstanceRun], labels: &[String], header: &str) -> Result<()> {
    for (run, label) in runs.iter().zip(labels) {
        write_atomic(&out.join("samples").join(cell).join(format!("{label}.csv")), &samples_csv(&run.samples, header))?;
    }
    Ok(())
}

fn metrics_array(m: &crate::benchmark::EnsembleMetrics) -> [f64; 4] {
    [m.mean_p_s, m.mean_p_b, m.stderr_p_s, m.stderr_p_b]
}

/// Column names of the reverse-annealing decomposition table.
pub const REVERSE_COLUMNS: &str =
    "n,mode,s_p,t_p,p_stay,p_climb,p_combined,p_f,product_stay,product_climb,p_climb_excluded,N_p,N_s";

fn reverse_line(n: usize, r: &ReverseStudyResult, n_s: usize) -> String {
    let d = &r.decomposition;
    format!(
        "{n},{},{},{},{},{},{},{},{},{},{},{},{n_s}",
        r.mode.name(),
        r.s_p,
        r.t_p,
        fmt_real(d.p_stay),
        fmt_real(d.p_climb),
        fmt_real(d.p_combined),
        fmt_real(d.p_f),
        fmt_real(d.product_stay),
        fmt_real(d.product_climb),
        d.p_climb_excluded.map(fmt_real).unwrap_or_default(),
        r.alpha.len()
    )
}

/// Runs a campaign config. Returns `EXIT_PARTIAL` when any cell failed.
pub fn cmd_run(config: &Path, dry_run: bool, seed: u64, out: &Path) -> Result<i32> {
    let c = load_campaign(config, seed)?;
    for w in &c.warnings {
        log::warn!("{w}");
    }
    if dry_run {
        for w in &c.warnings {
            eprintln!("warning: {w}");
        }
        eprintln!(
            "config ok: {} instance files, hash {}",
            c.instance_files.len(),
            c.hash
        );
        return Ok(EXIT_OK);
    }
    let instances = load_instances(&c)?;
    let header = csv_header(&c.hash, &[c.seed]);
    let n_s = c.sampler.num_samples;
    let mut rows = Vec::new();
    let mut failed = 0usize;

    if let Some(f) = &c.config.forward {
        let mut cells = Vec::new();
        for &embedding in &f.embeddings {
            for &anneal_time in &f.anneal_times {
                for &gauges in &f.gauges {
                    cells.push(ForwardCell {
                        embedding,
                        anneal_time,
                        gauges,
                    });
                }
            }
        }
        let reports = run_forward_campaign(&instances, &c.hardware, &cells, &c.sampler, c.seed);
        let groups = crate::benchmark::group_by_size(&instances);
        for rep in reports {
            let labels: Vec<String> = groups[&rep.n].iter().map(|p| p.label.clone()).collect();
            let mut row = ResultRow {
                n: rep.n,
                embedding: rep.cell.embedding.name().into(),
                t_or_schedule: format!("{}", rep.cell.anneal_time),
                g: rep.cell.gauges.to_string(),
                s_p: String::new(),
                t_p: String::new(),
                mode: "fa".into(),
                metrics: None,
                n_p: labels.len(),
                n_s,
                status: "ok".into(),
            };
            match rep.outcome {
                Ok((m, runs)) => {
                    row.metrics = Some(metrics_array(&m));
                    if c.config.archive_samples {
                        let cell = format!(
                            "fa_n{}_{}_T{}_g{}",
                            rep.n,
                            rep.cell.embedding.name(),
                            rep.cell.anneal_time,
                            rep.cell.gauges
                        );
                        archive(out, &cell, &runs, &labels, &header)?;
                    }
                }
                Err(e) => {
                    eprintln!("forward cell n={} failed: {e}", rep.n);
                    row.status = "failed".into();
                    failed += 1;
                }
            }
            rows.push(row);
        }
    }

    let mut reverse_text = String::new();
    if let Some(r) = &c.config.reverse {
        let settings = ReverseSettings {
            embedding: r.embedding,
            ramp: r.ramp,
            quench: r.quench,
            forward_anneal_time: r.forward_anneal_time,
        };
        let grid: Vec<(f64, f64)> = r.s_p.iter().flat_map(|&s| r.t_p.iter().map(move |&t| (s, t))).collect();
        for (n, group) in crate::benchmark::group_by_size(&instances) {
            let labels: Vec<String> = group.iter().map(|p| p.label.clone()).collect();
            for &mode in &r.modes {
                let base_row = |s_p: f64, t_p: f64| ResultRow {
                    n,
                    embedding: r.embedding.name().into(),
                    t_or_schedule: "reverse".into(),
                    g: "0".into(),
                    s_p: format!("{s_p}"),
                    t_p: format!("{t_p}"),
                    mode: mode.name().into(),
                    metrics: None,
                    n_p: group.len(),
                    n_s,
                    status: "ok".into(),
                };
                match run_reverse_study(&group, &c.hardware, mode, &grid, &settings, &c.sampler, c.seed) {
                    Ok(results) => {
                        for res in results {
                            let mut row = base_row(res.s_p, res.t_p);
                            row.metrics = Some(metrics_array(&res.metrics));
                            rows.push(row);
                            reverse_text.push_str(&reverse_line(n, &res, n_s));
                            reverse_text.push('\n');
                            if c.config.archive_samples {
                                let cell = format!("ra_n{n}_{}_sp{}_tp{}", mode.name(), res.s_p, res.t_p);
                                archive(out, &cell, &res.runs, &labels, &header)?;
                            }
                        }
                    }
                    Err(e) => {
                        eprintln!("reverse study n={n} mode={} failed: {e}", mode.name());
                        for &(s_p, t_p) in &grid {
                            let mut row = base_row(s_p, t_p);
                            row.status = "failed".into();
                            rows.push(row);
                            failed += 1;
                        }
                    }
                }
            }
        }
        write_atomic(
            &out.join("reverse.csv"),
            &format!("{header}{REVERSE_COLUMNS}\n{reverse_text}"),
        )?;
    }

    write_atomic(&out.join("results.csv"), &results_csv(&rows, &header))?;
    Ok(if failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

/// Column names of the decay-rate report.
pub const REPORT_COLUMNS: &str = "embedding,T_or_schedule,g,s_p,t_p,mode,sizes,rate_p_s,rate_p_b";

/// Fits decay rates for every control group of a results table.
pub fn cmd_report(results: &Path, out: &Path) -> Result<()> {
    let text = read_text(results)?;
    let rows = crate::benchmark::parse_results_csv(&text)?;
    let mut report = csv_header(&short_hash(text.as_bytes()), &[]);
    report.push_str(REPORT_COLUMNS);
    report.push('\n');
    for fit in crate::benchmark::fit_result_groups(&rows) {
        let sizes: Vec<String> = fit.sizes.iter().map(usize::to_string).collect();
        let _ = writeln!(
            report,
            "{},{},{},{}",
            fit.key,
            sizes.join(";"),
            fit.rate_p_s.map(fmt_real).unwrap_or_default(),
            fit.rate_p_b.map(fmt_real).unwrap_or_default()
        );
    }
    write_atomic(&out.join("report.csv"), &report)
}
