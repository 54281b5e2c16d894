//! Experiment protocols and metrics: success and chain-break rates, ensemble
//! averages, decay-rate fits, forward-annealing campaigns and the three
//! reverse-annealing studies.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::formulation::{build_qubo, qubo_to_ising, IsingModel};
use crate::instance_gen::ProblemInstance;
use crate::io::{self, bitstring, fmt_real};
use crate::oracle::{self, EnergyHistogram, Spectrum, ENERGY_TOLERANCE};
use crate::rng;
use crate::samplers::{
    decode_all, majority_vote_decode, sample_with_gauges, svmc_trajectory, LogicalSample, SvmcParams, SvmcStart,
};
use crate::schedules::{forward_schedule, reverse_schedule, Amplitudes};
use crate::topology::{
    clique_embed, complete_graph_edges, embed_ising, randomized_embed, EmbeddedIsing, Embedding, HardwareGraph,
    RandomizedEmbedParams,
};

/// Per-instance estimates from one batch of decoded samples.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMetrics {
    pub p_s: f64,
    pub p_b: f64,
    pub n_s: usize,
    pub energies: Vec<f64>,
}

/// True when `energy` matches the ground energy within [`ENERGY_TOLERANCE`].
pub fn is_ground(energy: f64, ground_energy: f64) -> bool {
    (energy - ground_energy).abs() <= ENERGY_TOLERANCE
}

/// Success and chain-break rates. A sample succeeds when its logical energy
/// matches the ground energy, so every optimum of a degenerate ground space counts.
pub fn estimate_metrics(decoded: &[LogicalSample], ground_energy: f64) -> Result<InstanceMetrics> {
    if decoded.is_empty() {
        return param("no samples to score");
    }
    let n = decoded.len() as f64;
    let hits = decoded.iter().filter(|s| is_ground(s.energy, ground_energy)).count();
    let broken = decoded.iter().filter(|s| s.is_broken()).count();
    Ok(InstanceMetrics {
        p_s: hits as f64 / n,
        p_b: broken as f64 / n,
        n_s: decoded.len(),
        energies: decoded.iter().map(|s| s.energy).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMetrics {
    pub mean_p_s: f64,
    pub mean_p_b: f64,
    pub stderr_p_s: f64,
    pub stderr_p_b: f64,
    pub n_p: usize,
    pub per_instance: Vec<InstanceMetrics>,
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Unweighted means over instances, with standard errors of those means.
pub fn ensemble_average(per_instance: Vec<InstanceMetrics>) -> Result<EnsembleMetrics> {
    if per_instance.is_empty() {
        return param("ensemble is empty");
    }
    let ps: Vec<f64> = per_instance.iter().map(|m| m.p_s).collect();
    let pb: Vec<f64> = per_instance.iter().map(|m| m.p_b).collect();
    let (mean_p_s, stderr_p_s) = mean_and_stderr(&ps);
    let (mean_p_b, stderr_p_b) = mean_and_stderr(&pb);
    Ok(EnsembleMetrics {
        mean_p_s,
        mean_p_b,
        stderr_p_s,
        stderr_p_b,
        n_p: per_instance.len(),
        per_instance,
    })
}

/// Least-squares slope of `ln(value)` against size.
pub fn fit_decay_rate(sizes: &[f64], values: &[f64]) -> Result<f64> {
    if sizes.len() != values.len() {
        return Err(Error::LengthMismatch {
            expected: sizes.len(),
            actual: values.len(),
        });
    }
    if sizes.len() < 2 {
        return param("a decay fit needs at least two points");
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
        return param(format!("decay fit needs positive values, got {v}"));
    }
    let k = sizes.len() as f64;
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let mx = sizes.iter().sum::<f64>() / k;
    let my = logs.iter().sum::<f64>() / k;
    let sxx: f64 = sizes.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return param("decay fit needs at least two distinct sizes");
    }
    let sxy: f64 = sizes.iter().zip(&logs).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// What the benchmark needs to know about an instance's exact spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header: Option<crate::instance_gen::FileHeader>,
    pub n: usize,
    pub ground_bitstring: String,
    #[serde(serialize_with = "io::real17")]
    pub ground_energy: f64,
    pub degeneracy: usize,
    pub first_excited_bitstring: Option<String>,
    #[serde(serialize_with = "opt_real17")]
    pub first_excited_energy: Option<f64>,
}

fn opt_real17<S: serde::Serializer>(x: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match x {
        Some(v) => io::real17(v, s),
        None => s.serialize_none(),
    }
}

impl GroundRecord {
    pub fn from_spectrum(spec: &Spectrum) -> Self {
        let g = spec.ground();
        let e1 = spec.first_excited();
        Self {
            header: None,
            n: spec.n,
            ground_bitstring: bitstring(g.mask, spec.n),
            ground_energy: g.energy,
            degeneracy: spec.ground_degeneracy(),
            first_excited_bitstring: e1.map(|e| bitstring(e.mask, spec.n)),
            first_excited_energy: e1.map(|e| e.energy),
        }
    }

    pub fn ground_mask(&self) -> Result<u64> {
        io::parse_bitstring(&self.ground_bitstring).ok_or_else(|| Error::Parse(format!("bad bitstring {}", self.ground_bitstring)))
    }

    pub fn first_excited_mask(&self) -> Result<Option<u64>> {
        self.first_excited_bitstring
            .as_deref()
            .map(|b| io::parse_bitstring(b).ok_or_else(|| Error::Parse(format!("bad bitstring {b}"))))
            .transpose()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// An instance ready for sampling: its logical Ising model and, when known, its oracle record.
#[derive(Debug, Clone)]
pub struct PreparedInstance {
    pub label: String,
    pub instance: ProblemInstance,
    pub ising: IsingModel,
    pub oracle: Option<GroundRecord>,
}

impl PreparedInstance {
    pub fn new(label: impl Into<String>, instance: ProblemInstance, oracle: Option<GroundRecord>) -> Self {
        let ising = qubo_to_ising(&build_qubo(&instance));
        Self {
            label: label.into(),
            instance,
            ising,
            oracle,
        }
    }

    /// Runs the brute-force oracle in process.
    pub fn with_brute_force(label: impl Into<String>, instance: ProblemInstance) -> Result<Self> {
        let mut p = Self::new(label, instance, None);
        p.oracle = Some(GroundRecord::from_spectrum(&oracle::full_spectrum(&p.ising)?));
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.ising.n()
    }

    pub fn oracle(&self) -> Result<&GroundRecord> {
        self.oracle
            .as_ref()
            .ok_or_else(|| Error::MissingOracle(self.label.clone()))
    }

    fn stream_seed(&self, seed: u64) -> u64 {
        rng::derive(seed, &[self.instance.seed])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Clique,
    Randomized,
}

impl EmbeddingKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Clique => "clique",
            Self::Randomized => "randomized",
        }
    }
}

/// Attempts the randomized embedder makes before a cell is declared infeasible.
pub const RANDOMIZED_EMBED_TRIES: usize = 16;

const EMBED_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;
const DECODE_STREAM: u64 = 3;
const FORWARD_STREAM: u64 = 4;

/// Embeds `K_n`.
pub fn embed_complete(kind: EmbeddingKind, n: usize, hw: &HardwareGraph, seed: u64) -> Result<Embedding> {
    match kind {
        EmbeddingKind::Clique => clique_embed(n, hw),
        EmbeddingKind::Randomized => randomized_embed(
            &complete_graph_edges(n),
            hw,
            &RandomizedEmbedParams::new(seed, RANDOMIZED_EMBED_TRIES),
        ),
    }
}

/// Sampler settings shared by every cell of a campaign.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub svmc: SvmcParams,
    pub chain_strength: f64,
    pub num_samples: usize,
    pub amplitudes: Amplitudes,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            svmc: SvmcParams::default(),
            chain_strength: -1.0,
            num_samples: 1000,
            amplitudes: Amplitudes::linear(),
        }
    }
}

/// Metrics of one instance together with the decoded samples they came from.
#[derive(Debug, Clone)]
pub struct InstanceRun {
    pub metrics: InstanceMetrics,
    pub samples: Vec<LogicalSample>,
}

/// The embedding shared by every instance of size `n` in a campaign.
pub fn size_embedding(kind: EmbeddingKind, n: usize, hw: &HardwareGraph, seed: u64) -> Result<Embedding> {
    embed_complete(kind, n, hw, rng::derive(seed, &[EMBED_STREAM, n as u64]))
}

fn size_embeddings(
    instances: &[PreparedInstance],
    kind: EmbeddingKind,
    hw: &HardwareGraph,
    seed: u64,
) -> Result<BTreeMap<usize, Embedding>> {
    let sizes: BTreeSet<usize> = instances.iter().map(PreparedInstance::n).collect();
    let sizes: Vec<usize> = sizes.into_iter().collect();
    let embs: Vec<Embedding> = sizes
        .par_iter()
        .map(|&n| size_embedding(kind, n, hw, seed))
        .collect::<Result<_>>()?;
    Ok(sizes.into_iter().zip(embs).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardCell {
    pub embedding: EmbeddingKind,
    pub anneal_time: f64,
    pub gauges: usize,
}

fn forward_samples(
    inst: &PreparedInstance,
    model: &EmbeddedIsing,
    anneal_time: f64,
    gauges: usize,
    sampler: &SamplerConfig,
    stream: u64,
) -> Result<Vec<LogicalSample>> {
    let schedule = forward_schedule(anneal_time)?;
    let raw = sample_with_gauges(
        model,
        &schedule,
        &sampler.amplitudes,
        &sampler.svmc,
        &SvmcStart::Transverse,
        gauges,
        sampler.num_samples,
        rng::derive(stream, &[SAMPLE_STREAM]),
    )?;
    decode_all(&raw, model, &inst.ising, rng::derive(stream, &[DECODE_STREAM]))
}

/// Forward-anneals one instance and scores it against its oracle record.
pub fn run_forward_instance(
    inst: &PreparedInstance,
    hw: &HardwareGraph,
    cell: &ForwardCell,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<InstanceRun> {
    let emb = size_embedding(cell.embedding, inst.n(), hw, seed)?;
    forward_with_embedding(inst, &emb, hw, cell, sampler, seed)
}

fn forward_with_embedding(
    inst: &PreparedInstance,
    emb: &Embedding,
    hw: &HardwareGraph,
    cell: &ForwardCell,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<InstanceRun> {
    let ground = inst.oracle()?.ground_energy;
    let model = embed_ising(&inst.ising, emb, hw, sampler.chain_strength)?;
    let samples = forward_samples(inst, &model, cell.anneal_time, cell.gauges, sampler, inst.stream_seed(seed))?;
    Ok(InstanceRun {
        metrics: estimate_metrics(&samples, ground)?,
        samples,
    })
}

/// One ensemble cell: every instance forward-annealed under the same controls.
pub fn run_forward_cell(
    instances: &[PreparedInstance],
    hw: &HardwareGraph,
    cell: &ForwardCell,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<(EnsembleMetrics, Vec<InstanceRun>)> {
    let embs = size_embeddings(instances, cell.embedding, hw, seed)?;
    let runs: Vec<InstanceRun> = instances
        .par_iter()
        .map(|inst| forward_with_embedding(inst, &embs[&inst.n()], hw, cell, sampler, seed))
        .collect::<Result<_>>()?;
    let metrics = ensemble_average(runs.iter().map(|r| r.metrics.clone()).collect())?;
    Ok((metrics, runs))
}

/// Outcome of one campaign cell; failures are kept so the campaign can continue.
#[derive(Debug)]
pub struct CellReport<C> {
    pub n: usize,
    pub cell: C,
    pub outcome: std::result::Result<(EnsembleMetrics, Vec<InstanceRun>), String>,
}

/// Groups instances by size, ascending.
pub fn group_by_size(instances: &[PreparedInstance]) -> BTreeMap<usize, Vec<PreparedInstance>> {
    let mut groups: BTreeMap<usize, Vec<PreparedInstance>> = BTreeMap::new();
    for inst in instances {
        groups.entry(inst.n()).or_default().push(inst.clone());
    }
    groups
}

/// Runs every forward cell for every instance size. Infeasible embeddings
/// mark the cell failed without aborting the campaign.
pub fn run_forward_campaign(
    instances: &[PreparedInstance],
    hw: &HardwareGraph,
    cells: &[ForwardCell],
    sampler: &SamplerConfig,
    seed: u64,
) -> Vec<CellReport<ForwardCell>> {
    let mut out = Vec::new();
    for (n, group) in group_by_size(instances) {
        for cell in cells {
            let outcome = run_forward_cell(&group, hw, cell, sampler, seed).map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                log::warn!("forward cell n={n} {cell:?} failed: {e}");
            }
            out.push(CellReport { n, cell: *cell, outcome });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReverseMode {
    /// Start from the known ground state.
    E0,
    /// Start from the first excited state.
    E1,
    /// Start from the best of a batch of forward-annealing samples.
    Ef,
}

impl ReverseMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::E0 => "e0",
            Self::E1 => "e1",
            Self::Ef => "ef",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseSettings {
    pub embedding: EmbeddingKind,
    pub ramp: f64,
    pub quench: f64,
    /// Anneal time of the forward batch that seeds `ef` mode.
    pub forward_anneal_time: f64,
}

impl Default for ReverseSettings {
    fn default() -> Self {
        Self {
            embedding: EmbeddingKind::Clique,
            ramp: 5.0,
            quench: 5.0,
            forward_anneal_time: 100.0,
        }
    }
}

/// Default pause points: `s_p` from 0.1 to 0.9 in steps of 0.1.
pub fn default_pause_points() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

/// Default pause durations in microseconds.
pub fn default_pause_times() -> Vec<f64> {
    vec![15.0, 50.0, 100.0, 200.0, 400.0, 600.0, 800.0]
}

/// Split of the reverse-annealing success rate by whether each problem
/// started in its ground state (`alpha = true`).
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Mean over problems of `alpha_k · p_s^(k)`.
    pub p_stay: f64,
    /// Mean over problems of `(1 − alpha_k) · p_s^(k)`.
    pub p_climb: f64,
    /// Mean over problems of `p_s^(k)`.
    pub p_combined: f64,
    /// Fraction of problems with `alpha = true`.
    pub p_f: f64,
    /// `p_f` times the pooled success rate.
    pub product_stay: f64,
    /// `1 − p_f` times the pooled success rate.
    pub product_climb: f64,
    /// Mean success over the problems with `alpha = false` only.
    pub p_climb_excluded: Option<f64>,
}

pub fn decompose(alpha: &[bool], p_s: &[f64]) -> Result<Decomposition> {
    if alpha.len() != p_s.len() {
        return Err(Error::LengthMismatch {
            expected: alpha.len(),
            actual: p_s.len(),
        });
    }
    if alpha.is_empty() {
        return param("no problems to decompose");
    }
    let n = alpha.len() as f64;
    let mut stay = 0.0;
    let mut climb = 0.0;
    for (&a, &p) in alpha.iter().zip(p_s) {
        if a {
            stay += p;
        } else {
            climb += p;
        }
    }
    let combined = p_s.iter().sum::<f64>() / n;
    let hits = alpha.iter().filter(|&&a| a).count();
    let p_f = hits as f64 / n;
    let misses = alpha.len() - hits;
    Ok(Decomposition {
        p_stay: stay / n,
        p_climb: climb / n,
        p_combined: combined,
        p_f,
        product_stay: p_f * combined,
        product_climb: (1.0 - p_f) * combined,
        p_climb_excluded: (misses > 0).then(|| climb / misses as f64),
    })
}

#[derive(Debug, Clone)]
pub struct ReverseStudyResult {
    pub mode: ReverseMode,
    pub s_p: f64,
    pub t_p: f64,
    pub decomposition: Decomposition,
    pub alpha: Vec<bool>,
    pub metrics: EnsembleMetrics,
    /// Forward-batch success rate per problem (`ef` mode only).
    pub forward_p_s: Vec<f64>,
    pub runs: Vec<InstanceRun>,
}

impl ReverseStudyResult {
    pub fn p_stay(&self) -> f64 {
        self.decomposition.p_stay
    }

    pub fn p_climb(&self) -> f64 {
        self.decomposition.p_climb
    }

    pub fn p_combined(&self) -> f64 {
        self.decomposition.p_combined
    }

    pub fn p_f(&self) -> f64 {
        self.decomposition.p_f
    }
}

/// Initial logical state of one problem and whether it is a ground state.
#[derive(Debug, Clone)]
pub struct ReverseStart {
    pub spins: Vec<i8>,
    pub alpha: bool,
    pub forward_p_s: Option<f64>,
}

fn mask_spins(mask: u64, n: usize) -> Vec<i8> {
    (0..n).map(|i| if mask >> i & 1 == 1 { 1 } else { -1 }).collect()
}

/// Initial state of a problem for a reverse study.
pub fn reverse_start(
    inst: &PreparedInstance,
    mode: ReverseMode,
    model: &EmbeddedIsing,
    settings: &ReverseSettings,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<ReverseStart> {
    let rec = inst.oracle()?;
    let n = inst.n();
    match mode {
        ReverseMode::E0 => Ok(ReverseStart {
            spins: mask_spins(rec.ground_mask()?, n),
            alpha: true,
            forward_p_s: None,
        }),
        ReverseMode::E1 => {
            let mask = rec
                .first_excited_mask()?
                .ok_or_else(|| Error::MissingOracle(format!("{} has no excited state", inst.label)))?;
            Ok(ReverseStart {
                spins: mask_spins(mask, n),
                alpha: false,
                forward_p_s: None,
            })
        }
        ReverseMode::Ef => {
            let stream = rng::derive(inst.stream_seed(seed), &[FORWARD_STREAM]);
            let samples = forward_samples(inst, model, settings.forward_anneal_time, 0, sampler, stream)?;
            let metrics = estimate_metrics(&samples, rec.ground_energy)?;
            // Lowest energy; the earliest sample wins ties.
            let best = samples
                .iter()
                .min_by(|a, b| a.energy.total_cmp(&b.energy))
                .expect("nonempty batch");
            Ok(ReverseStart {
                spins: best.spins.clone(),
                alpha: is_ground(best.energy, rec.ground_energy),
                forward_p_s: Some(metrics.p_s),
            })
        }
    }
}

/// Iterative reverse annealing of one problem: sample `j` starts from the
/// decoded output of sample `j − 1`, sample 0 from `start`.
#[allow(clippy::too_many_arguments)]
pub fn run_reverse_instance(
    inst: &PreparedInstance,
    model: &EmbeddedIsing,
    start: &[i8],
    s_p: f64,
    t_p: f64,
    settings: &ReverseSettings,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<InstanceRun> {
    let ground = inst.oracle()?.ground_energy;
    let schedule = reverse_schedule(s_p, settings.ramp, t_p, settings.quench)?;
    let stream = inst.stream_seed(seed);
    let sample_seed = rng::derive(stream, &[SAMPLE_STREAM]);
    let decode_seed = rng::derive(stream, &[DECODE_STREAM]);
    let mut current = start.to_vec();
    let mut samples = Vec::with_capacity(sampler.num_samples);
    for j in 0..sampler.num_samples {
        let init = SvmcStart::Classical(model.spread(&current));
        let raw = svmc_trajectory(
            model,
            &schedule,
            &sampler.amplitudes,
            &sampler.svmc,
            &init,
            &mut rng::substream(sample_seed, j as u64),
        )?;
        let decoded = majority_vote_decode(&raw, model, &inst.ising, &mut rng::substream(decode_seed, j as u64))?;
        current.clone_from(&decoded.spins);
        samples.push(decoded);
    }
    Ok(InstanceRun {
        metrics: estimate_metrics(&samples, ground)?,
        samples,
    })
}

/// Runs a reverse study over a grid of `(s_p, t_p)` cells.
pub fn run_reverse_study(
    instances: &[PreparedInstance],
    hw: &HardwareGraph,
    mode: ReverseMode,
    grid: &[(f64, f64)],
    settings: &ReverseSettings,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<Vec<ReverseStudyResult>> {
    if instances.is_empty() {
        return param("reverse study needs at least one instance");
    }
    let embs = size_embeddings(instances, settings.embedding, hw, seed)?;
    let prepared: Vec<(EmbeddedIsing, ReverseStart)> = instances
        .par_iter()
        .map(|inst| {
            let model = embed_ising(&inst.ising, &embs[&inst.n()], hw, sampler.chain_strength)?;
            let start = reverse_start(inst, mode, &model, settings, sampler, seed)?;
            Ok((model, start))
        })
        .collect::<Result<_>>()?;
    let alpha: Vec<bool> = prepared.iter().map(|(_, s)| s.alpha).collect();
    let forward_p_s: Vec<f64> = prepared.iter().filter_map(|(_, s)| s.forward_p_s).collect();
    grid.iter()
        .map(|&(s_p, t_p)| {
            let runs: Vec<InstanceRun> = instances
                .par_iter()
                .zip(&prepared)
                .map(|(inst, (model, start))| {
                    run_reverse_instance(inst, model, &start.spins, s_p, t_p, settings, sampler, seed)
                })
                .collect::<Result<_>>()?;
            let metrics = ensemble_average(runs.iter().map(|r| r.metrics.clone()).collect())?;
            let ps: Vec<f64> = runs.iter().map(|r| r.metrics.p_s).collect();
            Ok(ReverseStudyResult {
                mode,
                s_p,
                t_p,
                decomposition: decompose(&alpha, &ps)?,
                alpha: alpha.clone(),
                metrics,
                forward_p_s: forward_p_s.clone(),
                runs,
            })
        })
        .collect()
}

/// Per-problem combination: forward success where `alpha` is set, reverse
/// success elsewhere, averaged over problems.
pub fn combine_fa_ra(fa_p_s: &[f64], ra_p_s: &[f64], alpha: &[bool]) -> Result<f64> {
    if fa_p_s.len() != ra_p_s.len() || fa_p_s.len() != alpha.len() {
        return Err(Error::LengthMismatch {
            expected: alpha.len(),
            actual: fa_p_s.len().max(ra_p_s.len()),
        });
    }
    if alpha.is_empty() {
        return param("no problems to combine");
    }
    let total: f64 = alpha
        .iter()
        .zip(fa_p_s.iter().zip(ra_p_s))
        .map(|(&a, (&f, &r))| if a { f } else { r })
        .sum();
    Ok(total / alpha.len() as f64)
}

#[derive(Debug, Clone)]
pub struct FaRaComparison {
    pub combined_p_s: f64,
    /// Pooled logical energies of every forward sample.
    pub fa_histogram: EnergyHistogram,
    /// Pooled logical energies of every reverse sample.
    pub ra_histogram: EnergyHistogram,
}

/// Combines a forward ensemble with a reverse cell over the same problems
/// and bins the pooled sample energies of each on a shared grid.
pub fn compare_fa_ra(fa: &EnsembleMetrics, ra: &ReverseStudyResult, bin_width: f64) -> Result<FaRaComparison> {
    if fa.n_p != ra.alpha.len() {
        return Err(Error::Parameter(format!(
            "forward ensemble has {} problems, reverse cell has {}",
            fa.n_p,
            ra.alpha.len()
        )));
    }
    let fa_ps: Vec<f64> = fa.per_instance.iter().map(|m| m.p_s).collect();
    let ra_ps: Vec<f64> = ra.metrics.per_instance.iter().map(|m| m.p_s).collect();
    let combined_p_s = combine_fa_ra(&fa_ps, &ra_ps, &ra.alpha)?;
    let fa_e: Vec<f64> = fa.per_instance.iter().flat_map(|m| m.energies.iter().copied()).collect();
    let ra_e: Vec<f64> = ra.metrics.per_instance.iter().flat_map(|m| m.energies.iter().copied()).collect();
    let origin = fa_e.iter().chain(&ra_e).copied().fold(f64::INFINITY, f64::min);
    Ok(FaRaComparison {
        combined_p_s,
        fa_histogram: oracle::energy_histogram(&fa_e, bin_width, origin)?,
        ra_histogram: oracle::energy_histogram(&ra_e, bin_width, origin)?,
    })
}

/// Archived decoded samples: `sample_index,bitstring,energy,num_broken_chains`.
pub fn samples_csv(samples: &[LogicalSample], header: &str) -> String {
    let mut out = String::from(header);
    out.push_str("sample_index,bitstring,energy,num_broken_chains\n");
    for (k, s) in samples.iter().enumerate() {
        out.push_str(&format!(
            "{k},{},{},{}\n",
            bitstring(s.mask(), s.spins.len()),
            fmt_real(s.energy),
            s.broken_chains.len()
        ));
    }
    out
}

/// Recomputes instance metrics from an archived sample CSV.
pub fn recount_samples_csv(text: &str, ground_energy: f64) -> Result<InstanceMetrics> {
    let mut lines = io::strip_comments(text);
    match lines.next() {
        Some("sample_index,bitstring,energy,num_broken_chains") => {}
        other => return Err(Error::Parse(format!("unexpected sample header {other:?}"))),
    }
    let mut hits = 0usize;
    let mut broken = 0usize;
    let mut energies = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!("bad sample row {line:?}")));
        }
        let energy: f64 = fields[2].parse().map_err(|_| Error::Parse(format!("bad energy {:?}", fields[2])))?;
        let chains: usize = fields[3].parse().map_err(|_| Error::Parse(format!("bad count {:?}", fields[3])))?;
        hits += usize::from(is_ground(energy, ground_energy));
        broken += usize::from(chains > 0);
        energies.push(energy);
    }
    if energies.is_empty() {
        return param("sample file has no rows");
    }
    let n = energies.len() as f64;
    Ok(InstanceMetrics {
        p_s: hits as f64 / n,
        p_b: broken as f64 / n,
        n_s: energies.len(),
        energies,
    })
}

/// Column names of the campaign results table.
pub const RESULTS_COLUMNS: &str =
    "n,embedding,T_or_schedule,g,s_p,t_p,mode,mean_p_s,mean_p_b,stderr_p_s,stderr_p_b,N_p,N_s,status";

/// One row of the campaign results table. Empty strings mark fields that do
/// not apply to a row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub n: usize,
    pub embedding: String,
    pub t_or_schedule: String,
    pub g: String,
    pub s_p: String,
    pub t_p: String,
    pub mode: String,
    pub metrics: Option<[f64; 4]>,
    pub n_p: usize,
    pub n_s: usize,
    pub status: String,
}

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        let m = match self.metrics {
            Some(v) => v.iter().map(|&x| fmt_real(x)).collect::<Vec<_>>().join(","),
            None => ",,,".to_string(),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.n, self.embedding, self.t_or_schedule, self.g, self.s_p, self.t_p, self.mode, m, self.n_p, self.n_s, self.status
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 14 {
            return Err(Error::Parse(format!("bad results row {line:?}")));
        }
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Parse(format!("bad number {s:?}"))) };
        let int = |s: &str| -> Result<usize> { s.parse().map_err(|_| Error::Parse(format!("bad integer {s:?}"))) };
        let metrics = if f[7].is_empty() {
            None
        } else {
            Some([num(f[7])?, num(f[8])?, num(f[9])?, num(f[10])?])
        };
        Ok(Self {
            n: int(f[0])?,
            embedding: f[1].into(),
            t_or_schedule: f[2].into(),
            g: f[3].into(),
            s_p: f[4].into(),
            t_p: f[5].into(),
            mode: f[6].into(),
            metrics,
            n_p: int(f[11])?,
            n_s: int(f[12])?,
            status: f[13].into(),
        })
    }
}

pub fn results_csv(rows: &[ResultRow], header: &str) -> String {
    let mut out = String::from(header);
    out.push_str(RESULTS_COLUMNS);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = io::strip_comments(text);
    if lines.next() != Some(RESULTS_COLUMNS) {
        return Err(Error::Parse("results table header does not match".into()));
    }
    lines.map(ResultRow::parse).collect()
}

/// Decay rates of `mean_p_s` and `mean_p_b` against `n` for one group of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub key: String,
    pub sizes: Vec<usize>,
    pub rate_p_s: Option<f64>,
    pub rate_p_b: Option<f64>,
}

/// Groups successful rows by every control column except `n` and fits both rates.
pub fn fit_result_groups(rows: &[ResultRow]) -> Vec<DecayFit> {
    let mut groups: BTreeMap<String, Vec<(usize, [f64; 4])>> = BTreeMap::new();
    for r in rows {
        if let Some(m) = r.metrics {
            let key = [&r.embedding, &r.t_or_schedule, &r.g, &r.s_p, &r.t_p, &r.mode]
                .map(|s| s.as_str())
                .join(",");
            groups.entry(key).or_default().push((r.n, m));
        }
    }
    groups
        .into_iter()
        .map(|(key, mut pts)| {
            pts.sort_by_key(|p| p.0);
            let sizes: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
            let ps: Vec<f64> = pts.iter().map(|p| p.1[0]).collect();
            let pb: Vec<f64> = pts.iter().map(|p| p.1[1]).collect();
            DecayFit {
                key,
                sizes: pts.iter().map(|p| p.0).collect(),
                rate_p_s: fit_decay_rate(&sizes, &ps).ok(),
                rate_p_b: fit_decay_rate(&sizes, &pb).ok(),
            }
        })
        .collect()
}

/// Boltzmann weight of the ground space when energies are rescaled to
/// `[0, 1]` over the spectrum range, at inverse temperature `beta`.
///
/// Used as a difficulty proxy: a dense low-energy spectrum dilutes the weight.
pub fn ground_boltzmann_weight(energies: &[f64], beta: f64) -> Result<f64> {
    if energies.is_empty() {
        return param("empty spectrum");
    }
    let lo = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut z = 0.0;
    let mut g = 0.0;
    for &e in energies {
        let w = (-beta * (e - lo) / span).exp();
        z += w;
        if is_ground(e, lo) {
            g += w;
        }
    }
    Ok(g / z)
}

/// Number of distinct energies (within [`ENERGY_TOLERANCE`]) in the lowest
/// `fraction` of the spectrum's energy range.
pub fn distinct_low_energies(energies: &[f64], fraction: f64) -> usize {
    if energies.is_empty() {
        return 0;
    }
    let mut sorted = energies.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[0];
    let cut = lo + fraction * (sorted[sorted.len() - 1] - lo);
    let mut count = 0;
    let mut last = f64::NEG_INFINITY;
    for &e in sorted.iter().take_while(|&&e| e <= cut) {
        if e - last > ENERGY_TOLERANCE {
            count += 1;
            last = e;
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance_gen::{generate_instance, DEFAULT_THETA};
    use crate::samplers::SchedulePoints;
    use crate::topology::build_chimera;

    fn sample(energy: f64, broken: bool) -> LogicalSample {
        LogicalSample {
            spins: vec![1, -1],
            energy,
            broken_chains: if broken { vec![0] } else { vec![] },
        }
    }

    #[test]
    fn success_rate_arithmetic() {
        let mut s: Vec<LogicalSample> = (0..1000).map(|_| sample(1.0, false)).collect();
        for x in s.iter_mut().take(10) {
            x.energy = -2.0;
        }
        let m = estimate_metrics(&s, -2.0).unwrap();
        assert_eq!(m.p_s, 0.01);
        assert_eq!(m.p_b, 0.0);
        assert_eq!(m.n_s, 1000);
        assert!(estimate_metrics(&[], 0.0).is_err());
    }

    #[test]
    fn degenerate_ground_counts_by_energy() {
        let a = LogicalSample {
            spins: vec![1, -1],
            energy: -1.0,
            broken_chains: vec![],
        };
        let b = LogicalSample {
            spins: vec![-1, 1],
            energy: -1.0 + 1e-12,
            broken_chains: vec![1],
        };
        let m = estimate_metrics(&[a, b], -1.0).unwrap();
        assert_eq!(m.p_s, 1.0);
        assert_eq!(m.p_b, 0.5);
    }

    fn im(p_s: f64) -> InstanceMetrics {
        InstanceMetrics {
            p_s,
            p_b: 0.0,
            n_s: 1,
            energies: vec![],
        }
    }

    #[test]
    fn ensemble_means() {
        let e = ensemble_average(vec![im(0.2), im(0.4)]).unwrap();
        assert!((e.mean_p_s - 0.3).abs() < 1e-15);
        assert!((e.stderr_p_s - 0.1).abs() < 1e-12);
        let one = ensemble_average(vec![im(0.7)]).unwrap();
        assert_eq!(one.mean_p_s, 0.7);
        assert_eq!(one.stderr_p_s, 0.0);
        assert!(ensemble_average(vec![]).is_err());
    }

    #[test]
    fn decay_fit() {
        let sizes: [f64; 4] = [8.0, 12.0, 16.0, 20.0];
        let v: Vec<f64> = sizes.iter().map(|n| (-0.5 * n).exp()).collect();
        assert!((fit_decay_rate(&sizes, &v).unwrap() + 0.5).abs() < 1e-9);
        assert_eq!(fit_decay_rate(&sizes, &[0.3; 4]).unwrap(), 0.0);
        assert!(fit_decay_rate(&sizes, &[0.3, 0.0, 0.1, 0.1]).is_err());
        assert!(fit_decay_rate(&[8.0], &[0.3]).is_err());
        assert!(fit_decay_rate(&[8.0, 8.0], &[0.3, 0.2]).is_err());
    }

    #[test]
    fn decomposition_identities() {
        let alpha: Vec<bool> = (0..100).map(|k| k < 6).collect();
        let ps: Vec<f64> = (0..100).map(|k| (k as f64 * 0.37).fract()).collect();
        let d = decompose(&alpha, &ps).unwrap();
        assert!((d.p_f - 0.06).abs() < 1e-15);
        assert!((d.p_stay + d.p_climb - d.p_combined).abs() <= 1e-12);
        let excl = ps[6..].iter().sum::<f64>() / 94.0;
        assert!((d.p_climb_excluded.unwrap() - excl).abs() < 1e-12);
        assert!(decompose(&[true], &[]).is_err());
    }

    #[test]
    fn combination_cases() {
        let alpha: Vec<bool> = (0..100).map(|k| k < 6).collect();
        let fa = vec![0.01; 100];
        let ra = vec![0.1; 100];
        assert!((combine_fa_ra(&fa, &ra, &alpha).unwrap() - 0.0946).abs() < 1e-12);
        assert!((combine_fa_ra(&fa, &ra, &[true; 100]).unwrap() - 0.01).abs() < 1e-15);
        assert!((combine_fa_ra(&fa, &ra, &[false; 100]).unwrap() - 0.1).abs() < 1e-15);
        assert!(combine_fa_ra(&fa, &ra[1..], &alpha).is_err());
    }

    #[test]
    fn sample_csv_recount() {
        let s = vec![sample(-1.0, false), sample(-0.5, true), sample(-1.0, true)];
        let csv = samples_csv(&s, &io::csv_header("abc", &[1]));
        let m = recount_samples_csv(&csv, -1.0).unwrap();
        assert_eq!(m, estimate_metrics(&s, -1.0).unwrap());
        assert!(recount_samples_csv("a,b\n", 0.0).is_err());
    }

    #[test]
    fn results_rows_round_trip() {
        let row = ResultRow {
            n: 8,
            embedding: "clique".into(),
            t_or_schedule: "100".into(),
            g: "0".into(),
            s_p: String::new(),
            t_p: String::new(),
            mode: "fa".into(),
            metrics: Some([0.1, 0.2, 0.01, 0.02]),
            n_p: 3,
            n_s: 10,
            status: "ok".into(),
        };
        let failed = ResultRow {
            metrics: None,
            status: "failed".into(),
            ..row.clone()
        };
        let csv = results_csv(&[row.clone(), failed.clone()], "# x\n");
        assert_eq!(parse_results_csv(&csv).unwrap(), vec![row, failed]);
    }

    #[test]
    fn group_fits() {
        let mk = |n: usize, p: f64| ResultRow {
            n,
            embedding: "clique".into(),
            t_or_schedule: "100".into(),
            g: "0".into(),
            s_p: String::new(),
            t_p: String::new(),
            mode: "fa".into(),
            metrics: Some([p, p, 0.0, 0.0]),
            n_p: 1,
            n_s: 1,
            status: "ok".into(),
        };
        let rows: Vec<ResultRow> = [8usize, 12, 16].iter().map(|&n| mk(n, (-0.25 * n as f64).exp())).collect();
        let fits = fit_result_groups(&rows);
        assert_eq!(fits.len(), 1);
        assert!((fits[0].rate_p_s.unwrap() + 0.25).abs() < 1e-12);
    }

    #[test]
    fn spectrum_density_helpers() {
        let e = [0.0, 0.05, 0.05, 0.08, 0.5, 1.0];
        assert_eq!(distinct_low_energies(&e, 0.1), 3);
        let w = ground_boltzmann_weight(&[0.0, 1.0], 0.0).unwrap();
        assert!((w - 0.5).abs() < 1e-15);
        let cold = ground_boltzmann_weight(&[0.0, 1.0], 50.0).unwrap();
        assert!(cold > 0.99);
    }

    fn small_prepared(seed: u64) -> PreparedInstance {
        let inst = generate_instance(2, 2, 1.0, DEFAULT_THETA, seed).unwrap();
        PreparedInstance::with_brute_force(format!("i{seed}"), inst).unwrap()
    }

    fn quick_sampler() -> SamplerConfig {
        SamplerConfig {
            svmc: SvmcParams {
                points: SchedulePoints::Fixed(100),
                ..SvmcParams::default()
            },
            num_samples: 20,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn forward_cell_smoke() {
        let hw = build_chimera(16, 16, 4, &BTreeSet::new()).unwrap();
        let insts = vec![small_prepared(1)];
        let cell = ForwardCell {
            embedding: EmbeddingKind::Clique,
            anneal_time: 100.0,
            gauges: 2,
        };
        let (m, runs) = run_forward_cell(&insts, &hw, &cell, &quick_sampler(), 7).unwrap();
        assert_eq!(m.n_p, 1);
        assert_eq!(runs[0].samples.len(), 20);
        let (again, _) = run_forward_cell(&insts, &hw, &cell, &quick_sampler(), 7).unwrap();
        assert_eq!(m, again);
        for s in &runs[0].samples {
            assert!((s.energy - insts[0].ising.energy(&s.spins).unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn campaign_marks_infeasible_cells() {
        let hw = build_chimera(1, 1, 1, &BTreeSet::new()).unwrap();
        let insts = vec![small_prepared(2)];
        let cells = [ForwardCell {
            embedding: EmbeddingKind::Clique,
            anneal_time: 10.0,
            gauges: 0,
        }];
        let reports = run_forward_campaign(&insts, &hw, &cells, &quick_sampler(), 1);
        assert_eq!(reports.len(), 1);
        assert!(reports[0].outcome.is_err());
    }

    #[test]
    fn reverse_study_bookkeeping() {
        let hw = build_chimera(16, 16, 4, &BTreeSet::new()).unwrap();
        let insts = vec![small_prepared(3), small_prepared(4)];
        let grid = [(0.5, 15.0), (0.9, 0.0)];
        for mode in [ReverseMode::E0, ReverseMode::E1, ReverseMode::Ef] {
            let res = run_reverse_study(&insts, &hw, mode, &grid, &ReverseSettings::default(), &quick_sampler(), 5)
                .unwrap();
            assert_eq!(res.len(), 2);
            for r in &res {
                assert!((r.p_stay() + r.p_climb() - r.p_combined()).abs() <= 1e-12);
                match mode {
                    ReverseMode::E0 => assert_eq!(r.p_f(), 1.0),
                    ReverseMode::E1 => assert_eq!(r.p_f(), 0.0),
                    ReverseMode::Ef => assert_eq!(r.forward_p_s.len(), 2),
                }
            }
        }
        let mut missing = insts.clone();
        missing[0].oracle = None;
        assert!(matches!(
            run_reverse_study(&missing, &hw, ReverseMode::E0, &grid, &ReverseSettings::default(), &quick_sampler(), 5),
            Err(Error::MissingOracle(_))
        ));
    }

    #[test]
    fn ground_record_json() {
        let p = small_prepared(5);
        let rec = p.oracle.clone().unwrap();
        let back = GroundRecord::from_json(&rec.to_json().unwrap()).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.n, 4);
        assert!(back.ground_mask().unwrap() < 16);
    }
}
