//! Solution samplers: an exact state-vector evolver for small logical models,
//! a spin-vector Monte Carlo (SVMC) sampler for embedded models, spin-reversal
//! gauges and majority-vote decoding of chains.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{param, Error, Result};
use crate::formulation::{EnergyModel, IsingModel};
use crate::oracle::ENERGY_TOLERANCE;
use crate::rng::{self, StreamRng};
use crate::schedules::{Amplitudes, Schedule};
use crate::topology::EmbeddedIsing;

/// Largest logical model accepted by [`evolve_exact`].
pub const MAX_EXACT_QUBITS: usize = 14;

/// Norm drift above which integration is declared failed.
pub const MAX_NORM_DRIFT: f64 = 1e-6;

/// `2^n` amplitudes; index bit `i` set means spin `i` is `+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub n: usize,
    pub amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// Ground state of `−Σ σx`, the uniform superposition.
    pub fn uniform(n: usize) -> Self {
        let amp = Complex64::new((1u64 << n) as f64, 0.0).sqrt().inv();
        Self {
            n,
            amplitudes: vec![amp; 1 << n],
        }
    }

    pub fn basis(n: usize, mask: u64) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n];
        amplitudes[mask as usize] = Complex64::new(1.0, 0.0);
        Self { n, amplitudes }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(Complex64::norm_sqr).sum()
    }

    /// Total probability of the basis states selected by `pred`.
    pub fn population(&self, pred: impl Fn(u64) -> bool) -> f64 {
        self.amplitudes
            .iter()
            .enumerate()
            .filter(|(x, _)| pred(*x as u64))
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// Interleaved `(re, im)` pairs as little-endian 64-bit floats.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.amplitudes.len() * 16);
        for a in &self.amplitudes {
            out.extend_from_slice(&a.re.to_le_bytes());
            out.extend_from_slice(&a.im.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(n: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != (16usize << n) {
            return Err(Error::Parse(format!("expected {} bytes, got {}", 16usize << n, bytes.len())));
        }
        let amplitudes = bytes
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
                Complex64::new(re, im)
            })
            .collect();
        Ok(Self { n, amplitudes })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialState {
    /// Ground state of the transverse-field driver.
    Uniform,
    /// Computational basis state (bit `i` set means spin `+1`).
    Basis(u64),
}

#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub state: StateVector,
    /// Population of the lowest-energy eigenspace of the problem Hamiltonian.
    pub p_s: f64,
    pub max_norm_drift: f64,
    pub steps: usize,
}

// Yoshida's triple-jump weights.
const YOSHIDA_W1: f64 = 1.351_207_191_959_657_8;
const YOSHIDA_W0: f64 = -1.702_414_383_919_315_3;

struct Evolver<'a> {
    n: usize,
    energies: Vec<f64>,
    schedule: &'a Schedule,
    amps: &'a Amplitudes,
}

impl Evolver<'_> {
    fn apply_diagonal(&self, psi: &mut [Complex64], angle: f64) {
        for (a, &e) in psi.iter_mut().zip(&self.energies) {
            *a *= Complex64::from_polar(1.0, -angle * e);
        }
    }

    /// `exp(+i θ Σ σx)`, one exact rotation per qubit.
    fn apply_driver(&self, psi: &mut [Complex64], theta: f64) {
        let (c, s) = (theta.cos(), theta.sin());
        let is = Complex64::new(0.0, s);
        for q in 0..self.n {
            let bit = 1usize << q;
            for x in 0..psi.len() {
                if x & bit == 0 {
                    let (a, b) = (psi[x], psi[x | bit]);
                    psi[x] = a * c + b * is;
                    psi[x | bit] = a * is + b * c;
                }
            }
        }
    }

    /// Symmetric second-order split step with midpoint amplitudes.
    fn strang(&self, psi: &mut [Complex64], t: f64, h: f64) -> Result<()> {
        let (a, b) = self.amps.at(self.schedule.s_at(t + h / 2.0))?;
        self.apply_diagonal(psi, b * h / 2.0);
        self.apply_driver(psi, a * h);
        self.apply_diagonal(psi, b * h / 2.0);
        Ok(())
    }

    fn step(&self, psi: &mut [Complex64], t: f64, h: f64) -> Result<()> {
        self.strang(psi, t, YOSHIDA_W1 * h)?;
        self.strang(psi, t + YOSHIDA_W1 * h, YOSHIDA_W0 * h)?;
        self.strang(psi, t + (YOSHIDA_W1 + YOSHIDA_W0) * h, YOSHIDA_W1 * h)
    }
}

/// Integrates `i ∂ψ/∂t = [A(s(t)) H0 + B(s(t)) H1] ψ` with `H0 = −Σ σx`
/// and `H1` the Ising model (ħ = 1).
///
/// Each schedule segment is cut into equal steps no longer than `dt`, and each
/// step is a fourth-order Yoshida composition of unitary split steps, so the
/// norm is conserved up to rounding.
pub fn evolve_exact(
    model: &IsingModel,
    schedule: &Schedule,
    amps: &Amplitudes,
    dt: f64,
    initial: InitialState,
) -> Result<EvolutionResult> {
    let n = model.n();
    if n > MAX_EXACT_QUBITS {
        return Err(Error::Capacity {
            what: "exact evolution",
            n,
            limit: MAX_EXACT_QUBITS,
        });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return param(format!("time step must be positive, got {dt}"));
    }
    let energies: Vec<f64> = (0..1u64 << n).map(|x| model.energy_mask(x) - model.offset).collect();
    let ev = Evolver {
        n,
        energies,
        schedule,
        amps,
    };
    let mut state = match initial {
        InitialState::Uniform => StateVector::uniform(n),
        InitialState::Basis(mask) => {
            if mask >> n != 0 {
                return param(format!("basis state {mask} has more than {n} bits"));
            }
            StateVector::basis(n, mask)
        }
    };
    let mut max_drift: f64 = 0.0;
    let mut steps = 0;
    for seg in schedule.breakpoints().windows(2) {
        let (t0, t1) = (seg[0].0, seg[1].0);
        let k = ((t1 - t0) / dt).ceil().max(1.0) as usize;
        let h = (t1 - t0) / k as f64;
        for j in 0..k {
            ev.step(&mut state.amplitudes, t0 + j as f64 * h, h)?;
            steps += 1;
        }
        let drift = (state.norm_sqr() - 1.0).abs();
        max_drift = max_drift.max(drift);
        if drift > MAX_NORM_DRIFT {
            return Err(Error::Integration(format!("norm drift {drift:e} after {steps} steps")));
        }
    }
    let e0 = ev.energies.iter().copied().fold(f64::INFINITY, f64::min);
    let p_s = state.population(|x| ev.energies[x as usize] <= e0 + ENERGY_TOLERANCE);
    Ok(EvolutionResult {
        state,
        p_s,
        max_norm_drift: max_drift,
        steps,
    })
}

/// How many points the SVMC sampler visits along a schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchedulePoints {
    /// A fixed number of points regardless of the schedule duration.
    Fixed(usize),
    /// `rate × duration` points (at least two), so longer anneals do more sweeps.
    PerMicrosecond(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmcParams {
    pub temperature: f64,
    pub sweeps_per_point: usize,
    pub points: SchedulePoints,
    /// Divide the programmed model into the device ranges before sampling,
    /// as the hardware does with out-of-range chain strengths.
    pub auto_scale: bool,
}

impl Default for SvmcParams {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            sweeps_per_point: 1,
            points: SchedulePoints::Fixed(1000),
            auto_scale: true,
        }
    }
}

impl SvmcParams {
    fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return param(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.sweeps_per_point == 0 {
            return param("sweeps per schedule point must be positive");
        }
        match self.points {
            SchedulePoints::Fixed(p) if p < 2 => param("at least two schedule points are required"),
            SchedulePoints::PerMicrosecond(r) if !(r > 0.0 && r.is_finite()) => {
                param(format!("schedule point rate must be positive, got {r}"))
            }
            _ => Ok(()),
        }
    }

    fn point_count(&self, schedule: &Schedule) -> usize {
        match self.points {
            SchedulePoints::Fixed(p) => p,
            SchedulePoints::PerMicrosecond(r) => ((r * schedule.duration()).round() as usize).max(2),
        }
    }
}

/// Initial rotor configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum SvmcStart {
    /// Every rotor along the transverse direction, `θ = π/2`.
    Transverse,
    /// Rotors at `θ = 0` (spin `+1`) or `θ = π` (spin `−1`), by local qubit index.
    Classical(Vec<i8>),
}

/// One annealer read-out.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    /// Spin of each embedded qubit, by local index.
    pub spins: Vec<i8>,
    /// Embedded-model energy (no offset).
    pub energy: f64,
}

impl RawSample {
    pub fn physical_spins(&self, model: &EmbeddedIsing) -> std::collections::BTreeMap<usize, i8> {
        model.qubits.iter().copied().zip(self.spins.iter().copied()).collect()
    }
}

/// Order in which a sweep visits qubits: chain by chain, each chain
/// breadth-first along its own couplers from its lowest local index. Every
/// qubit after the first of a chain is visited right after a chain neighbor,
/// so strong chains polarize as one domain instead of freezing in domain walls.
pub fn sweep_order(model: &EmbeddedIsing) -> Vec<usize> {
    let nq = model.num_qubits();
    let mut chain_adj = vec![Vec::new(); nq];
    for c in model.couplers.iter().filter(|c| c.intra_chain) {
        chain_adj[c.a].push(c.b);
        chain_adj[c.b].push(c.a);
    }
    let mut seen = vec![false; nq];
    let mut order = Vec::with_capacity(nq);
    for chain in &model.chains_local {
        for &start in chain {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut queue = std::collections::VecDeque::from([start]);
            while let Some(q) = queue.pop_front() {
                order.push(q);
                for &p in &chain_adj[q] {
                    if !seen[p] {
                        seen[p] = true;
                        queue.push_back(p);
                    }
                }
            }
        }
    }
    order.extend((0..nq).filter(|&q| !seen[q]));
    order
}

/// Runs one SVMC trajectory.
///
/// Each qubit is a planar rotor with effective energy
/// `−A(s) Σ sin θ_i + B(s) [Σ h_i cos θ_i + Σ J_ij cos θ_i cos θ_j]`. At every
/// schedule point each rotor receives `sweeps_per_point` Metropolis proposals
/// drawn uniformly from `[0, π]`, visiting qubits in [`sweep_order`]; the
/// final angles are projected to `sign(cos θ)`. With `auto_scale` the problem
/// terms are divided by [`EmbeddedIsing::device_scale`]; reported energies
/// stay in model units.
pub fn svmc_trajectory(
    model: &EmbeddedIsing,
    schedule: &Schedule,
    amps: &Amplitudes,
    params: &SvmcParams,
    start: &SvmcStart,
    rng: &mut StreamRng,
) -> Result<RawSample> {
    params.validate()?;
    let nq = model.num_qubits();
    let mut theta: Vec<f64> = match start {
        SvmcStart::Transverse => vec![PI / 2.0; nq],
        SvmcStart::Classical(spins) => {
            if spins.len() != nq {
                return Err(Error::LengthMismatch {
                    expected: nq,
                    actual: spins.len(),
                });
            }
            spins.iter().map(|&s| if s > 0 { 0.0 } else { PI }).collect()
        }
    };
    let mut cos: Vec<f64> = theta.iter().map(|t| t.cos()).collect();
    let mut sin: Vec<f64> = theta.iter().map(|t| t.sin()).collect();
    let points = params.point_count(schedule);
    let inv_t = 1.0 / params.temperature;
    let order = sweep_order(model);
    let scale = if params.auto_scale { model.device_scale() } else { 1.0 };
    for k in 0..points {
        let t = schedule.start() + schedule.duration() * k as f64 / (points - 1) as f64;
        let (a, b) = amps.at(schedule.s_at(t))?;
        let b = b / scale;
        for _ in 0..params.sweeps_per_point {
            for &i in &order {
                let field = model.h[i]
                    + model
                        .neighbors(i)
                        .iter()
                        .map(|&(j, c)| c * cos[j])
                        .sum::<f64>();
                let proposal = PI * rng.gen::<f64>();
                let (ns, nc) = proposal.sin_cos();
                let delta = -a * (ns - sin[i]) + b * field * (nc - cos[i]);
                if delta <= 0.0 || rng.gen::<f64>() < (-delta * inv_t).exp() {
                    theta[i] = proposal;
                    cos[i] = nc;
                    sin[i] = ns;
                }
            }
        }
    }
    let spins: Vec<i8> = cos.iter().map(|&c| if c >= 0.0 { 1 } else { -1 }).collect();
    let energy = model.energy(&spins);
    Ok(RawSample { spins, energy })
}

/// `num_samples` independent SVMC trajectories; sample `k` draws from
/// [`rng::substream`]`(seed, k)`.
pub fn svmc_sample(
    model: &EmbeddedIsing,
    schedule: &Schedule,
    amps: &Amplitudes,
    params: &SvmcParams,
    start: &SvmcStart,
    num_samples: usize,
    seed: u64,
) -> Result<Vec<RawSample>> {
    params.validate()?;
    (0..num_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng::substream(seed, k as u64);
            svmc_trajectory(model, schedule, amps, params, start, &mut rng)
        })
        .collect()
}

/// Spin-reversal transform over a set of spin indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GaugeTransform {
    pub flip_set: BTreeSet<usize>,
}

impl GaugeTransform {
    pub fn new(flip_set: impl IntoIterator<Item = usize>) -> Self {
        Self {
            flip_set: flip_set.into_iter().collect(),
        }
    }

    /// Each index flipped independently with probability 1/2.
    pub fn random(indices: impl IntoIterator<Item = usize>, rng: &mut StreamRng) -> Self {
        Self::new(indices.into_iter().filter(|_| rng.gen::<bool>()))
    }

    pub fn flips(&self, i: usize) -> bool {
        self.flip_set.contains(&i)
    }
}

/// Models a gauge can act on.
pub trait Gauged: Sized {
    /// Negates biases on flipped spins and couplings with exactly one flipped endpoint.
    fn apply_gauge(&self, g: &GaugeTransform) -> Result<Self>;
}

impl Gauged for IsingModel {
    /// Indices are logical spin indices.
    fn apply_gauge(&self, g: &GaugeTransform) -> Result<Self> {
        let n = self.n();
        if let Some(&bad) = g.flip_set.range(n..).next() {
            return Err(Error::OutOfRange { index: bad, len: n });
        }
        let mut out = IsingModel::zeros(n);
        out.offset = self.offset;
        for i in 0..n {
            out.h[i] = if g.flips(i) { -self.h[i] } else { self.h[i] };
        }
        for (i, j, v) in self.edges() {
            let v = if g.flips(i) != g.flips(j) { -v } else { v };
            out.set_coupling(i, j, v)?;
        }
        Ok(out)
    }
}

impl Gauged for EmbeddedIsing {
    /// Indices are physical qubit ids.
    fn apply_gauge(&self, g: &GaugeTransform) -> Result<Self> {
        let mut local = vec![false; self.num_qubits()];
        for &q in &g.flip_set {
            let i = self.local_index(q).ok_or(Error::OutOfRange {
                index: q,
                len: self.num_qubits(),
            })?;
            local[i] = true;
        }
        let mut out = self.clone();
        for (i, h) in out.h.iter_mut().enumerate() {
            if local[i] {
                *h = -*h;
            }
        }
        for c in &mut out.couplers {
            if local[c.a] != local[c.b] {
                c.value = -c.value;
            }
        }
        out.rebuild_neighbors();
        Ok(out)
    }
}

/// Flips the spins listed in a gauge (local indices of an embedded model).
fn ungauge(spins: &mut [i8], local_flips: &[bool]) {
    for (s, &f) in spins.iter_mut().zip(local_flips) {
        if f {
            *s = -*s;
        }
    }
}

/// Splits `num_samples` over `g_count` gauges, earliest gauges taking the remainder.
pub fn gauge_shares(num_samples: usize, g_count: usize) -> Vec<usize> {
    if g_count == 0 {
        return vec![num_samples];
    }
    (0..g_count)
        .map(|k| num_samples / g_count + usize::from(k < num_samples % g_count))
        .collect()
}

const GAUGE_STREAM: u64 = 0x67_6175_6765;

/// Samples under `g_count` random spin-reversal gauges. With `g_count = 0`
/// this is exactly [`svmc_sample`]. Returned spins and energies are in the
/// original frame.
#[allow(clippy::too_many_arguments)]
pub fn sample_with_gauges(
    model: &EmbeddedIsing,
    schedule: &Schedule,
    amps: &Amplitudes,
    params: &SvmcParams,
    start: &SvmcStart,
    g_count: usize,
    num_samples: usize,
    seed: u64,
) -> Result<Vec<RawSample>> {
    if g_count == 0 {
        return svmc_sample(model, schedule, amps, params, start, num_samples, seed);
    }
    let mut out = Vec::with_capacity(num_samples);
    for (k, share) in gauge_shares(num_samples, g_count).into_iter().enumerate() {
        let mut grng = rng::substream(rng::derive(seed, &[GAUGE_STREAM]), k as u64);
        let gauge = GaugeTransform::random(model.qubits.iter().copied(), &mut grng);
        let gauged = model.apply_gauge(&gauge)?;
        let local: Vec<bool> = model.qubits.iter().map(|&q| gauge.flips(q)).collect();
        let start = match start {
            SvmcStart::Transverse => SvmcStart::Transverse,
            SvmcStart::Classical(s) => {
                let mut s = s.clone();
                ungauge(&mut s, &local);
                SvmcStart::Classical(s)
            }
        };
        let samples = svmc_sample(&gauged, schedule, amps, params, &start, share, rng::derive(seed, &[k as u64 + 1]))?;
        for mut s in samples {
            ungauge(&mut s.spins, &local);
            s.energy = model.energy(&s.spins);
            out.push(s);
        }
    }
    Ok(out)
}

/// A decoded logical read-out.
#[derive(Debug, Clone, PartialEq)]
pub struct LogicalSample {
    pub spins: Vec<i8>,
    /// Logical Ising energy including the offset.
    pub energy: f64,
    /// Logical indices whose chains disagree internally.
    pub broken_chains: Vec<usize>,
}

impl LogicalSample {
    pub fn is_broken(&self) -> bool {
        !self.broken_chains.is_empty()
    }

    pub fn mask(&self) -> u64 {
        self.spins
            .iter()
            .enumerate()
            .fold(0, |m, (i, &s)| if s > 0 { m | 1 << i } else { m })
    }
}

/// Majority value of one chain and whether it is broken. Ties are settled by
/// a fair coin from `rng`.
pub fn majority_vote(chain: &[i8], rng: &mut StreamRng) -> (i8, bool) {
    let sum: i32 = chain.iter().map(|&s| i32::from(s)).sum();
    let broken = chain.iter().any(|&s| s != chain[0]);
    let spin = match sum.cmp(&0) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => -1,
        std::cmp::Ordering::Equal => {
            if rng.gen::<bool>() {
                1
            } else {
                -1
            }
        }
    };
    (spin, broken)
}

/// Decodes every chain by majority vote and scores the logical state.
pub fn majority_vote_decode(
    raw: &RawSample,
    model: &EmbeddedIsing,
    logical: &IsingModel,
    rng: &mut StreamRng,
) -> Result<LogicalSample> {
    if raw.spins.len() != model.num_qubits() {
        return Err(Error::LengthMismatch {
            expected: model.num_qubits(),
            actual: raw.spins.len(),
        });
    }
    let mut spins = Vec::with_capacity(model.chains_local.len());
    let mut broken_chains = Vec::new();
    let mut members = Vec::new();
    for (i, chain) in model.chains_local.iter().enumerate() {
        members.clear();
        members.extend(chain.iter().map(|&q| raw.spins[q]));
        let (s, broken) = majority_vote(&members, rng);
        spins.push(s);
        if broken {
            broken_chains.push(i);
        }
    }
    let energy = logical.energy(&spins)?;
    Ok(LogicalSample {
        spins,
        energy,
        broken_chains,
    })
}

/// Decodes a batch; sample `k` settles ties from [`rng::substream`]`(seed, k)`.
pub fn decode_all(
    raw: &[RawSample],
    model: &EmbeddedIsing,
    logical: &IsingModel,
    seed: u64,
) -> Result<Vec<LogicalSample>> {
    raw.iter()
        .enumerate()
        .map(|(k, r)| majority_vote_decode(r, model, logical, &mut rng::substream(seed, k as u64)))
        .collect()
}
