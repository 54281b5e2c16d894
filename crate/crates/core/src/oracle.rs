//! Brute-force ground truth: complete spectra, excited states, energy
//! histograms and the count of budget-exact allocations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_bigint::BigUint;
use rayon::prelude::*;

use crate::error::{param, Error, Result};
use crate::formulation::{BinaryAssignment, EnergyModel};
use crate::io;

/// Largest `n` accepted by [`full_spectrum`].
pub const MAX_SPECTRUM_VARS: usize = 30;

/// Energies are considered equal within this tolerance when deciding
/// degeneracy of the ground level.
pub const ENERGY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumEntry {
    /// Bit `i` is variable `i` (`x_i = 1`, or spin `+1`).
    pub mask: u64,
    pub energy: f64,
}

/// Every basis state of a model sorted by ascending energy, ties broken by
/// the lexicographic order of the bitstring `x_0 x_1 … x_{n-1}`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub n: usize,
    pub entries: Vec<SpectrumEntry>,
}

fn lex_key(mask: u64, n: usize) -> u64 {
    if n == 0 {
        0
    } else {
        mask.reverse_bits() >> (64 - n)
    }
}

/// Evaluates all `2^n` states.
pub fn full_spectrum<M: EnergyModel + ?Sized>(model: &M) -> Result<Spectrum> {
    let n = model.num_vars();
    if n > MAX_SPECTRUM_VARS {
        return Err(Error::Capacity {
            what: "brute-force spectrum",
            n,
            limit: MAX_SPECTRUM_VARS,
        });
    }
    let mut entries: Vec<SpectrumEntry> = (0..1u64 << n)
        .into_par_iter()
        .map(|mask| SpectrumEntry {
            mask,
            energy: model.energy_mask(mask),
        })
        .collect();
    entries.par_sort_unstable_by(|a, b| {
        a.energy
            .total_cmp(&b.energy)
            .then_with(|| lex_key(a.mask, n).cmp(&lex_key(b.mask, n)))
    });
    Ok(Spectrum { n, entries })
}

impl Spectrum {
    pub fn ground(&self) -> SpectrumEntry {
        self.entries[0]
    }

    pub fn ground_energy(&self) -> f64 {
        self.entries[0].energy
    }

    /// The `k`-th entry of the sorted list.
    pub fn kth_excited(&self, k: usize) -> Result<SpectrumEntry> {
        self.entries.get(k).copied().ok_or(Error::OutOfRange {
            index: k,
            len: self.entries.len(),
        })
    }

    /// Lowest entry whose energy lies strictly above the ground level
    /// (more than [`ENERGY_TOLERANCE`] above it).
    pub fn first_excited(&self) -> Option<SpectrumEntry> {
        let e0 = self.ground_energy();
        self.entries
            .iter()
            .find(|e| e.energy > e0 + ENERGY_TOLERANCE)
            .copied()
    }

    /// Number of states on the ground level.
    pub fn ground_degeneracy(&self) -> usize {
        let e0 = self.ground_energy();
        self.entries
            .iter()
            .take_while(|e| e.energy <= e0 + ENERGY_TOLERANCE)
            .count()
    }

    pub fn assignment(&self, k: usize) -> Result<BinaryAssignment> {
        Ok(BinaryAssignment::from_mask(self.kth_excited(k)?.mask, self.n))
    }

    pub fn energies(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.energy)
    }

    /// CSV with columns `rank,bitstring,energy`.
    pub fn to_csv(&self, header: &str) -> String {
        let mut out = String::with_capacity(header.len() + self.entries.len() * (self.n + 32));
        out.push_str(header);
        out.push_str("rank,bitstring,energy\n");
        for (rank, e) in self.entries.iter().enumerate() {
            let _ = writeln!(out, "{rank},{},{}", io::bitstring(e.mask, self.n), io::fmt_real(e.energy));
        }
        out
    }
}

/// Counts of samples per energy bin; bin `j` covers `[origin + jΔ, origin + (j+1)Δ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyHistogram {
    pub delta: f64,
    pub origin: f64,
    pub counts: BTreeMap<i64, u64>,
}

impl EnergyHistogram {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn bin_lower_edge(&self, j: i64) -> f64 {
        self.origin + j as f64 * self.delta
    }

    /// CSV with columns `bin_lower_edge,count`, bins in ascending order.
    pub fn to_csv(&self, header: &str) -> String {
        let mut out = String::from(header);
        out.push_str("bin_lower_edge,count\n");
        for (&j, &c) in &self.counts {
            let _ = writeln!(out, "{},{c}", io::fmt_real(self.bin_lower_edge(j)));
        }
        out
    }
}

pub fn energy_histogram(energies: &[f64], delta: f64, origin: f64) -> Result<EnergyHistogram> {
    if !(delta > 0.0 && delta.is_finite()) {
        return param(format!("bin width must be positive, got {delta}"));
    }
    let mut counts = BTreeMap::new();
    for &e in energies {
        let j = ((e - origin) / delta).floor() as i64;
        *counts.entry(j).or_insert(0) += 1;
    }
    Ok(EnergyHistogram {
        delta,
        origin,
        counts,
    })
}

/// Histogram with `bins` equal bins spanning `[min, max]` of the data. The
/// maximum itself is placed in the last bin.
pub fn range_histogram(energies: &[f64], bins: usize) -> Result<EnergyHistogram> {
    if bins == 0 {
        return param("bin count must be positive");
    }
    let lo = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if energies.is_empty() {
        return Ok(EnergyHistogram {
            delta: 1.0,
            origin: 0.0,
            counts: BTreeMap::new(),
        });
    }
    let delta = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut h = energy_histogram(energies, delta, lo)?;
    let last = bins as i64 - 1;
    let overflow: u64 = h.counts.range(last + 1..).map(|(_, &c)| c).sum();
    if overflow > 0 {
        h.counts.retain(|&j, _| j <= last);
        *h.counts.entry(last).or_insert(0) += overflow;
    }
    Ok(h)
}

/// How the budget is partitioned when counting exact-budget allocations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BudgetPartitions {
    /// `2^w` partitions.
    #[default]
    PowerOfSlices,
    /// `2^(w-1)` partitions, i.e. units of size `p_w b`.
    SliceFraction,
}

impl BudgetPartitions {
    pub fn total(self, w: u32) -> Result<BigUint> {
        match self {
            Self::PowerOfSlices => Ok(BigUint::from(1u8) << w),
            Self::SliceFraction if w >= 1 => Ok(BigUint::from(1u8) << (w - 1)),
            Self::SliceFraction => param("w must be at least 1"),
        }
    }
}

/// Number of allocations `z ∈ ℕ^m` with `Σ z_u = 2^w`, i.e. `C(2^w + m − 1, m − 1)`.
pub fn count_budget_solutions(m: u32, w: u32) -> Result<BigUint> {
    count_budget_solutions_with(m, w, BudgetPartitions::default())
}

pub fn count_budget_solutions_with(m: u32, w: u32, partitions: BudgetPartitions) -> Result<BigUint> {
    if m == 0 || w == 0 {
        return param(format!("m and w must be at least 1 (got m={m}, w={w})"));
    }
    let p = partitions.total(w)?;
    // Running product of (P + a) / a stays an integer: after step a it equals C(P + a, a).
    let mut count = BigUint::from(1u8);
    for a in 1..m {
        count = count * (&p + BigUint::from(a)) / BigUint::from(a);
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulation::IsingModel;

    fn pair_model() -> IsingModel {
        let mut m = IsingModel::zeros(2);
        m.set_coupling(0, 1, 1.0).unwrap();
        m
    }

    #[test]
    fn two_spin_antiferromagnet() {
        let s = full_spectrum(&pair_model()).unwrap();
        let e: Vec<f64> = s.energies().collect();
        assert_eq!(e, vec![-1.0, -1.0, 1.0, 1.0]);
        // Ties in lexicographic order of the bitstring: "01" < "10".
        assert_eq!(io::bitstring(s.entries[0].mask, 2), "01");
        assert_eq!(io::bitstring(s.entries[1].mask, 2), "10");
        assert_eq!(s.first_excited().unwrap().energy, 1.0);
        assert_eq!(s.ground_degeneracy(), 2);
        assert_eq!(s.kth_excited(0).unwrap(), s.ground());
        assert!(s.kth_excited(4).is_err());
    }

    #[test]
    fn zero_model_is_flat() {
        let mut m = IsingModel::zeros(3);
        m.offset = 0.75;
        let s = full_spectrum(&m).unwrap();
        assert_eq!(s.entries.len(), 8);
        assert!(s.energies().all(|e| e == 0.75));
        assert!(s.first_excited().is_none());
    }

    #[test]
    fn capacity_guard() {
        let m = IsingModel::zeros(31);
        assert!(matches!(full_spectrum(&m), Err(Error::Capacity { .. })));
    }

    #[test]
    fn histogram_examples() {
        let h = energy_histogram(&[0.5, 1.5, 1.7], 1.0, 0.0).unwrap();
        assert_eq!(h.counts, BTreeMap::from([(0, 1), (1, 2)]));
        assert!(energy_histogram(&[], 1.0, 0.0).unwrap().counts.is_empty());
        assert!(energy_histogram(&[1.0], 0.0, 0.0).is_err());
        assert!(energy_histogram(&[1.0], -1.0, 0.0).is_err());
        // Half-open bins: an upper edge belongs to the next bin.
        let h = energy_histogram(&[1.0], 1.0, 0.0).unwrap();
        assert_eq!(h.counts, BTreeMap::from([(1, 1)]));
    }

    #[test]
    fn range_histogram_keeps_maximum() {
        let h = range_histogram(&[0.0, 0.25, 1.0], 4).unwrap();
        assert_eq!(h.total(), 3);
        assert_eq!(h.counts, BTreeMap::from([(0, 1), (1, 1), (3, 1)]));
    }

    #[test]
    fn budget_count_special_cases() {
        for w in 1..8 {
            assert_eq!(count_budget_solutions(1, w).unwrap(), BigUint::from(1u8));
            assert_eq!(count_budget_solutions(2, w).unwrap(), BigUint::from((1u64 << w) + 1));
        }
        assert_eq!(count_budget_solutions(3, 2).unwrap(), BigUint::from(15u8));
        assert!(count_budget_solutions(0, 2).is_err());
        assert!(count_budget_solutions(2, 0).is_err());
    }

    #[test]
    fn budget_count_beyond_u64() {
        // C(2^40 + 9, 9) is far beyond 64 bits.
        let c = count_budget_solutions(10, 40).unwrap();
        assert!(c.bits() > 64);
        let mut expect = BigUint::from(1u8);
        let p = BigUint::from(1u64 << 40);
        for a in 1..10u32 {
            expect *= &p + BigUint::from(a);
        }
        let fact: BigUint = (1..10u32).map(BigUint::from).product();
        assert_eq!(c, expect / fact);
    }

    #[test]
    fn slice_fraction_partitions() {
        // 2^(w-1) = 4 partitions for w = 3, m = 2 -> 5 allocations.
        let c = count_budget_solutions_with(2, 3, BudgetPartitions::SliceFraction).unwrap();
        assert_eq!(c, BigUint::from(5u8));
    }

    #[test]
    fn csv_exports() {
        let s = full_spectrum(&pair_model()).unwrap();
        let csv = s.to_csv("# h\n");
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], "rank,bitstring,energy");
        assert_eq!(lines.len(), 6);
        assert!(lines[2].starts_with("0,01,-1.0"));
        let h = energy_histogram(&[0.5], 0.5, 0.0).unwrap();
        assert_eq!(h.to_csv(""), "bin_lower_edge,count\n5.0000000000000000e-1,1\n");
    }
}
