//! Portfolio objective, its QUBO form and the equivalent classical Ising model.
//!
//! Binary variable `i = u * w + k` (0-based asset `u`, slice `k`) carries the
//! expansion weight `2^k`, so asset `u` buys `z_u = sum_k 2^k x_{u*w+k}` units
//! of size `p_w * b`. The objective to maximize is
//!
//! ```text
//! θ1 Σ_i r_i x_i − θ2 (Σ_i a_i x_i − b)² − θ3 Σ_{i,j} c_ij x_i x_j
//! ```
//!
//! with `r_i = 2^k r_u`, `a_i = 2^k p_w b` and `c_ij = 2^k 2^k' c_uv`. The QUBO
//! is its negation expanded with `x² = x`; the Ising model follows from
//! `s = 2x − 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance_gen::ProblemInstance;
use crate::io::Real17;

/// `x_i ∈ {0,1}` for each logical variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinaryAssignment(pub Vec<u8>);

impl BinaryAssignment {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    /// Bit `i` of `mask` becomes `x_i`.
    pub fn from_mask(mask: u64, n: usize) -> Self {
        Self((0..n).map(|i| (mask >> i & 1) as u8).collect())
    }

    pub fn to_mask(&self) -> u64 {
        self.0
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &b)| acc | (u64::from(b & 1) << i))
    }

    pub fn to_spins(&self) -> Vec<i8> {
        self.0.iter().map(|&b| if b == 1 { 1 } else { -1 }).collect()
    }

    pub fn from_spins(spins: &[i8]) -> Self {
        Self(spins.iter().map(|&s| u8::from(s > 0)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A model whose energy can be evaluated on every basis state.
pub trait EnergyModel: Sync {
    fn num_vars(&self) -> usize;
    /// Energy of the state whose variable `i` is set iff bit `i` of `mask` is.
    fn energy_mask(&self, mask: u64) -> f64;
}

/// `Σ q_i x_i + Σ_{i<j} Q_ij x_i x_j + γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Qubo {
    n: usize,
    pub linear: Vec<f64>,
    /// Dense row-major storage; only entries with `i < j` are used.
    quadratic: Vec<f64>,
    pub offset: f64,
}

impl Qubo {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            linear: vec![0.0; n],
            quadratic: vec![0.0; n * n],
            offset: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn quadratic(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.quadratic[i * self.n + j],
            std::cmp::Ordering::Greater => self.quadratic[j * self.n + i],
            std::cmp::Ordering::Equal => 0.0,
        }
    }

    /// Adds `value` to the pair coefficient; diagonal entries fold into the linear term.
    pub fn add_quadratic(&mut self, i: usize, j: usize, value: f64) {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.quadratic[i * self.n + j] += value,
            std::cmp::Ordering::Greater => self.quadratic[j * self.n + i] += value,
            std::cmp::Ordering::Equal => self.linear[i] += value,
        }
    }

    fn energy_with(&self, bit: impl Fn(usize) -> bool) -> f64 {
        let mut e = 0.0;
        for i in 0..self.n {
            if !bit(i) {
                continue;
            }
            e += self.linear[i];
            let row = &self.quadratic[i * self.n..(i + 1) * self.n];
            for (j, &q) in row.iter().enumerate().skip(i + 1) {
                if bit(j) {
                    e += q;
                }
            }
        }
        e + self.offset
    }

    pub fn energy(&self, x: &BinaryAssignment) -> Result<f64> {
        check_len(self.n, x.len())?;
        Ok(self.energy_with(|i| x.0[i] == 1))
    }
}

impl EnergyModel for Qubo {
    fn num_vars(&self) -> usize {
        self.n
    }

    fn energy_mask(&self, mask: u64) -> f64 {
        self.energy_with(|i| mask >> i & 1 == 1)
    }
}

/// `Σ h_i s_i + Σ_{i<j} J_ij s_i s_j + β` over spins `s_i ∈ {−1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingModel {
    n: usize,
    pub h: Vec<f64>,
    /// Dense row-major storage; only entries with `i < j` are used.
    couplings: Vec<f64>,
    pub offset: f64,
}

impl IsingModel {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            h: vec![0.0; n],
            couplings: vec![0.0; n * n],
            offset: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.couplings[i * self.n + j],
            std::cmp::Ordering::Greater => self.couplings[j * self.n + i],
            std::cmp::Ordering::Equal => 0.0,
        }
    }

    /// Sets the coupling of an unordered pair. Self-couplings are rejected.
    pub fn set_coupling(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        if i == j {
            return Err(Error::Parameter(format!("self-coupling on spin {i}")));
        }
        if i >= self.n || j >= self.n {
            return Err(Error::OutOfRange {
                index: i.max(j),
                len: self.n,
            });
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.couplings[a * self.n + b] = value;
        Ok(())
    }

    /// Nonzero couplings as `(i, j, J_ij)` with `i < j`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                let v = self.couplings[i * self.n + j];
                if v != 0.0 {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    pub fn max_abs_coupling(&self) -> f64 {
        self.edges().iter().fold(0.0, |m, e| m.max(e.2.abs()))
    }

    fn energy_with(&self, spin: impl Fn(usize) -> f64) -> f64 {
        let mut e = 0.0;
        for i in 0..self.n {
            let si = spin(i);
            e += self.h[i] * si;
            let row = &self.couplings[i * self.n..(i + 1) * self.n];
            for (j, &c) in row.iter().enumerate().skip(i + 1) {
                e += c * (si * spin(j));
            }
        }
        e + self.offset
    }

    pub fn energy(&self, spins: &[i8]) -> Result<f64> {
        check_len(self.n, spins.len())?;
        Ok(self.energy_with(|i| f64::from(spins[i])))
    }
}

impl EnergyModel for IsingModel {
    fn num_vars(&self) -> usize {
        self.n
    }

    fn energy_mask(&self, mask: u64) -> f64 {
        self.energy_with(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 })
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, actual })
    }
}

/// Expansion weight `2^k` of variable `i`.
fn slice_weight(inst: &ProblemInstance, i: usize) -> f64 {
    f64::from(1u32 << (i % inst.w))
}

/// Direct term-by-term value of the (maximized) portfolio objective.
pub fn objective_value(inst: &ProblemInstance, x: &BinaryAssignment) -> Result<f64> {
    let n = inst.n();
    check_len(n, x.len())?;
    let t = inst.theta;
    let mut returns = 0.0;
    let mut spend = 0.0;
    for i in 0..n {
        if x.0[i] == 1 {
            let wk = slice_weight(inst, i);
            returns += wk * inst.returns[i / inst.w];
            spend += wk * inst.b * inst.p_w;
        }
    }
    let mut risk = 0.0;
    for i in 0..n {
        if x.0[i] == 0 {
            continue;
        }
        for j in 0..n {
            if x.0[j] == 1 {
                risk += slice_weight(inst, i)
                    * slice_weight(inst, j)
                    * inst.covariance[i / inst.w][j / inst.w];
            }
        }
    }
    let gap = spend - inst.b;
    Ok(t.returns * returns - t.budget * gap * gap - t.risk * risk)
}

/// QUBO whose energy is the negated objective.
pub fn build_qubo(inst: &ProblemInstance) -> Qubo {
    let n = inst.n();
    let t = inst.theta;
    let b = inst.b;
    let mut q = Qubo::zeros(n);
    let unit = |i: usize| slice_weight(inst, i) * inst.p_w * b;
    let cov = |i: usize, j: usize| {
        slice_weight(inst, i) * slice_weight(inst, j) * inst.covariance[i / inst.w][j / inst.w]
    };
    for i in 0..n {
        let a = unit(i);
        let r = slice_weight(inst, i) * inst.returns[i / inst.w];
        // −θ1 r_i, then θ2 (a_i² − 2 b a_i) from the squared budget gap, then θ3 c_ii.
        q.linear[i] = -t.returns * r + t.budget * (a * a - 2.0 * b * a) + t.risk * cov(i, i);
        for j in i + 1..n {
            let value = 2.0 * t.budget * a * unit(j) + t.risk * (cov(i, j) + cov(j, i));
            q.add_quadratic(i, j, value);
        }
    }
    q.offset = t.budget * b * b;
    q
}

/// Substitutes `x = (s + 1) / 2`.
pub fn qubo_to_ising(q: &Qubo) -> IsingModel {
    let n = q.n();
    let mut ising = IsingModel::zeros(n);
    let mut quad_sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let qij = q.quadratic(i, j);
            if qij != 0.0 {
                ising.couplings[i * n + j] = qij / 4.0;
                quad_sum += qij;
            }
        }
    }
    for i in 0..n {
        let field: f64 = (0..n).filter(|&j| j != i).map(|j| ising.coupling(i, j)).sum();
        ising.h[i] = q.linear[i] / 2.0 + field;
    }
    ising.offset = quad_sum / 4.0 + q.linear.iter().sum::<f64>() / 2.0 + q.offset;
    ising
}

/// Units bought per asset, `z_u = Σ_k 2^k x_{u*w+k}`.
pub fn decode_allocation(x: &BinaryAssignment, inst: &ProblemInstance) -> Result<Vec<u64>> {
    check_len(inst.n(), x.len())?;
    Ok(x.0
        .chunks(inst.w)
        .map(|bits| {
            bits.iter()
                .enumerate()
                .map(|(k, &bit)| u64::from(bit) << k)
                .sum()
        })
        .collect())
}

/// Budget spent by an allocation, `Σ_u p_w b z_u`.
pub fn budget_spent(z: &[u64], inst: &ProblemInstance) -> f64 {
    z.iter().map(|&zu| inst.p_w * inst.b * zu as f64).sum()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuboFile {
    kind: String,
    n: usize,
    linear: Vec<(usize, f64)>,
    quadratic: Vec<(usize, usize, f64)>,
    offset: f64,
}

#[derive(Serialize)]
struct QuboFileOut {
    kind: &'static str,
    n: usize,
    linear: Vec<(usize, Real17)>,
    quadratic: Vec<(usize, usize, Real17)>,
    offset: Real17,
}

impl Qubo {
    /// JSON with 0-based index lists `[i, q_i]`, `[i, j, Q_ij]` and the offset.
    pub fn to_json(&self) -> Result<String> {
        let mut quadratic = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                let v = self.quadratic(i, j);
                if v != 0.0 {
                    quadratic.push((i, j, Real17(v)));
                }
            }
        }
        let out = QuboFileOut {
            kind: "qubo",
            n: self.n,
            linear: self.linear.iter().enumerate().map(|(i, &v)| (i, Real17(v))).collect(),
            quadratic,
            offset: Real17(self.offset),
        };
        Ok(serde_json::to_string_pretty(&out)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: QuboFile = serde_json::from_str(text)?;
        if f.kind != "qubo" {
            return Err(Error::Parse(format!("expected kind \"qubo\", got {:?}", f.kind)));
        }
        let mut q = Qubo::zeros(f.n);
        for (i, v) in f.linear {
            *q.linear.get_mut(i).ok_or(Error::OutOfRange { index: i, len: f.n })? += v;
        }
        for (i, j, v) in f.quadratic {
            if i >= f.n || j >= f.n {
                return Err(Error::OutOfRange { index: i.max(j), len: f.n });
            }
            q.add_quadratic(i, j, v);
        }
        q.offset = f.offset;
        Ok(q)
    }
}

impl IsingModel {
    /// JSON with 0-based index lists `[i, h_i]`, `[i, j, J_ij]` and the offset.
    pub fn to_json(&self) -> Result<String> {
        let out = QuboFileOut {
            kind: "ising",
            n: self.n,
            linear: self.h.iter().enumerate().map(|(i, &v)| (i, Real17(v))).collect(),
            quadratic: self.edges().into_iter().map(|(i, j, v)| (i, j, Real17(v))).collect(),
            offset: Real17(self.offset),
        };
        Ok(serde_json::to_string_pretty(&out)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: QuboFile = serde_json::from_str(text)?;
        if f.kind != "ising" {
            return Err(Error::Parse(format!("expected kind \"ising\", got {:?}", f.kind)));
        }
        let mut m = IsingModel::zeros(f.n);
        for (i, v) in f.linear {
            *m.h.get_mut(i).ok_or(Error::OutOfRange { index: i, len: f.n })? = v;
        }
        for (i, j, v) in f.quadratic {
            m.set_coupling(i, j, v)?;
        }
        m.offset = f.offset;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance_gen::{generate_instance, PriceSeries, Theta, DEFAULT_THETA};

    fn tiny(m: usize, w: usize, b: f64, seed: u64) -> ProblemInstance {
        generate_instance(m, w, b, DEFAULT_THETA, seed).unwrap()
    }

    #[test]
    fn all_zero_objective_is_budget_penalty() {
        let inst = tiny(2, 3, 1.0, 1);
        let zero = BinaryAssignment::zeros(inst.n());
        assert_eq!(objective_value(&inst, &zero).unwrap(), -0.5);
        let inst = tiny(2, 2, 3.0, 1);
        let zero = BinaryAssignment::zeros(inst.n());
        assert_eq!(objective_value(&inst, &zero).unwrap(), -0.5 * 9.0);
        assert_eq!(build_qubo(&inst).energy(&zero).unwrap(), 0.5 * 9.0);
    }

    #[test]
    fn two_asset_single_slice_by_hand() {
        // m=2, w=1, b=1: p_w = 1, bits weigh 1.
        let inst = ProblemInstance::from_prices(
            1,
            1.0,
            Theta::from_array([0.3, 0.5, 0.2]),
            0,
            vec![
                PriceSeries { asset_id: 0, prices: vec![1.0, 3.0] },
                PriceSeries { asset_id: 1, prices: vec![2.0, 4.0] },
            ],
        )
        .unwrap();
        // r = (2, 3); cov = [[2, 2], [2, 2]].
        assert_eq!(inst.returns, vec![2.0, 3.0]);
        assert_eq!(inst.covariance, vec![vec![2.0, 2.0], vec![2.0, 2.0]]);
        let expect = [
            ([0, 0], -0.5),
            ([1, 0], 0.3 * 2.0 - 0.0 - 0.2 * 2.0),
            ([0, 1], 0.3 * 3.0 - 0.0 - 0.2 * 2.0),
            ([1, 1], 0.3 * 5.0 - 0.5 * 1.0 - 0.2 * 8.0),
        ];
        let q = build_qubo(&inst);
        for (bits, want) in expect {
            let x = BinaryAssignment(bits.to_vec());
            let got = objective_value(&inst, &x).unwrap();
            assert!((got - want).abs() < 1e-12, "{bits:?}: {got} vs {want}");
            assert!((q.energy(&x).unwrap() + want).abs() < 1e-12);
        }
    }

    #[test]
    fn single_bit_linear_coefficient() {
        let inst = tiny(1, 1, 1.0, 3);
        let q = build_qubo(&inst);
        let t = inst.theta;
        let (b, p) = (inst.b, inst.p_w);
        let want = -t.returns * inst.returns[0] - 2.0 * t.budget * b * b * p
            + t.budget * b * b * p * p
            + t.risk * inst.covariance[0][0];
        assert!((q.linear[0] - want).abs() < 1e-12);
        assert_eq!(q.offset, t.budget * b * b);
    }

    #[test]
    fn qubo_matches_objective_exhaustively() {
        for (m, w, seed) in [(2, 2, 1), (3, 2, 2), (2, 4, 3), (4, 3, 4)] {
            let inst = tiny(m, w, 1.0, seed);
            let q = build_qubo(&inst);
            let ising = qubo_to_ising(&q);
            let n = inst.n();
            for mask in 0..1u64 << n {
                let x = BinaryAssignment::from_mask(mask, n);
                let obj = objective_value(&inst, &x).unwrap();
                let eq = q.energy(&x).unwrap();
                assert!((eq + obj).abs() <= 1e-9, "mask {mask}");
                let ei = ising.energy(&x.to_spins()).unwrap();
                assert!((ei - eq).abs() <= 1e-9);
                assert_eq!(ising.energy_mask(mask), ei);
                assert_eq!(q.energy_mask(mask), eq);
            }
        }
    }

    #[test]
    fn ising_conversion_examples() {
        let zero = Qubo::zeros(3);
        let mut zero_g = zero.clone();
        zero_g.offset = 2.5;
        let is = qubo_to_ising(&zero_g);
        assert!(is.h.iter().all(|&h| h == 0.0));
        assert!(is.edges().is_empty());
        assert_eq!(is.offset, 2.5);

        let mut one = Qubo::zeros(1);
        one.linear[0] = 2.0;
        let is = qubo_to_ising(&one);
        assert_eq!(is.h, vec![1.0]);
        assert_eq!(is.offset, 1.0);
        assert_eq!(is.energy(&[-1]).unwrap(), 0.0);
        assert_eq!(is.energy(&[1]).unwrap(), 2.0);
    }

    #[test]
    fn ising_offset_identity() {
        let q = build_qubo(&tiny(3, 3, 1.0, 8));
        let is = qubo_to_ising(&q);
        let n = q.n();
        let mut sq = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                sq += q.quadratic(i, j);
                assert!((is.coupling(i, j) - q.quadratic(i, j) / 4.0).abs() < 1e-15);
            }
        }
        let beta = sq / 4.0 + q.linear.iter().sum::<f64>() / 2.0 + q.offset;
        assert!((is.offset - beta).abs() < 1e-12);
    }

    #[test]
    fn allocation_decoding() {
        let inst = tiny(1, 4, 1.0, 1);
        let z = decode_allocation(&BinaryAssignment(vec![1, 0, 0, 0]), &inst).unwrap();
        assert_eq!(z, vec![1]);
        let z = decode_allocation(&BinaryAssignment(vec![0, 0, 0, 1]), &inst).unwrap();
        assert_eq!(z, vec![8]);
        let inst = tiny(2, 1, 2.0, 1);
        let z = decode_allocation(&BinaryAssignment(vec![1, 0]), &inst).unwrap();
        assert_eq!(z, vec![1, 0]);
        assert_eq!(budget_spent(&z, &inst), 2.0);
        assert!(decode_allocation(&BinaryAssignment(vec![1]), &inst).is_err());
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let inst = tiny(2, 2, 1.0, 1);
        assert!(objective_value(&inst, &BinaryAssignment::zeros(3)).is_err());
        assert!(build_qubo(&inst).energy(&BinaryAssignment::zeros(5)).is_err());
    }

    #[test]
    fn model_files_round_trip() {
        let q = build_qubo(&tiny(2, 3, 1.0, 5));
        let back = Qubo::from_json(&q.to_json().unwrap()).unwrap();
        assert_eq!(back, q);
        let is = qubo_to_ising(&q);
        let back = IsingModel::from_json(&is.to_json().unwrap()).unwrap();
        assert_eq!(back, is);
        assert!(IsingModel::from_json(&q.to_json().unwrap()).is_err());
    }

    #[test]
    fn self_coupling_rejected() {
        let mut m = IsingModel::zeros(2);
        assert!(m.set_coupling(1, 1, 1.0).is_err());
        assert!(m.set_coupling(0, 2, 1.0).is_err());
        m.set_coupling(1, 0, 0.5).unwrap();
        assert_eq!(m.coupling(0, 1), 0.5);
    }
}
