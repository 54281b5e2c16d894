//! Random Markowitz portfolio instances.
//!
//! Each asset's price history is a clamped multiplicative random walk: the
//! first raw price is uniform in `[b/10, b]`, every later price is the
//! previous one times a uniform factor in `[0.75, 1.25]`, clamped back into
//! `[b/10, b]`. The history is then divided by its final raw price, so the
//! purchase price of every asset is exactly `1`.
//!
//! Asset `u` of an instance with seed `s` draws from [`rng::substream`]`(s, u)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::io;
use crate::rng::{self, StreamRng};

/// Default number of historical price points per asset.
pub const DEFAULT_HISTORY_LEN: usize = 100;

/// Default Lagrange weights `(returns, budget, risk)`.
pub const DEFAULT_THETA: Theta = Theta {
    returns: 0.3,
    budget: 0.5,
    risk: 0.2,
};

/// Lagrange weights of the unconstrained objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub returns: f64,
    pub budget: f64,
    pub risk: f64,
}

impl Theta {
    pub fn as_array(&self) -> [f64; 3] {
        [self.returns, self.budget, self.risk]
    }

    pub fn from_array(t: [f64; 3]) -> Self {
        Self {
            returns: t[0],
            budget: t[1],
            risk: t[2],
        }
    }
}

impl Default for Theta {
    fn default() -> Self {
        DEFAULT_THETA
    }
}

/// Normalized price history of one asset.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub asset_id: usize,
    pub prices: Vec<f64>,
}

impl PriceSeries {
    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.prices.iter().sum::<f64>() / self.prices.len() as f64
    }
}

/// Budget fraction of one allocation unit, `1 / 2^(w-1)`.
pub fn slice_fraction(w: usize) -> f64 {
    0.5f64.powi(w as i32 - 1)
}

/// Raw (un-normalized) clamped random walk of `len` prices in `[b/10, b]`.
pub fn raw_price_walk(rng: &mut StreamRng, b: f64, len: usize) -> Result<Vec<f64>> {
    if len < 2 {
        return param(format!("history length must be at least 2, got {len}"));
    }
    if !(b > 0.0 && b.is_finite()) {
        return param(format!("budget must be positive and finite, got {b}"));
    }
    let (lo, hi) = (b / 10.0, b);
    let mut walk = Vec::with_capacity(len);
    let mut price = rng.gen_range(lo..=hi);
    walk.push(price);
    for _ in 1..len {
        price = (price * rng.gen_range(0.75..=1.25)).clamp(lo, hi);
        walk.push(price);
    }
    Ok(walk)
}

/// Generates one normalized price history.
pub fn generate_price_series(
    rng: &mut StreamRng,
    asset_id: usize,
    b: f64,
    len: usize,
) -> Result<PriceSeries> {
    let walk = raw_price_walk(rng, b, len)?;
    let last = walk[len - 1];
    Ok(PriceSeries {
        asset_id,
        prices: walk.iter().map(|&p| p / last).collect(),
    })
}

/// Expected return `p_w * mean(prices)`.
pub fn expected_return(series: &PriceSeries, p_w: f64) -> f64 {
    p_w * series.mean()
}

/// Sample covariance of two histories scaled by `p_w^2`.
pub fn covariance(u: &PriceSeries, v: &PriceSeries, p_w: f64) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    if u.len() < 2 {
        return param("covariance needs at least two price points");
    }
    let (mu, mv) = (u.mean(), v.mean());
    let sum: f64 = u
        .prices
        .iter()
        .zip(&v.prices)
        .map(|(a, b)| (a - mu) * (b - mv))
        .sum();
    Ok(p_w * p_w * sum / (u.len() - 1) as f64)
}

/// Parameters of a generated instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceParams {
    pub assets: usize,
    pub slices: usize,
    pub budget: f64,
    pub theta: Theta,
    pub history_len: usize,
    pub seed: u64,
}

impl InstanceParams {
    pub fn new(assets: usize, slices: usize, budget: f64, seed: u64) -> Self {
        Self {
            assets,
            slices,
            budget,
            theta: DEFAULT_THETA,
            history_len: DEFAULT_HISTORY_LEN,
            seed,
        }
    }
}

/// A portfolio selection problem: `m` assets, `w` binary slices per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub m: usize,
    pub w: usize,
    pub b: f64,
    pub theta: Theta,
    pub returns: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub price_data: Vec<PriceSeries>,
    pub seed: u64,
    pub p_w: f64,
}

impl ProblemInstance {
    /// Number of logical binary variables, `m * w`.
    pub fn n(&self) -> usize {
        self.m * self.w
    }

    pub fn history_len(&self) -> usize {
        self.price_data.first().map_or(0, PriceSeries::len)
    }

    /// Builds an instance from explicit price histories.
    pub fn from_prices(
        w: usize,
        b: f64,
        theta: Theta,
        seed: u64,
        price_data: Vec<PriceSeries>,
    ) -> Result<Self> {
        if w == 0 {
            return param("slice count w must be at least 1");
        }
        if price_data.is_empty() {
            return param("asset count m must be at least 1");
        }
        if !(b > 0.0 && b.is_finite()) {
            return param(format!("budget must be positive and finite, got {b}"));
        }
        let p_w = slice_fraction(w);
        let m = price_data.len();
        let returns = price_data.iter().map(|s| expected_return(s, p_w)).collect();
        let mut cov = vec![vec![0.0; m]; m];
        for u in 0..m {
            for v in u..m {
                let c = covariance(&price_data[u], &price_data[v], p_w)?;
                cov[u][v] = c;
                cov[v][u] = c;
            }
        }
        Ok(Self {
            m,
            w,
            b,
            theta,
            returns,
            covariance: cov,
            price_data,
            seed,
            p_w,
        })
    }
}

/// Generates an instance with default weights and history length.
pub fn generate_instance(m: usize, w: usize, b: f64, theta: Theta, seed: u64) -> Result<ProblemInstance> {
    generate_instance_with(&InstanceParams {
        theta,
        ..InstanceParams::new(m, w, b, seed)
    })
}

pub fn generate_instance_with(p: &InstanceParams) -> Result<ProblemInstance> {
    if p.assets == 0 {
        return param("asset count m must be at least 1");
    }
    if p.slices == 0 {
        return param("slice count w must be at least 1");
    }
    let series = (0..p.assets)
        .map(|u| {
            let mut rng = rng::substream(p.seed, u as u64);
            generate_price_series(&mut rng, u, p.budget, p.history_len)
        })
        .collect::<Result<Vec<_>>>()?;
    ProblemInstance::from_prices(p.slices, p.budget, p.theta, p.seed, series)
}

/// On-disk JSON layout of an instance.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub m: usize,
    pub w: usize,
    #[serde(serialize_with = "io::real17")]
    pub b: f64,
    #[serde(serialize_with = "io::vec_real17")]
    pub theta: Vec<f64>,
    pub seed: u64,
    #[serde(rename = "N_f")]
    pub n_f: usize,
    #[serde(serialize_with = "io::mat_real17")]
    pub prices: Vec<Vec<f64>>,
    #[serde(serialize_with = "io::vec_real17")]
    pub returns: Vec<f64>,
    #[serde(serialize_with = "io::mat_real17")]
    pub covariance: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header: Option<FileHeader>,
}

/// Provenance block embedded in JSON artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileHeader {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
}

impl FileHeader {
    pub fn new(config_hash: String, seeds: Vec<u64>) -> Self {
        Self {
            tool: io::TOOL_NAME.into(),
            version: io::TOOL_VERSION.into(),
            config_hash,
            seeds,
        }
    }
}

impl ProblemInstance {
    pub fn to_file(&self, header: Option<FileHeader>) -> InstanceFile {
        InstanceFile {
            m: self.m,
            w: self.w,
            b: self.b,
            theta: self.theta.as_array().to_vec(),
            seed: self.seed,
            n_f: self.history_len(),
            prices: self.price_data.iter().map(|s| s.prices.clone()).collect(),
            returns: self.returns.clone(),
            covariance: self.covariance.clone(),
            header,
        }
    }

    pub fn to_json(&self, header: Option<FileHeader>) -> Result<String> {
        let mut text = serde_json::to_string_pretty(&self.to_file(header))?;
        text.push('\n');
        Ok(text)
    }

    /// Parses an instance file. Returns and covariance are recomputed from the
    /// stored prices and must agree with the stored values.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        if file.theta.len() != 3 {
            return Err(Error::Parse(format!("theta must have 3 entries, got {}", file.theta.len())));
        }
        if file.prices.len() != file.m {
            return Err(Error::Parse(format!("expected {} price series, got {}", file.m, file.prices.len())));
        }
        if file.prices.iter().any(|p| p.len() != file.n_f) {
            return Err(Error::Parse(format!("every price series must have N_f = {} entries", file.n_f)));
        }
        let series = file
            .prices
            .into_iter()
            .enumerate()
            .map(|(asset_id, prices)| PriceSeries { asset_id, prices })
            .collect();
        let theta = Theta::from_array([file.theta[0], file.theta[1], file.theta[2]]);
        let inst = Self::from_prices(file.w, file.b, theta, file.seed, series)?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
        let returns_ok = file.returns.len() == inst.m
            && file.returns.iter().zip(&inst.returns).all(|(&a, &b)| close(a, b));
        let cov_ok = file.covariance.len() == inst.m
            && file.covariance.iter().zip(&inst.covariance).all(|(ra, rb)| {
                ra.len() == rb.len() && ra.iter().zip(rb).all(|(&a, &b)| close(a, b))
            });
        if !returns_ok || !cov_ok {
            return Err(Error::Parse(
                "stored returns/covariance disagree with the price data".into(),
            ));
        }
        Ok(inst)
    }
}
