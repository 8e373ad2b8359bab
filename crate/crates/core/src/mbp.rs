//! Modified multivariate Bernstein polynomials in density form: the lattice
//! index set `H0(k, m)`, the map from lattice cells to Dirichlet parameters
//! and evaluation of the resulting mixture of Dirichlet densities.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, OnceLock, RwLock};

use crate::error::{Error, Result};
use crate::simplex::{dirichlet_log_density, log_sum_exp, DirichletParam, SimplexPoint};

/// Largest polynomial degree the sampler will visit.
pub const K_MAX: u32 = 200;

/// Downward nudge applied before taking ceilings so exact lattice hits
/// (`k * theta` integral) resolve to the lower cell on every platform.
pub const CEIL_NUDGE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DegreeK(u32);

impl DegreeK {
    pub fn new(k: u32) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("polynomial degree must be >= 1".into()));
        }
        Ok(Self(k))
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

/// `H0(k, m) = { j in {1..k}^m : sum(j) <= k + m - 1 }` in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    k: DegreeK,
    m: usize,
    indices: Vec<Vec<u32>>,
}

impl IndexSet {
    pub fn k(&self) -> DegreeK {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: &[u32]) -> bool {
        in_h0(self.k.get(), self.m, j)
    }
}

fn in_h0(k: u32, m: usize, j: &[u32]) -> bool {
    j.len() == m
        && j.iter().all(|&v| (1..=k).contains(&v))
        && j.iter().map(|&v| v as u64).sum::<u64>() <= (k as u64) + (m as u64) - 1
}

pub fn enumerate_h0(k: DegreeK, m: usize) -> Result<IndexSet> {
    if m == 0 {
        return Err(Error::Domain("simplex dimension must be >= 1".into()));
    }
    let budget = k.get() + m as u32 - 1;
    let mut indices = Vec::new();
    let mut current = Vec::with_capacity(m);
    fill(k.get(), m, budget, &mut current, &mut indices);
    Ok(IndexSet { k, m, indices })
}

fn fill(k: u32, m: usize, budget: u32, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if current.len() == m {
        out.push(current.clone());
        return;
    }
    // every remaining coordinate needs at least 1
    let remaining_after = (m - current.len() - 1) as u32;
    let used: u32 = current.iter().sum();
    let upper = k.min(budget.saturating_sub(used + remaining_after));
    for v in 1..=upper {
        current.push(v);
        fill(k, m, budget, current, out);
        current.pop();
    }
}

type Cache = RwLock<HashMap<(u32, usize), Arc<IndexSet>>>;

/// Shared, lazily filled cache of index sets keyed by `(k, m)`.
pub fn h0_cached(k: DegreeK, m: usize) -> Result<Arc<IndexSet>> {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(set) = cache.read().expect("h0 cache poisoned").get(&(k.get(), m)) {
        return Ok(Arc::clone(set));
    }
    let set = Arc::new(enumerate_h0(k, m)?);
    let mut guard = cache.write().expect("h0 cache poisoned");
    Ok(Arc::clone(guard.entry((k.get(), m)).or_insert(set)))
}

/// Lattice cell index of a single coordinate, `max(1, ceil(k * theta))`.
#[inline]
pub fn ceil_coord(k: u32, theta: f64) -> u32 {
    let c = (k as f64 * theta - CEIL_NUDGE).ceil();
    if c < 1.0 {
        1
    } else {
        c as u32
    }
}

/// `(ceil(k theta_1), ..., ceil(k theta_m))` for an interior atom.
pub fn ceil_index(k: DegreeK, theta: &SimplexPoint) -> Result<Vec<u32>> {
    let total: f64 = theta.coords().iter().sum();
    if theta.coords().iter().any(|&t| t <= 0.0) || total >= 1.0 {
        return Err(Error::Domain(format!(
            "atom must be strictly interior: {:?}",
            theta.coords()
        )));
    }
    Ok(theta.coords().iter().map(|&t| ceil_coord(k.get(), t)).collect())
}

/// `alpha(k, j) = (j, k + m - |j|_1)`.
pub fn alpha_of(k: DegreeK, j: &[u32]) -> Result<DirichletParam> {
    let m = j.len();
    if !in_h0(k.get(), m, j) {
        return Err(Error::Domain(format!("index {j:?} is not in H0(k={}, m={m})", k.get())));
    }
    let used: u32 = j.iter().sum();
    let mut alpha: Vec<f64> = j.iter().map(|&v| v as f64).collect();
    alpha.push((k.get() + m as u32 - used) as f64);
    DirichletParam::new(alpha)
}

/// Mixture weights keyed by lattice index.
pub type LatticeWeights = BTreeMap<Vec<u32>, f64>;

/// `ln sum_j W(j) dir(y | alpha(k, j))`.
pub fn mbp_mixture_log_density(y: &SimplexPoint, k: DegreeK, weights: &LatticeWeights) -> Result<f64> {
    let total: f64 = weights.values().sum();
    if (total - 1.0).abs() > 1e-6 || weights.values().any(|w| *w < 0.0) {
        return Err(Error::WeightNormalization(total));
    }
    let mut terms = Vec::with_capacity(weights.len());
    for (j, &w) in weights {
        let alpha = alpha_of(k, j)?;
        if w > 0.0 {
            terms.push(w.ln() + dirichlet_log_density(y, &alpha)?);
        }
    }
    Ok(log_sum_exp(&terms))
}
