//! Simplex geometry, log-gamma based probability kernels and lattice
//! quadrature on the two-dimensional simplex.
//!
//! A point of the `m`-simplex is stored through its `m` free coordinates;
//! the implicit last coordinate is `1 - sum(y)`.

use crate::error::{Error, Result};
use statrs::function::gamma::ln_gamma;

/// Absolute slack allowed on `sum(y) <= 1`.
pub const SUM_TOLERANCE: f64 = 1e-12;
/// A point is interior when every coordinate, including the implicit one,
/// is at least this large.
pub const INTERIOR_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    coords: Vec<f64>,
}

impl SimplexPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Domain("simplex point needs m >= 1 coordinates".into()));
        }
        if coords.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Domain(format!("coordinates must be finite and >= 0: {coords:?}")));
        }
        let total: f64 = coords.iter().sum();
        if total > 1.0 + SUM_TOLERANCE {
            return Err(Error::Domain(format!("coordinates sum to {total} > 1")));
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// The implicit coordinate `1 - sum(y)`, clamped at zero.
    pub fn last(&self) -> f64 {
        (1.0 - self.coords.iter().sum::<f64>()).max(0.0)
    }

    /// All `m + 1` parts of the composition.
    pub fn full(&self) -> Vec<f64> {
        let mut parts = self.coords.clone();
        parts.push(self.last());
        parts
    }

    pub fn is_interior(&self) -> bool {
        self.coords.iter().all(|&c| c >= INTERIOR_TOLERANCE) && self.last() >= INTERIOR_TOLERANCE
    }

    /// Natural logs of all `m + 1` parts; zero parts map to `-inf`.
    pub fn log_parts(&self) -> Vec<f64> {
        self.full().into_iter().map(f64::ln).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParam {
    alpha: Vec<f64>,
}

impl DirichletParam {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::Domain("a Dirichlet parameter needs at least two components".into()));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(Error::Domain(format!("Dirichlet parameters must be > 0: {alpha:?}")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Dimension `m` of the simplex the distribution lives on.
    pub fn dim(&self) -> usize {
        self.alpha.len() - 1
    }
}

/// Log density of `Dir(alpha)` with respect to Lebesgue measure on the free
/// coordinates. A zero part paired with a unit exponent contributes nothing;
/// paired with an exponent above one the density is zero and `-inf` is
/// returned.
pub fn dirichlet_log_density(y: &SimplexPoint, a: &DirichletParam) -> Result<f64> {
    if y.dim() != a.dim() {
        return Err(Error::Domain(format!(
            "point has m={} but Dirichlet has m={}",
            y.dim(),
            a.dim()
        )));
    }
    let total: f64 = a.alpha.iter().sum();
    let mut log_density = ln_gamma(total);
    for (&part, &alpha) in y.full().iter().zip(&a.alpha) {
        log_density -= ln_gamma(alpha);
        if alpha == 1.0 {
            continue;
        }
        if part == 0.0 {
            if alpha > 1.0 {
                return Ok(f64::NEG_INFINITY);
            }
            return Err(Error::Domain(format!(
                "density is unbounded at a zero part with exponent {}",
                alpha - 1.0
            )));
        }
        log_density += (alpha - 1.0) * part.ln();
    }
    Ok(log_density)
}

/// `ln(n!)`.
pub fn ln_factorial(n: u32) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// Log pmf of `Mult(j | n, y)` where `j` lists the first `m` counts and the
/// implicit last count is `n - sum(j)`.
pub fn multinomial_log_pmf(j: &[u32], n: u32, y: &SimplexPoint) -> Result<f64> {
    if j.len() != y.dim() {
        return Err(Error::Domain(format!(
            "count vector has {} entries, point has m={}",
            j.len(),
            y.dim()
        )));
    }
    let used: u32 = j.iter().sum();
    if used > n {
        return Err(Error::Domain(format!("counts sum to {used} > n = {n}")));
    }
    let mut counts = j.to_vec();
    counts.push(n - used);
    let mut log_pmf = ln_factorial(n);
    for (&count, &prob) in counts.iter().zip(y.full().iter()) {
        log_pmf -= ln_factorial(count);
        if count > 0 {
            log_pmf += count as f64 * prob.ln();
        }
    }
    Ok(log_pmf)
}

/// `ln(sum(exp(values)))`, returning `-inf` for an empty or all `-inf`
/// input. A single finite value is returned unchanged.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `ln Gamma(n)` for small positive integers, tabulated once. Lattice
/// Dirichlet parameters are integers bounded by `k_max + m`.
#[derive(Debug, Clone)]
pub struct LnGammaTable {
    values: Vec<f64>,
}

impl LnGammaTable {
    pub fn new(max_arg: u32) -> Self {
        let values = (0..=max_arg)
            .map(|n| if n == 0 { f64::INFINITY } else { ln_gamma(n as f64) })
            .collect();
        Self { values }
    }

    #[inline]
    pub fn get(&self, n: u32) -> f64 {
        self.values[n as usize]
    }

    pub fn max_arg(&self) -> u32 {
        (self.values.len() - 1) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    /// `{(i/K, j/K) : i, j >= 1, i + j <= K - 1}`, every point weighted `h^2`.
    Interior,
    /// Centroids of the `K^2` triangles cut out by the lattice lines
    /// `y1 = i/K`, `y2 = j/K`, `y1 + y2 = s/K`: `((i + 1/3)/K, (j + 1/3)/K)`
    /// for `i + j <= K - 1` and `((i + 2/3)/K, (j + 2/3)/K)` for
    /// `i + j <= K - 2`, each weighted `h^2 / 2`. Used for quadrature; it
    /// integrates constants exactly and never touches the boundary.
    Centroid,
}

/// A regular triangular lattice on the two-dimensional simplex with spacing
/// `h = 1/K`. Points are ordered by `i` then `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexGrid {
    kind: GridKind,
    divisions: u32,
    points: Vec<SimplexPoint>,
    weights: Vec<f64>,
}

impl SimplexGrid {
    pub fn interior(spacing: f64) -> Result<Self> {
        Self::build(GridKind::Interior, spacing)
    }

    pub fn centroid(spacing: f64) -> Result<Self> {
        Self::build(GridKind::Centroid, spacing)
    }

    pub fn build(kind: GridKind, spacing: f64) -> Result<Self> {
        let divisions = lattice_divisions(spacing)?;
        let k = divisions;
        let kf = k as f64;
        let h = 1.0 / kf;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        match kind {
            GridKind::Interior => {
                for i in 1..k {
                    for j in 1..k.saturating_sub(i) {
                        points.push(SimplexPoint { coords: vec![i as f64 / kf, j as f64 / kf] });
                        weights.push(h * h);
                    }
                }
            }
            GridKind::Centroid => {
                for i in 0..k {
                    for j in 0..(k - i) {
                        let (fi, fj) = (i as f64, j as f64);
                        points.push(SimplexPoint {
                            coords: vec![(fi + 1.0 / 3.0) / kf, (fj + 1.0 / 3.0) / kf],
                        });
                        weights.push(0.5 * h * h);
                        if i + j + 2 <= k {
                            points.push(SimplexPoint {
                                coords: vec![(fi + 2.0 / 3.0) / kf, (fj + 2.0 / 3.0) / kf],
                            });
                            weights.push(0.5 * h * h);
                        }
                    }
                }
            }
        }
        Ok(Self { kind, divisions, points, weights })
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.divisions as f64
    }

    pub fn divisions(&self) -> u32 {
        self.divisions
    }

    pub fn points(&self) -> &[SimplexPoint] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn lattice_divisions(spacing: f64) -> Result<u32> {
    if !(spacing > 0.0 && spacing <= 0.5) {
        return Err(Error::Domain(format!("grid spacing {spacing} not in (0, 0.5]")));
    }
    let k = (1.0 / spacing).round();
    if (k * spacing - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("grid spacing {spacing} does not divide 1")));
    }
    Ok(k as u32)
}

/// Weighted lattice sum `sum_i g(y_i) w_i`.
pub fn simplex_quadrature<F>(mut g: F, grid: &SimplexGrid) -> f64
where
    F: FnMut(&SimplexPoint) -> f64,
{
    grid.points.iter().zip(&grid.weights).map(|(p, w)| g(p) * w).sum()
}
