//! Posterior predictive densities on grids and the fit criteria computed
//! from them or from the retained log-likelihood matrix.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LatticeKernel, ModelState};
use crate::simgen::{true_log_density, Scenario};
use crate::simplex::{log_sum_exp, simplex_quadrature, SimplexGrid};

/// Default response grid spacing.
pub const DEFAULT_Y_SPACING: f64 = 0.02;
/// Default number of covariate grid values; `j / 20` for `j = 1..19`
/// contains 0.25, 0.5 and 0.75.
pub const DEFAULT_X_GRID_SIZE: usize = 19;

/// `l` equispaced interior points `j / (l + 1)` of `(0, 1)`.
pub fn default_x_grid(l: usize) -> Vec<Vec<f64>> {
    (1..=l).map(|j| vec![j as f64 / (l + 1) as f64]).collect()
}

/// Density values on `x_grid x y_grid`, stored by covariate value.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    x_grid: Vec<Vec<f64>>,
    y_grid: SimplexGrid,
    values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(x_grid: Vec<Vec<f64>>, y_grid: SimplexGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != x_grid.len() * y_grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} x {} grid",
                values.len(),
                x_grid.len(),
                y_grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("density values must be finite and non-negative".into()));
        }
        Ok(Self { x_grid, y_grid, values })
    }

    pub fn x_grid(&self) -> &[Vec<f64>] {
        &self.x_grid
    }

    pub fn y_grid(&self) -> &SimplexGrid {
        &self.y_grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values at the `j`-th covariate value.
    pub fn slice(&self, j: usize) -> &[f64] {
        let m = self.y_grid.len();
        &self.values[j * m..(j + 1) * m]
    }

    /// Quadrature of the `j`-th slice over the simplex.
    pub fn slice_mass(&self, j: usize) -> f64 {
        let values = self.slice(j);
        let mut idx = 0;
        simplex_quadrature(
            |_| {
                let v = values[idx];
                idx += 1;
                v
            },
            &self.y_grid,
        )
    }

    fn check_matches(&self, other: &DensityGrid) -> Result<()> {
        if self.x_grid != other.x_grid {
            return Err(Error::GridMismatch("covariate grids differ".into()));
        }
        if self.y_grid != other.y_grid {
            return Err(Error::GridMismatch("response grids differ".into()));
        }
        Ok(())
    }

    /// Columns `x1..xp, y1..ym, density`, covariate-major.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let p = self.x_grid.first().map_or(0, Vec::len);
        let m = self.y_grid.points().first().map_or(2, |y| y.dim());
        let mut header: Vec<String> = (1..=p).map(|r| format!("x{r}")).collect();
        header.extend((1..=m).map(|l| format!("y{l}")));
        header.push("density".into());
        writer.write_record(&header)?;
        for (j, x) in self.x_grid.iter().enumerate() {
            for (y, v) in self.y_grid.points().iter().zip(self.slice(j)) {
                let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
                row.extend(y.coords().iter().map(|v| v.to_string()));
                row.push(v.to_string());
                writer.write_record(&row)?;
            }
        }
        writer.flush()?;
        Ok(())
    }

    /// Reads a grid written by [`DensityGrid::write_csv`]; the response
    /// points must be those of `y_grid` in order.
    pub fn read_csv<R: Read>(input: R, y_grid: SimplexGrid) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let header = reader.headers()?.clone();
        let p = header.iter().take_while(|h| h.starts_with('x')).count();
        let m = header.len().saturating_sub(p + 1);
        if header.get(header.len().wrapping_sub(1)) != Some("density") || m == 0 {
            return Err(Error::Data("density grid header must be x..., y..., density".into()));
        }
        let mut x_grid: Vec<Vec<f64>> = Vec::new();
        let mut values = Vec::new();
        let points = y_grid.points();
        for (r, record) in reader.records().enumerate() {
            let record = record?;
            let row: Vec<f64> = record
                .iter()
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Data(format!("grid row {}: bad value `{v}`", r + 1))))
                .collect::<Result<_>>()?;
            let i = r % points.len();
            if i == 0 {
                x_grid.push(row[..p].to_vec());
            } else if x_grid.last().map(Vec::as_slice) != Some(&row[..p]) {
                return Err(Error::GridMismatch(format!("grid row {}: covariate changes inside a slice", r + 1)));
            }
            let y = points[i].coords();
            if y.iter().zip(&row[p..p + m]).any(|(a, b)| (a - b).abs() > 1e-12) {
                return Err(Error::GridMismatch(format!("grid row {}: response point is not on the expected grid", r + 1)));
            }
            values.push(row[p + m]);
        }
        Self::new(x_grid, y_grid, values)
    }
}

/// Posterior predictive mean density: the average over `states` of each
/// state's conditional density. Stick weights are pooled by `(k, cell)`
/// before the lattice Dirichlet densities are evaluated.
pub fn predictive_density(states: &[ModelState], x_grid: &[Vec<f64>], y_grid: &SimplexGrid) -> Result<DensityGrid> {
    let first = states.first().ok_or_else(|| Error::Domain("no retained states".into()))?;
    let m = first.dims.m;
    if y_grid.points().iter().any(|y| y.dim() != m) {
        return Err(Error::GridMismatch(format!("response grid dimension differs from m={m}")));
    }
    if x_grid.iter().any(|x| x.len() != first.dims.p) {
        return Err(Error::GridMismatch(format!("covariate grid entries must have p={}", first.dims.p)));
    }
    let k_max = states.iter().map(|s| s.k).max().unwrap_or(1);
    let kernel = LatticeKernel::new(m, k_max);
    let ln_y: Vec<Vec<f64>> = y_grid.points().iter().map(|y| y.log_parts()).collect();
    let scale = 1.0 / states.len() as f64;

    let slices: Vec<Vec<f64>> = x_grid
        .par_iter()
        .map(|x| {
            let mut pooled: BTreeMap<(u32, Vec<u32>), f64> = BTreeMap::new();
            for state in states {
                for (j, w) in state.stick_weights(x).into_iter().enumerate() {
                    if w > 0.0 {
                        *pooled.entry((state.k, state.cell(j, x))).or_insert(0.0) += w * scale;
                    }
                }
            }
            let mut values = vec![0.0; ln_y.len()];
            for ((k, cell), w) in &pooled {
                for (v, ly) in values.iter_mut().zip(&ln_y) {
                    *v += w * kernel.ln_dir_cell(*k, cell, ly).exp();
                }
            }
            values
        })
        .collect();
    DensityGrid::new(x_grid.to_vec(), y_grid.clone(), slices.concat())
}

/// True scenario density on a univariate covariate grid.
pub fn true_density_grid(s: Scenario, x_grid: &[Vec<f64>], y_grid: &SimplexGrid) -> Result<DensityGrid> {
    let mut values = Vec::with_capacity(x_grid.len() * y_grid.len());
    for x in x_grid {
        if x.len() != 1 {
            return Err(Error::GridMismatch("scenario truths take a single covariate".into()));
        }
        for y in y_grid.points() {
            values.push(true_log_density(s, y, x[0])?.exp());
        }
    }
    DensityGrid::new(x_grid.to_vec(), y_grid.clone(), values)
}

/// Average absolute difference over all grid cells.
pub fn integrated_l1(est: &DensityGrid, truth: &DensityGrid) -> Result<f64> {
    est.check_matches(truth)?;
    let total: f64 = est.values.iter().zip(&truth.values).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / est.values.len() as f64)
}

/// Largest absolute difference over all grid cells.
pub fn l_infinity(est: &DensityGrid, truth: &DensityGrid) -> Result<f64> {
    est.check_matches(truth)?;
    Ok(est.values.iter().zip(&truth.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitCriteria {
    pub lpml: f64,
    pub neg_n_waic: f64,
    pub cpo: Vec<f64>,
    /// Retained draws left out because some observation had zero
    /// likelihood under them.
    pub excluded_draws: usize,
}

/// Rows of `loglik` that are usable: all columns must have at least one
/// finite entry, and rows containing `-inf` are dropped.
fn usable_rows(loglik: &[Vec<f64>]) -> Result<(Vec<&[f64]>, usize)> {
    let n = loglik.first().map_or(0, Vec::len);
    if loglik.is_empty() {
        return Err(Error::Domain("empty log-likelihood matrix".into()));
    }
    if loglik.iter().any(|row| row.len() != n) {
        return Err(Error::Domain("ragged log-likelihood matrix".into()));
    }
    for i in 0..n {
        if loglik.iter().all(|row| row[i] == f64::NEG_INFINITY) {
            return Err(Error::InfiniteLogLik(i));
        }
    }
    if loglik.iter().flatten().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Domain("log-likelihood matrix contains NaN or +inf".into()));
    }
    let rows: Vec<&[f64]> =
        loglik.iter().filter(|row| row.iter().all(|v| v.is_finite())).map(Vec::as_slice).collect();
    let excluded = loglik.len() - rows.len();
    if rows.is_empty() {
        return Err(Error::Domain("every retained draw has an observation with zero likelihood".into()));
    }
    Ok((rows, excluded))
}

/// LPML with `log CPO_i = log T - logsumexp_t(-l_ti)`. Returns the LPML, the
/// CPO vector and the number of excluded draws.
pub fn lpml(loglik: &[Vec<f64>]) -> Result<(f64, Vec<f64>, usize)> {
    let (rows, excluded) = usable_rows(loglik)?;
    let t = rows.len() as f64;
    let n = rows[0].len();
    let mut total = 0.0;
    let mut cpo = Vec::with_capacity(n);
    let mut column = vec![0.0; rows.len()];
    for i in 0..n {
        for (c, row) in column.iter_mut().zip(&rows) {
            *c = -row[i];
        }
        let log_cpo = t.ln() - log_sum_exp(&column);
        total += log_cpo;
        cpo.push(log_cpo.exp());
    }
    Ok((total, cpo, excluded))
}

/// `-n WAIC = sum_i log mean_t exp(l_ti) - sum_i var_t(l_ti)`, with the
/// sample variance over draws (zero for a single draw).
pub fn waic(loglik: &[Vec<f64>]) -> Result<f64> {
    let (rows, _) = usable_rows(loglik)?;
    let t = rows.len();
    let n = rows[0].len();
    let mut total = 0.0;
    let mut column = vec![0.0; t];
    for i in 0..n {
        for (c, row) in column.iter_mut().zip(&rows) {
            *c = row[i];
        }
        let lppd = log_sum_exp(&column) - (t as f64).ln();
        let penalty = if t > 1 {
            let mean = column.iter().sum::<f64>() / t as f64;
            column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1) as f64
        } else {
            0.0
        };
        total += lppd - penalty;
    }
    Ok(total)
}

pub fn fit_criteria(loglik: &[Vec<f64>]) -> Result<FitCriteria> {
    let (lpml, cpo, excluded_draws) = lpml(loglik)?;
    Ok(FitCriteria { lpml, neg_n_waic: waic(loglik)?, cpo, excluded_draws })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::conditional_log_density;
    use crate::simplex::{dirichlet_log_density, DirichletParam};
    use crate::testutil::random_state;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_grid() -> SimplexGrid {
        SimplexGrid::interior(0.05).unwrap()
    }

    #[test]
    fn default_x_grid_contains_quartiles() {
        let g = default_x_grid(DEFAULT_X_GRID_SIZE);
        assert_eq!(g.len(), 19);
        for q in [0.25, 0.5, 0.75] {
            assert!(g.iter().any(|x| x[0] == q));
        }
        assert!(g.iter().all(|x| x[0] > 0.0 && x[0] < 1.0));
    }

    #[test]
    fn single_state_reproduces_its_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let state = random_state(&mut rng, 6, 7, 1);
        let xs = default_x_grid(4);
        let grid = predictive_density(std::slice::from_ref(&state), &xs, &small_grid()).unwrap();
        for (j, x) in xs.iter().enumerate() {
            for (y, v) in small_grid().points().iter().zip(grid.slice(j)) {
                let want = conditional_log_density(y, x, &state).unwrap().exp();
                assert!((v - want).abs() <= 1e-12 * want.max(1.0), "{v} {want}");
            }
        }
    }

    #[test]
    fn two_states_average_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_state(&mut rng, 5, 4, 1);
        let b = random_state(&mut rng, 3, 9, 1);
        let xs = default_x_grid(3);
        let grid = predictive_density(&[a.clone(), b.clone()], &xs, &small_grid()).unwrap();
        for (j, x) in xs.iter().enumerate() {
            for (y, v) in small_grid().points().iter().zip(grid.slice(j)) {
                let fa = conditional_log_density(y, x, &a).unwrap().exp();
                let fb = conditional_log_density(y, x, &b).unwrap().exp();
                assert!((v - 0.5 * (fa + fb)).abs() <= 1e-12 * v.max(1.0));
            }
        }
    }

    #[test]
    fn predictive_slices_integrate_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let states: Vec<ModelState> = (0..10)
            .map(|_| {
                let k = rng.random_range(1..12);
                random_state(&mut rng, 8, k, 1)
            })
            .collect();
        let centroid = SimplexGrid::centroid(0.01).unwrap();
        let grid = predictive_density(&states, &default_x_grid(5), &centroid).unwrap();
        for j in 0..5 {
            assert!((grid.slice_mass(j) - 1.0).abs() < 0.03, "{}", grid.slice_mass(j));
        }
    }

    #[test]
    fn distances_trivial_cases() {
        let xs = default_x_grid(3);
        let truth = true_density_grid(Scenario::I, &xs, &small_grid()).unwrap();
        assert_eq!(integrated_l1(&truth, &truth).unwrap(), 0.0);
        assert_eq!(l_infinity(&truth, &truth).unwrap(), 0.0);
        let shifted = DensityGrid::new(xs.clone(), small_grid(), truth.values().iter().map(|v| v + 0.1).collect()).unwrap();
        assert!((integrated_l1(&shifted, &truth).unwrap() - 0.1).abs() < 1e-12);
        let mut bumped = truth.values().to_vec();
        bumped[17] += 0.7;
        let bumped = DensityGrid::new(xs.clone(), small_grid(), bumped).unwrap();
        assert!((l_infinity(&bumped, &truth).unwrap() - 0.7).abs() < 1e-12);
        let other = true_density_grid(Scenario::I, &default_x_grid(4), &small_grid()).unwrap();
        assert!(matches!(integrated_l1(&other, &truth), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn distances_match_double_loop() {
        // Dir(30, 25, 40) against the Scenario IV truth on 50 covariate values
        let xs = default_x_grid(50);
        let y_grid = SimplexGrid::interior(DEFAULT_Y_SPACING).unwrap();
        let truth = true_density_grid(Scenario::IV, &xs, &y_grid).unwrap();
        let alt = DirichletParam::new(vec![30.0, 25.0, 40.0]).unwrap();
        let truth_param = DirichletParam::new(vec![35.0, 25.0, 40.0]).unwrap();
        let est_values: Vec<f64> = xs
            .iter()
            .flat_map(|_| y_grid.points().iter().map(|y| dirichlet_log_density(y, &alt).unwrap().exp()))
            .collect();
        let est = DensityGrid::new(xs.clone(), y_grid.clone(), est_values).unwrap();
        let (mut sum, mut max) = (0.0, 0.0f64);
        for _x in &xs {
            for y in y_grid.points() {
                let d = (dirichlet_log_density(y, &alt).unwrap().exp()
                    - dirichlet_log_density(y, &truth_param).unwrap().exp())
                .abs();
                sum += d;
                max = max.max(d);
            }
        }
        let oracle = sum / (xs.len() * y_grid.len()) as f64;
        assert!((integrated_l1(&est, &truth).unwrap() - oracle).abs() < 1e-12 * oracle);
        assert!((l_infinity(&est, &truth).unwrap() - max).abs() < 1e-12 * max);
        assert!(integrated_l1(&est, &truth).unwrap() <= l_infinity(&est, &truth).unwrap());
    }

    #[test]
    fn lpml_identities() {
        let ll = vec![vec![-1.0, -2.5, 0.3]];
        let (v, cpo, _) = lpml(&ll).unwrap();
        assert_eq!(v, -1.0 - 2.5 + 0.3);
        assert_eq!(waic(&ll).unwrap(), v);
        let constant = vec![vec![-0.7, 1.2]; 5];
        let (v, cpo2, _) = lpml(&constant).unwrap();
        assert!((cpo2[0] - (-0.7f64).exp()).abs() < 1e-15);
        assert!((v - 0.5).abs() < 1e-12);
        assert!((waic(&constant).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(cpo.len(), 3);
    }

    #[test]
    fn lpml_hand_matrix() {
        let ll = vec![vec![-1.0, -0.5], vec![-2.0, -0.25], vec![-1.5, -1.0]];
        let mut want = 0.0;
        for i in 0..2 {
            let mean_inv: f64 = ll.iter().map(|r| (-r[i] as f64).exp()).sum::<f64>() / 3.0;
            want += -(mean_inv.ln());
        }
        assert!((lpml(&ll).unwrap().0 - want).abs() < 1e-12);
    }

    #[test]
    fn waic_hand_matrix() {
        let ll = vec![
            vec![-1.0, -0.5, -3.0],
            vec![-2.0, -0.25, -2.5],
            vec![-1.5, -1.0, -2.0],
            vec![-0.5, -0.75, -4.0],
        ];
        let mut want = 0.0;
        for i in 0..3 {
            let col: Vec<f64> = ll.iter().map(|r| r[i]).collect();
            let lppd = (col.iter().map(|v| v.exp()).sum::<f64>() / 4.0).ln();
            let mean = col.iter().sum::<f64>() / 4.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
            want += lppd - var;
        }
        assert!((waic(&ll).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn infinite_entries() {
        let ll = vec![vec![-1.0, f64::NEG_INFINITY], vec![-2.0, f64::NEG_INFINITY]];
        assert!(matches!(lpml(&ll), Err(Error::InfiniteLogLik(1))));
        let ll = vec![vec![-1.0, f64::NEG_INFINITY], vec![-2.0, -1.0]];
        let (v, _, excluded) = lpml(&ll).unwrap();
        assert_eq!(excluded, 1);
        assert_eq!(v, -3.0);
    }

    #[test]
    fn csv_round_trip() {
        let xs = default_x_grid(3);
        let truth = true_density_grid(Scenario::II, &xs, &small_grid()).unwrap();
        let mut buf = Vec::new();
        truth.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,y1,y2,density\n"));
        assert_eq!(text.lines().count(), 1 + xs.len() * small_grid().len());
        let back = DensityGrid::read_csv(buf.as_slice(), small_grid()).unwrap();
        assert_eq!(back, truth);
        assert!(DensityGrid::read_csv(buf.as_slice(), SimplexGrid::interior(0.1).unwrap()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop, prop_assert, proptest, Strategy};

        fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
            (1usize..6, 1usize..5).prop_flat_map(|(t, n)| prop::collection::vec(prop::collection::vec(-8.0f64..2.0, n), t))
        }

        proptest! {
            #[test]
            fn criteria_permutation_invariant(ll in matrix(), seed in any::<u64>()) {
                let mut shuffled = ll.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for i in (1..shuffled.len()).rev() {
                    shuffled.swap(i, rng.random_range(0..=i));
                }
                let a = fit_criteria(&ll).unwrap();
                let b = fit_criteria(&shuffled).unwrap();
                prop_assert!((a.lpml - b.lpml).abs() < 1e-9);
                prop_assert!((a.neg_n_waic - b.neg_n_waic).abs() < 1e-9);
            }

            #[test]
            fn waic_penalty_is_non_negative(ll in matrix()) {
                let n = ll[0].len();
                let t = ll.len() as f64;
                let lppd: f64 = (0..n)
                    .map(|i| {
                        let col: Vec<f64> = ll.iter().map(|r| r[i]).collect();
                        log_sum_exp(&col) - t.ln()
                    })
                    .sum();
                prop_assert!(waic(&ll).unwrap() <= lppd + 1e-12);
            }

            #[test]
            fn distances_are_ordered(vals in prop::collection::vec(0.0f64..5.0, 2 * 21)) {
                let y_grid = SimplexGrid::interior(1.0 / 8.0).unwrap();
                let xs = default_x_grid(2);
                let truth = true_density_grid(Scenario::III, &xs, &y_grid).unwrap();
                let est = DensityGrid::new(xs, y_grid, vals).unwrap();
                let l1 = integrated_l1(&est, &truth).unwrap();
                let linf = l_infinity(&est, &truth).unwrap();
                prop_assert!(l1 >= 0.0 && l1 <= linf + 1e-15);
            }
        }
    }
}
