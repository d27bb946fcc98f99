//! Exponential last-passage percolation on a finite lattice: sampling, the
//! last-passage recurrence, geodesics and windowed conditional Monte Carlo.

use crate::error::{LppError, Result};
use crate::scaling::{lln_surface, rate_function, unconditional_lln, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

/// Default cap on the number of cells in one field.
pub const DEFAULT_CELL_CAP: u64 = 100_000_000;

/// Weights and last-passage values on an `rows x cols` grid, row-major,
/// 0-based storage for the 1-based lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub lp: Vec<f64>,
    pub seed: u64,
}

/// Seeds the generator of row `row` of a field; cell `(row, col)` is the
/// `col`-th draw of that stream.
fn row_stream(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

fn check_cap(rows: usize, cols: usize, cap: u64) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(LppError::Domain("lattice dimensions must be at least 1".into()));
    }
    let cells = rows as u64 * cols as u64;
    if cells > cap {
        return Err(LppError::Allocation { cells, cap });
    }
    Ok(())
}

/// Fills `lp` from `weights` by `lp(i,j) = max(lp(i-1,j), lp(i,j-1)) + w(i,j)`.
pub fn fill_last_passage(rows: usize, cols: usize, weights: &[f64], lp: &mut [f64]) {
    for i in 0..rows {
        for j in 0..cols {
            let up = if i > 0 { lp[(i - 1) * cols + j] } else { 0.0 };
            let left = if j > 0 { lp[i * cols + j - 1] } else { 0.0 };
            lp[i * cols + j] = up.max(left) + weights[i * cols + j];
        }
    }
}

impl LatticeField {
    /// A field from given weights (used for injected test fields).
    pub fn from_weights(rows: usize, cols: usize, weights: Vec<f64>) -> Result<Self> {
        check_cap(rows, cols, DEFAULT_CELL_CAP)?;
        if weights.len() != rows * cols {
            return Err(LppError::Shape(format!("{} weights for a {rows}x{cols} field", weights.len())));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(LppError::Domain("weights must be nonnegative".into()));
        }
        let mut lp = vec![0.0; rows * cols];
        fill_last_passage(rows, cols, &weights, &mut lp);
        Ok(LatticeField {
            rows,
            cols,
            weights,
            lp,
            seed: 0,
        })
    }

    /// `lp(row, col)`, 1-based.
    pub fn at(&self, row: usize, col: usize) -> Result<f64> {
        if row == 0 || col == 0 || row > self.rows || col > self.cols {
            return Err(LppError::Range {
                row,
                col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(self.lp[(row - 1) * self.cols + col - 1])
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[(row - 1) * self.cols + col - 1]
    }
}

pub fn sample_field(rows: usize, cols: usize, seed: u64) -> Result<LatticeField> {
    sample_field_capped(rows, cols, seed, DEFAULT_CELL_CAP)
}

pub fn sample_field_capped(rows: usize, cols: usize, seed: u64, cap: u64) -> Result<LatticeField> {
    check_cap(rows, cols, cap)?;
    let mut weights = vec![0.0; rows * cols];
    weights.par_chunks_mut(cols).enumerate().for_each(|(i, row)| {
        let mut rng = row_stream(seed, i);
        for w in row.iter_mut() {
            *w = rng.sample::<f64, _>(Exp1);
        }
    });
    let mut lp = vec![0.0; rows * cols];
    fill_last_passage(rows, cols, &weights, &mut lp);
    Ok(LatticeField {
        rows,
        cols,
        weights,
        lp,
        seed,
    })
}

/// `lp(ceil(alpha), ceil(beta))`.
pub fn lpp_at(field: &LatticeField, alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(LppError::Domain(format!("coordinates ({alpha}, {beta}) must be positive")));
    }
    field.at(alpha.ceil() as usize, beta.ceil() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Up,
    Right,
}

/// The maximizing path, 1-based points from `(1,1)` to `(rows, cols)`.
/// `Up` increases the row index, `Right` the column index.
#[derive(Debug, Clone, PartialEq)]
pub struct Geodesic {
    pub points: Vec<(usize, usize)>,
    pub steps: Vec<Step>,
}

impl Geodesic {
    pub fn weight(&self, field: &LatticeField) -> f64 {
        self.points.iter().map(|&(i, j)| field.weight(i, j)).sum()
    }
}

/// Backtracks from the far corner; on ties the `Up` predecessor (row - 1) wins.
pub fn extract_geodesic(field: &LatticeField) -> Geodesic {
    let (mut i, mut j) = (field.rows, field.cols);
    let mut points = vec![(i, j)];
    let mut steps = Vec::with_capacity(field.rows + field.cols - 2);
    while i > 1 || j > 1 {
        let from_below = if i > 1 { Some(field.lp[(i - 2) * field.cols + j - 1]) } else { None };
        let from_left = if j > 1 { Some(field.lp[(i - 1) * field.cols + j - 2]) } else { None };
        let take_up = match (from_below, from_left) {
            (Some(b), Some(l)) => b >= l,
            (Some(_), None) => true,
            _ => false,
        };
        if take_up {
            i -= 1;
            steps.push(Step::Up);
        } else {
            j -= 1;
            steps.push(Step::Right);
        }
        points.push((i, j));
    }
    points.reverse();
    steps.reverse();
    Geodesic { points, steps }
}

/// Basis `(v1, v2)`: the characteristic direction and the transverse shift.
pub fn projection_basis(p: &ModelParams) -> ([f64; 2], [f64; 2]) {
    let sd = p.sqrt_d();
    let v1 = [p.a, p.b];
    let v2 = [
        p.a * (p.ell - p.a + p.b) * p.sigma / (p.ell * sd),
        -p.b * (p.ell + p.a - p.b) * p.sigma / (p.ell * sd),
    ];
    (v1, v2)
}

/// Coordinates `(tau, pi)` of `point = tau v1 + pi v2`.
pub fn to_basis(v1: [f64; 2], v2: [f64; 2], point: [f64; 2]) -> Result<(f64, f64)> {
    let det = v1[0] * v2[1] - v1[1] * v2[0];
    if det.abs() < 1e-300 {
        return Err(LppError::SingularBasis);
    }
    let tau = (point[0] * v2[1] - point[1] * v2[0]) / det;
    let pi = (v1[0] * point[1] - v1[1] * point[0]) / det;
    Ok((tau, pi))
}

pub fn from_basis(v1: [f64; 2], v2: [f64; 2], tau: f64, pi: f64) -> [f64; 2] {
    [tau * v1[0] + pi * v2[0], tau * v1[1] + pi * v2[1]]
}

/// Transverse trace of a geodesic. Lattice points are mapped affinely so the
/// corners `(1,1)` and `(rows, cols)` land on `0` and `L v1`.
pub fn geodesic_projection(g: &Geodesic, p: &ModelParams, l: f64) -> Result<Vec<(f64, f64)>> {
    let (v1, v2) = projection_basis(p);
    let (rows, cols) = *g.points.last().ok_or_else(|| LppError::Domain("empty geodesic".into()))?;
    let scale = |k: usize, n: usize, len: f64| if n > 1 { (k - 1) as f64 / (n - 1) as f64 * len } else { 0.0 };
    g.points
        .iter()
        .map(|&(i, j)| to_basis(v1, v2, [scale(i, rows, p.a * l), scale(j, cols, p.b * l)]))
        .collect()
}

/// Settings for the windowed conditional Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    /// Maximum number of fields drawn.
    pub budget: u64,
    pub cell_cap: u64,
    /// Fields per parallel batch.
    pub batch: usize,
    /// Experimental: draw weights with rate `tilt < 1` and reweight.
    pub tilt: Option<f64>,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            budget: 2_000_000_000,
            cell_cap: DEFAULT_CELL_CAP,
            batch: 1 << 16,
            tilt: None,
        }
    }
}

/// One observable's conditional statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSummary {
    pub x: f64,
    pub y: f64,
    pub mean_scaled: f64,
    pub se_scaled: f64,
    pub mean_fluctuation: f64,
    pub se_fluctuation: f64,
    /// `h(x, y)` under the conditioning.
    pub conditional_lln: f64,
    /// The unconditional limit at `(xa, yb)`.
    pub unconditional_lln: f64,
    /// Per-sample `lp / L`, in acceptance order.
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub accepted: u64,
    pub drawn: u64,
    pub acceptance_rate: f64,
    /// `exp(-J L)` for comparison with the acceptance rate.
    pub rate_reference: f64,
    pub window_halfwidth: f64,
    pub target: f64,
    pub observables: Vec<ObservableSummary>,
    /// Likelihood-ratio weights when tilting is on.
    pub weights: Vec<f64>,
}

/// Mixes a run seed and a replica index into an independent stream seed.
pub fn replica_seed(seed: u64, replica: u64) -> u64 {
    let mut z = seed ^ replica.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Replica {
    index: u64,
    values: Vec<f64>,
    log_weight: f64,
}

fn draw_replica(
    rows: usize,
    cols: usize,
    seed: u64,
    window: (f64, f64),
    cells: &[(usize, usize)],
    tilt: Option<f64>,
    row: &mut [f64],
    values: &mut [f64],
) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / tilt.unwrap_or(1.0);
    let mut total = 0.0;
    row.fill(0.0);
    for i in 1..=rows {
        let mut left = 0.0f64;
        for cell in row.iter_mut() {
            let w: f64 = rng.sample::<f64, _>(Exp1) * scale;
            total += w;
            left = left.max(*cell) + w;
            *cell = left;
        }
        for (k, &(ci, cj)) in cells.iter().enumerate() {
            if ci == i {
                values[k] = row[cj - 1];
            }
        }
    }
    let end = row[cols - 1];
    if end < window.0 || end > window.1 {
        return None;
    }
    Some(match tilt {
        Some(r) => -((rows * cols) as f64) * r.ln() - (1.0 - r) * total,
        None => 0.0,
    })
}

/// Rejection sampling of fields whose corner value lies within
/// `delta sigma sqrt(L)` of `ell L`, recording `lp` at `(x aL, y bL)`.
pub fn conditional_mc(
    p: &ModelParams,
    l: f64,
    delta: f64,
    observables: &[(f64, f64)],
    n_target: u64,
    seed: u64,
    opts: &McOptions,
) -> Result<McSummary> {
    if !(l > 0.0 && delta > 0.0) {
        return Err(LppError::Domain(format!("L = {l} and delta = {delta} must be positive")));
    }
    if let Some(t) = opts.tilt {
        if !(t > 0.0 && t <= 1.0) {
            return Err(LppError::Domain(format!("tilt rate {t} must lie in (0, 1]")));
        }
    }
    let rows = (p.a * l).ceil() as usize;
    let cols = (p.b * l).ceil() as usize;
    check_cap(rows, cols, opts.cell_cap)?;
    let mut cells = Vec::with_capacity(observables.len());
    for &(x, y) in observables {
        if !(x > 0.0 && x <= 1.0 && y > 0.0 && y <= 1.0) {
            return Err(LppError::Domain(format!("observable ({x}, {y}) outside (0, 1]^2")));
        }
        cells.push((((x * p.a * l).ceil() as usize).max(1), ((y * p.b * l).ceil() as usize).max(1)));
    }
    let target = p.ell * l;
    let half = delta * p.sigma * l.sqrt();
    let window = (target - half, target + half);
    let mut accepted: Vec<Replica> = Vec::new();
    let mut drawn = 0u64;
    while (accepted.len() as u64) < n_target {
        if drawn >= opts.budget {
            return Err(LppError::BudgetExceeded {
                budget: opts.budget,
                accepted: accepted.len() as u64,
            });
        }
        let start = drawn;
        let count = (opts.batch as u64).min(opts.budget - drawn);
        let chunk = 1024u64;
        let mut batch: Vec<Replica> = (0..count.div_ceil(chunk))
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut row = vec![0.0; cols];
                let mut values = vec![0.0; cells.len()];
                let lo = start + c * chunk;
                let hi = (lo + chunk).min(start + count);
                let cells = &cells;
                (lo..hi)
                    .filter_map(|k| {
                        let seed = replica_seed(seed, k);
                        draw_replica(rows, cols, seed, window, cells, opts.tilt, &mut row, &mut values).map(
                            |log_weight| Replica {
                                index: k,
                                values: values.clone(),
                                log_weight,
                            },
                        )
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        batch.sort_by_key(|r| r.index);
        drawn += count;
        let room = (n_target - accepted.len() as u64) as usize;
        accepted.extend(batch.into_iter().take(room));
        if accepted.len() as u64 >= n_target {
            drawn = accepted.last().map_or(drawn, |r| r.index + 1);
        }
    }
    let max_lw = accepted.iter().map(|r| r.log_weight).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = accepted.iter().map(|r| (r.log_weight - max_lw).exp()).collect();
    let wsum: f64 = weights.iter().sum();
    let ess = wsum * wsum / weights.iter().map(|w| w * w).sum::<f64>();
    let stats = |vals: &[f64]| -> (f64, f64) {
        let mean = vals.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() / wsum;
        let var = vals.iter().zip(&weights).map(|(v, w)| w * (v - mean).powi(2)).sum::<f64>() / wsum;
        let n = ess.max(2.0);
        (mean, (var * n / (n - 1.0) / n).sqrt())
    };
    let mut summaries = Vec::with_capacity(observables.len());
    for (k, &(x, y)) in observables.iter().enumerate() {
        let h = lln_surface(p, x, y)?;
        let scaled: Vec<f64> = accepted.iter().map(|r| r.values[k] / l).collect();
        let fluct: Vec<f64> = accepted
            .iter()
            .map(|r| (r.values[k] - h * l) / (std::f64::consts::SQRT_2 * p.sigma * l.sqrt()))
            .collect();
        let (ms, ss) = stats(&scaled);
        let (mf, sf) = stats(&fluct);
        summaries.push(ObservableSummary {
            x,
            y,
            mean_scaled: ms,
            se_scaled: ss,
            mean_fluctuation: mf,
            se_fluctuation: sf,
            conditional_lln: h,
            unconditional_lln: unconditional_lln(p.a, p.b, x, y),
            samples: scaled,
        });
    }
    let n_acc = accepted.len() as u64;
    Ok(McSummary {
        accepted: n_acc,
        drawn,
        acceptance_rate: n_acc as f64 / drawn as f64,
        rate_reference: (-rate_function(p) * l).exp(),
        window_halfwidth: half,
        target,
        observables: summaries,
        weights: if opts.tilt.is_some() { weights } else { Vec::new() },
    })
}

/// Unconditional replicas: row `k` holds `lp` at each of `cells` (1-based)
/// for replica `k`. Replica seeds match those of [`conditional_mc`].
pub fn unconditional_samples(
    rows: usize,
    cols: usize,
    cells: &[(usize, usize)],
    samples: u64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_cap(rows, cols, DEFAULT_CELL_CAP)?;
    if let Some(&(i, j)) = cells.iter().find(|&&(i, j)| i == 0 || j == 0 || i > rows || j > cols) {
        return Err(LppError::Range { row: i, col: j, rows, cols });
    }
    let chunk = 1024u64;
    let open = (f64::NEG_INFINITY, f64::INFINITY);
    Ok((0..samples.div_ceil(chunk))
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut row = vec![0.0; cols];
            let lo = c * chunk;
            let hi = (lo + chunk).min(samples);
            (lo..hi)
                .map(|k| {
                    let mut values = vec![0.0; cells.len()];
                    draw_replica(rows, cols, replica_seed(seed, k), open, cells, None, &mut row, &mut values);
                    values
                })
                .collect::<Vec<_>>()
        })
        .collect())
}

/// Plain Monte Carlo estimate of `P(L(M, N) > T)` with its standard error.
pub fn survival_mc(rows: usize, cols: usize, t: f64, samples: u64, seed: u64) -> Result<(f64, f64)> {
    check_cap(rows, cols, DEFAULT_CELL_CAP)?;
    let chunk = 4096u64;
    let hits: u64 = (0..samples.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut w = vec![0.0; rows * cols];
            let mut lp = vec![0.0; rows * cols];
            let lo = c * chunk;
            let hi = (lo + chunk).min(samples);
            let mut h = 0u64;
            for k in lo..hi {
                let mut rng = ChaCha8Rng::seed_from_u64(replica_seed(seed, k));
                for x in w.iter_mut() {
                    *x = rng.sample::<f64, _>(Exp1);
                }
                fill_last_passage(rows, cols, &w, &mut lp);
                if lp[rows * cols - 1] > t {
                    h += 1;
                }
            }
            h
        })
        .sum();
    let prob = hits as f64 / samples as f64;
    Ok((prob, (prob * (1.0 - prob) / samples as f64).sqrt()))
}
