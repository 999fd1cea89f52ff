//! Numerical probes of how batch-wise and feature-wise contrastive
//! objectives relate: the constant-gap identity, rotation invariances, the
//! two-sample solution geometry, and embedding entropy.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// `Σ_i [-z_iᵀẑ_i + log Σ_j exp(z_iᵀẑ_j)]`.
pub fn infonce_bcl(z: ArrayView2<'_, f64>, zhat: ArrayView2<'_, f64>) -> Result<f64> {
    same_shape(z, zhat)?;
    let s = z.dot(&zhat.t());
    let mut total = 0.0;
    for (i, row) in s.outer_iter().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[i];
    }
    Ok(total)
}

/// `Σ_i (1 - z_iᵀẑ_i)² + Σ_{i≠j} (z_iᵀẑ_j)²`.
pub fn bcl_surrogate(z: ArrayView2<'_, f64>, zhat: ArrayView2<'_, f64>) -> Result<f64> {
    same_shape(z, zhat)?;
    let n = z.nrows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = z.row(i).dot(&zhat.row(j));
            total += if i == j { (1.0 - v).powi(2) } else { v * v };
        }
    }
    Ok(total)
}

/// `‖I - ZẐᵀ‖_F²`.
pub fn bcl_surrogate_frobenius(z: ArrayView2<'_, f64>, zhat: ArrayView2<'_, f64>) -> Result<f64> {
    same_shape(z, zhat)?;
    Ok(identity_gap(z.dot(&zhat.t())))
}

/// `Σ_m (1 - C_mm)² + λ Σ_{m≠n} C_mn²` with `C` the column-cosine matrix.
pub fn fcl_objective(z: ArrayView2<'_, f64>, zhat: ArrayView2<'_, f64>, lambda: f64) -> Result<f64> {
    let c = column_cosine(z, zhat)?;
    let mut total = 0.0;
    for ((m, n), &v) in c.indexed_iter() {
        total += if m == n { (1.0 - v).powi(2) } else { lambda * v * v };
    }
    Ok(total)
}

/// `‖I - ZᵀẐ‖_F²`.
pub fn fcl_frobenius(z: ArrayView2<'_, f64>, zhat: ArrayView2<'_, f64>) -> Result<f64> {
    same_shape(z, zhat)?;
    Ok(identity_gap(z.t().dot(&zhat)))
}

/// `C_mn = Σ_b z_bm ẑ_bn / (‖z_:m‖ ‖ẑ_:n‖)`.
pub fn column_cosine(z: ArrayView2<'_, f64>, zhat: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    same_shape(z, zhat)?;
    let norms = |m: ArrayView2<'_, f64>, side: &str| -> Result<Vec<f64>> {
        m.axis_iter(Axis(1))
            .enumerate()
            .map(|(k, col)| {
                let n = col.dot(&col).sqrt();
                if n == 0.0 {
                    Err(Error::Numeric(format!("column {k} of {side} has zero norm")))
                } else {
                    Ok(n)
                }
            })
            .collect()
    };
    let nz = norms(z, "Z")?;
    let nh = norms(zhat, "Zhat")?;
    let mut c = z.t().dot(&zhat);
    for ((m, n), v) in c.indexed_iter_mut() {
        *v /= nz[m] * nh[n];
    }
    Ok(c)
}

fn identity_gap(m: Array2<f64>) -> f64 {
    m.indexed_iter()
        .map(|((r, c), &v)| if r == c { (1.0 - v).powi(2) } else { v * v })
        .sum()
}

fn same_shape(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    Ok(())
}

/// Columns shifted to mean 0 and scaled to (biased) standard deviation 1.
pub fn standardize(z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = z.nrows() as f64;
    let mut out = z.to_owned();
    for (k, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let mean = col.sum() / n;
        col.mapv_inplace(|v| v - mean);
        let sd = (col.dot(&col) / n).sqrt();
        if sd == 0.0 {
            return Err(Error::Numeric(format!("column {k} is constant")));
        }
        col.mapv_inplace(|v| v / sd);
    }
    Ok(out)
}

/// Two views of one batch for the objective comparisons.
#[derive(Debug, Clone)]
pub struct ObjectivePair {
    pub z: Array2<f64>,
    pub zhat: Array2<f64>,
    pub standardized: bool,
}

impl ObjectivePair {
    pub fn new(z: Array2<f64>, zhat: Array2<f64>) -> Result<Self> {
        same_shape(z.view(), zhat.view())?;
        Ok(ObjectivePair {
            z,
            zhat,
            standardized: false,
        })
    }

    pub fn standardized(z: ArrayView2<'_, f64>, zhat: ArrayView2<'_, f64>) -> Result<Self> {
        same_shape(z, zhat)?;
        Ok(ObjectivePair {
            z: standardize(z)?,
            zhat: standardize(zhat)?,
            standardized: true,
        })
    }

    /// Both matrices with every column scaled to unit norm. For standardized
    /// input this is a division by `√N`.
    pub fn unit_columns(&self) -> Result<(Array2<f64>, Array2<f64>)> {
        Ok((unit_columns(self.z.view())?, unit_columns(self.zhat.view())?))
    }

    /// `|bcl - fcl - (N - D)|` with both objectives in their trace forms.
    pub fn gap(&self) -> Result<f64> {
        let (z, zhat) = self.unit_columns()?;
        let (n, d) = z.dim();
        let bcl = bcl_surrogate(z.view(), zhat.view())?;
        let fcl = fcl_objective(z.view(), zhat.view(), 1.0)?;
        Ok((bcl - fcl - (n as f64 - d as f64)).abs())
    }
}

fn unit_columns(z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = z.to_owned();
    for (k, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let n = col.dot(&col).sqrt();
        if n == 0.0 {
            return Err(Error::Numeric(format!("column {k} has zero norm")));
        }
        col.mapv_inplace(|v| v / n);
    }
    Ok(out)
}

/// Gap between the two objectives for `Ẑ = Z` after standardization.
pub fn observation1_gap(z: ArrayView2<'_, f64>) -> Result<f64> {
    ObjectivePair::standardized(z, z)?.gap()
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub instances: usize,
    pub max_gap: f64,
    pub shapes: Vec<(usize, usize)>,
}

/// Random Gaussian instances over every `(N, D)` combination, cycling shapes.
pub fn observation1_sweep(instances: usize, ns: &[usize], ds: &[usize], seed: u64) -> Result<GapReport> {
    let shapes: Vec<(usize, usize)> = ns.iter().flat_map(|&n| ds.iter().map(move |&d| (n, d))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_gap = 0.0f64;
    for k in 0..instances {
        let (n, d) = shapes[k % shapes.len()];
        let z = gaussian(n, d, &mut rng);
        max_gap = max_gap.max(observation1_gap(z.view())?);
    }
    Ok(GapReport {
        instances,
        max_gap,
        shapes,
    })
}

/// Gap as `Ẑ = Z + σ·noise` moves away from `Z`, for each `σ`.
pub fn perturbation_sweep(z: ArrayView2<'_, f64>, sigmas: &[f64], seed: u64) -> Result<Vec<(f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = gaussian(z.nrows(), z.ncols(), &mut rng);
    sigmas
        .iter()
        .map(|&s| {
            let zhat = &z + &(&noise * s);
            Ok((s, ObjectivePair::standardized(z, zhat.view())?.gap()?))
        })
        .collect()
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || standard_normal(rng))
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `(f_B, f_F)`: sum of off-diagonal sample similarities and squared
/// off-diagonal feature correlations.
pub fn push_away_objectives(z: ArrayView2<'_, f64>) -> (f64, f64) {
    let g = z.dot(&z.t());
    let f_b = g.sum() - g.diag().sum();
    let h = z.t().dot(&z);
    let f_f = h.indexed_iter().filter(|((m, n), _)| m != n).map(|(_, v)| v * v).sum();
    (f_b, f_f)
}

/// Haar-ish random rotation: QR of a Gaussian matrix, signs fixed so that
/// `R` has a positive diagonal, then one column flipped if needed so that
/// `det = +1`.
pub fn random_rotation(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| standard_normal(rng));
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for k in 0..n {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    Array2::from_shape_fn((n, n), |(i, j)| q[(i, j)])
}

/// 2-D rotation by `theta`, acting on row vectors from the right.
pub fn rotation_2d(theta: f64) -> Array2<f64> {
    let (s, c) = theta.sin_cos();
    ndarray::array![[c, s], [-s, c]]
}

#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    pub z: Vec<[f64; 2]>,
    pub rotated: Vec<[f64; 2]>,
    pub theta: f64,
    pub sum_before: f64,
    pub sum_after: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RotationReport {
    pub trials: usize,
    pub max_delta_f_b_right: f64,
    pub max_delta_f_f_left: f64,
    /// Largest change of `f_B + f_F` under the same random rotations.
    pub max_delta_sum_right: f64,
    pub max_delta_sum_left: f64,
    pub counterexample: Counterexample,
}

/// `f_B(Z R_B)` against `f_B(Z)` and `f_F(R_F Z)` against `f_F(Z)` over
/// random rotations, plus an explicit case where the sum is not invariant.
pub fn rotation_invariance_check(z: ArrayView2<'_, f64>, trials: usize, seed: u64) -> RotationReport {
    let (n, d) = z.dim();
    let (fb, ff) = push_away_objectives(z);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut db, mut df, mut dsr, mut dsl) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..trials {
        let rb = random_rotation(d, &mut rng);
        let rf = random_rotation(n, &mut rng);
        let (fb_r, ff_r) = push_away_objectives(z.dot(&rb).view());
        let (fb_l, ff_l) = push_away_objectives(rf.dot(&z).view());
        db = db.max((fb_r - fb).abs());
        df = df.max((ff_l - ff).abs());
        dsr = dsr.max((fb_r + ff_r - fb - ff).abs());
        dsl = dsl.max((fb_l + ff_l - fb - ff).abs());
    }
    RotationReport {
        trials,
        max_delta_f_b_right: db,
        max_delta_f_f_left: df,
        max_delta_sum_right: dsr,
        max_delta_sum_left: dsl,
        counterexample: axis_pair_counterexample(),
    }
}

/// The axis-antipodal pair `(1,0), (-1,0)` turned by 45°: `f_B` stays at -2
/// while `f_F` grows from 0 to 2.
pub fn axis_pair_counterexample() -> Counterexample {
    let z = ndarray::array![[1.0, 0.0], [-1.0, 0.0]];
    let theta = std::f64::consts::FRAC_PI_4;
    let rotated = z.dot(&rotation_2d(theta));
    let sum = |m: ArrayView2<'_, f64>| {
        let (b, f) = push_away_objectives(m);
        b + f
    };
    let rows = |m: &Array2<f64>| m.outer_iter().map(|r| [r[0], r[1]]).collect();
    Counterexample {
        z: rows(&z),
        rotated: rows(&rotated),
        theta,
        sum_before: sum(z.view()),
        sum_after: sum(rotated.view()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyObjective {
    Bcl,
    Fcl,
    Both,
}

impl ToyObjective {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bcl" => Some(ToyObjective::Bcl),
            "fcl" => Some(ToyObjective::Fcl),
            "both" => Some(ToyObjective::Both),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ToyObjective::Bcl => "bcl",
            ToyObjective::Fcl => "fcl",
            ToyObjective::Both => "both",
        }
    }

    /// Label of the solution set this objective is expected to reach.
    pub fn target(self) -> &'static str {
        match self {
            ToyObjective::Bcl => ANTIPODAL,
            ToyObjective::Fcl => OFFDIAG_ZERO,
            ToyObjective::Both => AXIS_ANTIPODAL,
        }
    }
}

pub const ANTIPODAL: &str = "antipodal";
pub const OFFDIAG_ZERO: &str = "orthogonal-offdiag";
pub const AXIS_ANTIPODAL: &str = "axis-antipodal";
pub const UNDECIDED: &str = "undecided";

pub const ANGLE_TOL: f64 = 1e-3;
pub const OFFDIAG_TOL: f64 = 1e-6;
pub const AXIS_TOL: f64 = 1e-3;
pub const TOY_LR: f64 = 0.05;
pub const TOY_STEPS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Classification {
    pub antipodal: bool,
    pub offdiag_zero: bool,
    pub axis_antipodal: bool,
}

impl Classification {
    pub fn of(z1: [f64; 2], z2: [f64; 2]) -> Self {
        let dot = -(z1[0] * z2[0] + z1[1] * z2[1]);
        let cross = z1[0] * z2[1] - z1[1] * z2[0];
        let antipodal = cross.atan2(dot).abs() < ANGLE_TOL;
        let offdiag = z1[0] * z1[1] + z2[0] * z2[1];
        let one_hot = |z: [f64; 2]| {
            let near = |v: f64, t: f64| (v - t).abs() < AXIS_TOL;
            (near(z[0].abs(), 1.0) && near(z[1], 0.0)) || (near(z[0], 0.0) && near(z[1].abs(), 1.0))
        };
        Classification {
            antipodal,
            offdiag_zero: offdiag.abs() < OFFDIAG_TOL,
            axis_antipodal: antipodal && one_hot(z1) && one_hot(z2),
        }
    }

    pub fn meets(&self, label: &str) -> bool {
        match label {
            ANTIPODAL => self.antipodal,
            OFFDIAG_ZERO => self.offdiag_zero,
            AXIS_ANTIPODAL => self.axis_antipodal,
            _ => false,
        }
    }

    /// Most specific satisfied label.
    pub fn label(&self) -> &'static str {
        if self.axis_antipodal {
            AXIS_ANTIPODAL
        } else if self.antipodal {
            ANTIPODAL
        } else if self.offdiag_zero {
            OFFDIAG_ZERO
        } else {
            UNDECIDED
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ToyOutcome {
    pub seed: u64,
    pub z1: [f64; 2],
    pub z2: [f64; 2],
    pub classification: Classification,
    /// The objective's target set was not reached within the step budget.
    pub undecided: bool,
}

fn toy_grad(objective: ToyObjective, z1: [f64; 2], z2: [f64; 2]) -> ([f64; 2], [f64; 2]) {
    let mut g1 = [0.0; 2];
    let mut g2 = [0.0; 2];
    if matches!(objective, ToyObjective::Bcl | ToyObjective::Both) {
        // f_B = 2 z1·z2
        for k in 0..2 {
            g1[k] += 2.0 * z2[k];
            g2[k] += 2.0 * z1[k];
        }
    }
    if matches!(objective, ToyObjective::Fcl | ToyObjective::Both) {
        // f_F = 2 s², s = z1x z1y + z2x z2y
        let s = z1[0] * z1[1] + z2[0] * z2[1];
        g1[0] += 4.0 * s * z1[1];
        g1[1] += 4.0 * s * z1[0];
        g2[0] += 4.0 * s * z2[1];
        g2[1] += 4.0 * s * z2[0];
    }
    (g1, g2)
}

fn unit(v: [f64; 2]) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    [v[0] / n, v[1] / n]
}

/// Projected gradient descent of a negative pair on the unit circle.
pub fn toy_negative_pair_optimize(objective: ToyObjective, seed: u64, steps: usize, lr: f64) -> ToyOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || {
        let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        [a.cos(), a.sin()]
    };
    let (mut z1, mut z2) = (draw(), draw());
    for _ in 0..steps {
        let (g1, g2) = toy_grad(objective, z1, z2);
        z1 = unit([z1[0] - lr * g1[0], z1[1] - lr * g1[1]]);
        z2 = unit([z2[0] - lr * g2[0], z2[1] - lr * g2[1]]);
    }
    let classification = Classification::of(z1, z2);
    ToyOutcome {
        seed,
        z1,
        z2,
        undecided: !classification.meets(objective.target()),
        classification,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Figure1Report {
    pub objective: &'static str,
    pub seeds: usize,
    pub steps: usize,
    pub lr: f64,
    pub target: &'static str,
    pub target_fraction: f64,
    /// Counts per most-specific label.
    pub histogram: BTreeMap<&'static str, usize>,
    /// Counts per satisfied condition; a run may satisfy several.
    pub conditions: BTreeMap<&'static str, usize>,
    /// Runs whose first vector ends in each quadrant, counter-clockwise
    /// from the positive x axis.
    pub z1_quadrants: [usize; 4],
    pub tolerances: BTreeMap<&'static str, f64>,
    pub outcomes: Vec<ToyOutcome>,
}

/// Runs seeds `0..seeds` in parallel.
pub fn figure1(objective: ToyObjective, seeds: usize, steps: usize, lr: f64) -> Figure1Report {
    let outcomes: Vec<ToyOutcome> = (0..seeds as u64)
        .into_par_iter()
        .map(|s| toy_negative_pair_optimize(objective, s, steps, lr))
        .collect();
    let mut histogram = BTreeMap::new();
    let mut conditions: BTreeMap<&'static str, usize> = [ANTIPODAL, OFFDIAG_ZERO, AXIS_ANTIPODAL]
        .iter()
        .map(|&k| (k, 0))
        .collect();
    let mut quadrants = [0usize; 4];
    for o in &outcomes {
        *histogram.entry(o.classification.label()).or_insert(0) += 1;
        for label in [ANTIPODAL, OFFDIAG_ZERO, AXIS_ANTIPODAL] {
            if o.classification.meets(label) {
                *conditions.get_mut(label).expect("present") += 1;
            }
        }
        let angle = o.z1[1].atan2(o.z1[0]).rem_euclid(std::f64::consts::TAU);
        let q = ((angle / std::f64::consts::FRAC_PI_2) as usize).min(3);
        quadrants[q] += 1;
    }
    let target = objective.target();
    let hits = outcomes.iter().filter(|o| !o.undecided).count();
    let tolerances = [("angle_rad", ANGLE_TOL), ("offdiag", OFFDIAG_TOL), ("axis", AXIS_TOL)]
        .into_iter()
        .collect();
    Figure1Report {
        objective: objective.name(),
        seeds,
        steps,
        lr,
        target,
        target_fraction: if seeds == 0 { 0.0 } else { hits as f64 / seeds as f64 },
        histogram,
        conditions,
        z1_quadrants: quadrants,
        tolerances,
        outcomes,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyOutcome {
    pub mean_entropy: f64,
    /// Rows whose selected mass was zero; each counted as `ln K`.
    pub zero_rows: usize,
}

fn check_k(e: ArrayView2<'_, f64>, k: usize) -> Result<()> {
    if k == 0 || k > e.ncols() {
        return Err(Error::Config(format!("K must lie in 1..={}, got {k}", e.ncols())));
    }
    if e.nrows() == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(())
}

fn entropy_of(values: &[f64], k: usize) -> Option<f64> {
    let total: f64 = values.iter().sum();
    if total == 0.0 {
        return None;
    }
    let h = values
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum::<f64>();
    debug_assert!(values.len() == k);
    Some(h)
}

fn mean_entropy(rows: impl Iterator<Item = Vec<f64>>, k: usize) -> EntropyOutcome {
    let (mut sum, mut count, mut zero) = (0.0, 0usize, 0usize);
    for vals in rows {
        match entropy_of(&vals, k) {
            Some(h) => sum += h,
            None => {
                sum += (k as f64).ln();
                zero += 1;
            }
        }
        count += 1;
    }
    EntropyOutcome {
        mean_entropy: sum / count as f64,
        zero_rows: zero,
    }
}

/// Per row: the `K` largest absolute values, normalized to a distribution;
/// natural-log entropy averaged over rows.
pub fn entropy_each_sample(e: ArrayView2<'_, f64>, k: usize) -> Result<EntropyOutcome> {
    check_k(e, k)?;
    let rows = e.outer_iter().map(|row| {
        let mut abs: Vec<f64> = row.iter().map(|v| v.abs()).collect();
        if k < abs.len() {
            abs.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
            abs.truncate(k);
        }
        abs
    });
    Ok(mean_entropy(rows, k))
}

/// The `K` dimensions with the largest mean absolute value are chosen once;
/// each row's entropy is taken over those columns.
pub fn entropy_mean_sample(e: ArrayView2<'_, f64>, k: usize) -> Result<EntropyOutcome> {
    check_k(e, k)?;
    let means = e.mapv(f64::abs).mean_axis(Axis(0)).expect("non-empty rows");
    let mut dims: Vec<usize> = (0..e.ncols()).collect();
    dims.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
    dims.truncate(k);
    let rows = e
        .outer_iter()
        .map(|row| dims.iter().map(|&d| row[d].abs()).collect::<Vec<f64>>());
    Ok(mean_entropy(rows, k))
}
