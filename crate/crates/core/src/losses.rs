//! Objectives and their analytic gradients.
//!
//! Every loss is a pure function of its matrix inputs and returns the scalar
//! value together with gradients for the inputs it is differentiable in. The
//! target views of the batch-wise loss never get a gradient output: that is
//! the stop-gradient.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

/// Gradient keys used in [`Component`] and [`LossReport`].
pub mod keys {
    /// Projected, standardized user batch.
    pub const ZU: &str = "zu";
    /// Projected, standardized item batch.
    pub const ZI: &str = "zi";
    /// Predictor output for the user batch.
    pub const PU: &str = "pu";
    /// Predictor output for the item batch.
    pub const PI: &str = "pi";
    /// Row-normalized user batch.
    pub const XU: &str = "xu";
    /// Row-normalized item batch.
    pub const XI: &str = "xi";
}

pub type GradMap = BTreeMap<&'static str, Array2<f64>>;

/// Polynomial kernel `(a * g + c)^e` used by the feature uniformity loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub a: f64,
    pub c: f64,
    pub e: u32,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams { a: 1.0, c: 1e-7, e: 4 }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.c > 0.0 && self.e >= 1) {
            return Err(Error::Config(format!(
                "kernel needs a > 0, c > 0, e >= 1; got a={}, c={}, e={}",
                self.a, self.c, self.e
            )));
        }
        Ok(())
    }
}

fn same_shape(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    Ok(())
}

fn square(c: ArrayView2<'_, f64>) -> Result<()> {
    if c.nrows() != c.ncols() {
        return Err(Error::shape("square matrix", format!("{:?}", c.dim())));
    }
    Ok(())
}

/// `Zuᵀ Zi / B` over column-standardized batches.
pub fn cross_correlation(zu: ArrayView2<'_, f64>, zi: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    same_shape(zu, zi)?;
    let b = zu.nrows();
    if b < 2 {
        return Err(Error::Config(format!(
            "cross-correlation needs at least 2 rows, got {b}"
        )));
    }
    Ok(zu.t().dot(&zi) / b as f64)
}

/// Pulls `dL/dC` back to `(dL/dZu, dL/dZi)`.
pub fn cross_correlation_backward(
    zu: ArrayView2<'_, f64>,
    zi: ArrayView2<'_, f64>,
    dc: ArrayView2<'_, f64>,
) -> (Array2<f64>, Array2<f64>) {
    let b = zu.nrows() as f64;
    let dzu = zi.dot(&dc.t()) / b;
    let dzi = zu.dot(&dc) / b;
    (dzu, dzi)
}

/// User-item Barlow Twins loss on a cross-correlation matrix.
///
/// `(1/F) Σ_m (1 - C_mm)² + (γ/F) Σ_{m≠n} C_mn²`
pub fn uibt_loss(c: ArrayView2<'_, f64>, gamma: f64) -> Result<(f64, Array2<f64>)> {
    square(c)?;
    let f = c.nrows() as f64;
    let mut loss = 0.0;
    let mut dc = Array2::zeros(c.raw_dim());
    for ((m, n), &v) in c.indexed_iter() {
        if m == n {
            loss += (1.0 - v).powi(2) / f;
            dc[[m, n]] = -2.0 * (1.0 - v) / f;
        } else {
            loss += gamma * v * v / f;
            dc[[m, n]] = 2.0 * gamma * v / f;
        }
    }
    Ok((loss, dc))
}

/// Feature-wise polynomial-kernel uniformity, applied to users and items
/// separately and summed.
///
/// Each side is `½ log mean_{(m,n)} (a⟨Z:,m, Z:,n⟩ + c)^e`. The mean runs over
/// off-diagonal feature pairs, or over all `F²` pairs when
/// `include_diagonal` is set.
pub fn uuii_loss(
    zu: ArrayView2<'_, f64>,
    zi: ArrayView2<'_, f64>,
    kernel: KernelParams,
    include_diagonal: bool,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let (lu, du) = uuii_side(zu, kernel, include_diagonal)?;
    let (li, di) = uuii_side(zi, kernel, include_diagonal)?;
    Ok((lu + li, du, di))
}

fn uuii_side(z: ArrayView2<'_, f64>, kernel: KernelParams, include_diagonal: bool) -> Result<(f64, Array2<f64>)> {
    let (b, f) = z.dim();
    if b < 2 || f < 2 {
        return Err(Error::Config(format!(
            "uniformity loss needs B >= 2 and F >= 2, got B={b}, F={f}"
        )));
    }
    let gram = z.t().dot(&z);
    let e = kernel.e as i32;
    let count = if include_diagonal { f * f } else { f * (f - 1) } as f64;
    let mut sum = 0.0;
    for ((m, n), &g) in gram.indexed_iter() {
        if include_diagonal || m != n {
            sum += (kernel.a * g + kernel.c).powi(e);
        }
    }
    let mean = sum / count;
    if !mean.is_finite() || mean <= 0.0 {
        return Err(Error::Numeric(format!(
            "uniformity log argument must be positive and finite, got {mean}"
        )));
    }
    let loss = 0.5 * mean.ln();
    let scale = 0.5 / (mean * count);
    let mut dgram = Array2::zeros((f, f));
    for ((m, n), &g) in gram.indexed_iter() {
        if include_diagonal || m != n {
            dgram[[m, n]] = scale * kernel.e as f64 * kernel.a * (kernel.a * g + kernel.c).powi(e - 1);
        }
    }
    let sym = &dgram + &dgram.t();
    Ok((loss, z.dot(&sym)))
}

/// Mean negative cosine similarity between paired rows, with the gradient
/// for `online` only. Pairs where either row has zero norm contribute 0.
pub fn negative_cosine(online: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
    same_shape(online, target)?;
    let n = online.nrows();
    if n == 0 {
        return Err(Error::shape("at least one row", "0 rows"));
    }
    let mut loss = 0.0;
    let mut grad = Array2::zeros(online.raw_dim());
    for k in 0..n {
        let a = online.row(k);
        let t = target.row(k);
        let na = a.dot(&a).sqrt();
        let nt = t.dot(&t).sqrt();
        if na == 0.0 || nt == 0.0 {
            continue;
        }
        let cos = a.dot(&t) / (na * nt);
        loss -= cos / n as f64;
        let mut g = grad.row_mut(k);
        Zip::from(&mut g).and(&a).and(&t).for_each(|g, &av, &tv| {
            *g = -(tv / (na * nt) - cos * av / (na * na)) / n as f64;
        });
    }
    Ok((loss, grad))
}

/// Batch-wise loss with predictor outputs on the online branch and the mixed
/// historical views as constant targets:
/// `½ S(Pu, Êi) + ½ S(Êu, Pi)` with `S` the mean negative cosine.
pub fn bcl_loss(
    pu: ArrayView2<'_, f64>,
    pi: ArrayView2<'_, f64>,
    eu_hat: ArrayView2<'_, f64>,
    ei_hat: ArrayView2<'_, f64>,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    #[cfg(test)]
    probes::BCL_CALLS.with(|c| c.set(c.get() + 1));
    let (lu, gu) = negative_cosine(pu, ei_hat)?;
    let (li, gi) = negative_cosine(pi, eu_hat)?;
    Ok((0.5 * (lu + li), gu * 0.5, gi * 0.5))
}


/// Alignment plus hypersphere uniformity on row-normalized embeddings.
///
/// `mean ‖xu_k - xi_k‖² + γ · ½[log mean_{k≠l} e^{-2‖xu_k - xu_l‖²} + (same for items)]`
pub fn directau_loss(
    xu: ArrayView2<'_, f64>,
    xi: ArrayView2<'_, f64>,
    gamma_au: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    same_shape(xu, xi)?;
    let b = xu.nrows();
    if b < 2 {
        return Err(Error::Config(format!("uniformity needs at least 2 rows, got {b}")));
    }
    let diff = &xu - &xi;
    let align = diff.iter().map(|d| d * d).sum::<f64>() / b as f64;
    let mut dxu = &diff * (2.0 / b as f64);
    let mut dxi = -&dxu;

    let (uu, guu) = log_mean_gaussian_potential(xu);
    let (ui, gui) = log_mean_gaussian_potential(xi);
    let loss = align + gamma_au * 0.5 * (uu + ui);
    dxu.scaled_add(0.5 * gamma_au, &guu);
    dxi.scaled_add(0.5 * gamma_au, &gui);
    Ok((loss, dxu, dxi))
}

/// `log mean_{k≠l} exp(-2‖x_k - x_l‖²)` and its gradient, computed with a
/// max-shift for stability.
fn log_mean_gaussian_potential(x: ArrayView2<'_, f64>) -> (f64, Array2<f64>) {
    let b = x.nrows();
    let gram = x.dot(&x.t());
    let sq = gram.diag().to_owned();
    let mut logits = Array2::from_elem((b, b), f64::NEG_INFINITY);
    for k in 0..b {
        for l in 0..b {
            if k != l {
                logits[[k, l]] = -2.0 * (sq[k] + sq[l] - 2.0 * gram[[k, l]]).max(0.0);
            }
        }
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights = logits.mapv(|v| (v - max).exp());
    let total: f64 = weights.sum();
    let value = max + (total / (b * (b - 1)) as f64).ln();
    // each ordered pair (k,l) and (l,k) contributes -4(x_k - x_l) w_kl / Σw;
    // w is symmetric, so row k collects -8 Σ_l w_kl (x_k - x_l)
    let w = weights / total;
    let row_sums = w.sum_axis(Axis(1));
    let mut grad = w.dot(&x) * 8.0;
    for (k, mut row) in grad.outer_iter_mut().enumerate() {
        row.scaled_add(-8.0 * row_sums[k], &x.row(k));
    }
    (value, grad)
}

/// Redundancy-reduction term alone: `λ Σ_{m≠n} C_mn²`.
pub fn fcl_offdiag_loss(c: ArrayView2<'_, f64>, lambda: f64) -> Result<(f64, Array2<f64>)> {
    square(c)?;
    let mut loss = 0.0;
    let mut dc = Array2::zeros(c.raw_dim());
    for ((m, n), &v) in c.indexed_iter() {
        if m != n {
            loss += lambda * v * v;
            dc[[m, n]] = 2.0 * lambda * v;
        }
    }
    Ok((loss, dc))
}

#[derive(Debug, Clone)]
pub struct DclOutput {
    pub value: f64,
    pub dxu: Array2<f64>,
    pub dxi: Array2<f64>,
    pub dc: Array2<f64>,
}

/// DirectAU plus `λ` times the off-diagonal redundancy term.
pub fn dcl_loss(
    xu: ArrayView2<'_, f64>,
    xi: ArrayView2<'_, f64>,
    c: ArrayView2<'_, f64>,
    gamma_au: f64,
    lambda: f64,
) -> Result<DclOutput> {
    let (au, dxu, dxi) = directau_loss(xu, xi, gamma_au)?;
    let (fcl, dc) = fcl_offdiag_loss(c, 1.0)?;
    Ok(DclOutput {
        value: au + lambda * fcl,
        dxu,
        dxi,
        dc: dc * lambda,
    })
}

/// `-Σ log σ(pos - neg)` in the softplus form.
pub fn bpr_loss(
    scores_pos: ArrayView1<'_, f64>,
    scores_neg: ArrayView1<'_, f64>,
) -> Result<(f64, Array1<f64>, Array1<f64>)> {
    if scores_pos.len() != scores_neg.len() {
        return Err(Error::shape(scores_pos.len(), scores_neg.len()));
    }
    let mut loss = 0.0;
    let mut dpos = Array1::zeros(scores_pos.len());
    for (k, (&p, &n)) in scores_pos.iter().zip(scores_neg.iter()).enumerate() {
        let x = p - n;
        loss += softplus(-x);
        // d/dx softplus(-x) = -sigmoid(-x)
        dpos[k] = -sigmoid(-x);
    }
    let dneg = -&dpos;
    Ok((loss, dpos, dneg))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One objective's value and its gradients keyed by input name.
#[derive(Debug, Clone, Default)]
pub struct Component {
    pub value: f64,
    pub grads: GradMap,
}

impl Component {
    pub fn new(value: f64) -> Self {
        Component {
            value,
            grads: GradMap::new(),
        }
    }

    pub fn with_grad(mut self, key: &'static str, grad: Array2<f64>) -> Self {
        self.grads.insert(key, grad);
        self
    }
}

#[derive(Debug, Clone)]
pub struct LossReport {
    pub uibt: f64,
    pub uuii: f64,
    pub bcl: f64,
    pub total: f64,
    pub grads: GradMap,
}

/// `uibt + α·uuii + β·bcl`, with gradients merged by key.
pub fn total_loss(uibt: &Component, uuii: &Component, bcl: &Component, alpha: f64, beta: f64) -> LossReport {
    let mut grads = GradMap::new();
    for (comp, weight) in [(uibt, 1.0), (uuii, alpha), (bcl, beta)] {
        for (&key, g) in &comp.grads {
            match grads.get_mut(key) {
                Some(acc) => acc.scaled_add(weight, g),
                None => {
                    grads.insert(key, g * weight);
                }
            }
        }
    }
    LossReport {
        uibt: uibt.value,
        uuii: uuii.value,
        bcl: bcl.value,
        total: uibt.value + alpha * uuii.value + beta * bcl.value,
        grads,
    }
}

/// Per-feature batch standardization with biased variance; `eps` is added to
/// the standard deviation.
pub fn standardize_columns(y: ArrayView2<'_, f64>, eps: f64) -> (Array2<f64>, Array1<f64>) {
    let b = y.nrows() as f64;
    let mean = y.mean_axis(Axis(0)).expect("non-empty batch");
    let centered = &y - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / b;
    let std = var.mapv(f64::sqrt);
    let z = &centered / &(&std + eps);
    (z, std)
}

/// Backward of [`standardize_columns`]. Columns with zero spread get the
/// plain centered gradient (the spread term vanishes there).
pub fn standardize_columns_backward(
    y: ArrayView2<'_, f64>,
    std: ArrayView1<'_, f64>,
    dz: ArrayView2<'_, f64>,
    eps: f64,
) -> Array2<f64> {
    let b = y.nrows() as f64;
    let mean = y.mean_axis(Axis(0)).expect("non-empty batch");
    let centered = &y - &mean;
    let mut dy = Array2::zeros(y.raw_dim());
    for col in 0..y.ncols() {
        let s = std[col] + eps;
        let c = centered.column(col);
        let g = dz.column(col);
        let g_mean = g.sum() / b;
        let cross = if std[col] > 0.0 {
            g.dot(&c) / (b * std[col] * s * s)
        } else {
            0.0
        };
        Zip::from(dy.column_mut(col))
            .and(&c)
            .and(&g)
            .for_each(|d, &cv, &gv| *d = (gv - g_mean) / s - cv * cross);
    }
    dy
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, s};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    fn normalize_rows(x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            let n = row.dot(&row).sqrt();
            row /= n;
        }
        out
    }

    /// Max elementwise relative error between an analytic gradient and
    /// central differences of `f`.
    fn fd_check(x: &Array2<f64>, analytic: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> f64 {
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[idx];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn uibt_minimum_at_identity() {
        let (l, dc) = uibt_loss(Array2::<f64>::eye(5).view(), 0.3).unwrap();
        assert_eq!(l, 0.0);
        assert!(dc.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uibt_hand_values() {
        let c = array![[1.0, 0.5], [0.5, 1.0]];
        assert_abs_diff_eq!(uibt_loss(c.view(), 1.0).unwrap().0, 0.25, epsilon = 1e-15);
        for f in [2, 3, 7] {
            let z = Array2::<f64>::zeros((f, f));
            assert_abs_diff_eq!(uibt_loss(z.view(), 0.4).unwrap().0, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn cross_correlation_two_by_two() {
        // standardized columns of [[1,-1],[-1,1]] are themselves
        let z = array![[1.0, -1.0], [-1.0, 1.0]];
        let c = cross_correlation(z.view(), z.view()).unwrap();
        assert_eq!(c, array![[1.0, -1.0], [-1.0, 1.0]]);
        let zi = array![[1.0, 1.0], [-1.0, -1.0]];
        let c2 = cross_correlation(z.view(), zi.view()).unwrap();
        assert_eq!(c2, array![[1.0, 1.0], [-1.0, -1.0]]);
        assert_eq!(cross_correlation(zi.view(), z.view()).unwrap(), c2.t());
    }

    #[test]
    fn cross_correlation_of_whitened_data_is_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = Array2::from_shape_fn((20000, 4), |_| rand_distr_normal(&mut rng));
        let (z, _) = standardize_columns(y.view(), 1e-9);
        let c = cross_correlation(z.view(), z.view()).unwrap();
        for ((m, n), &v) in c.indexed_iter() {
            let target = if m == n { 1.0 } else { 0.0 };
            assert!((v - target).abs() < 0.05, "C[{m},{n}] = {v}");
        }
    }

    fn rand_distr_normal(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    #[test]
    fn cross_correlation_rejects_single_row() {
        let z = array![[1.0, 2.0]];
        assert!(cross_correlation(z.view(), z.view()).is_err());
    }

    #[test]
    fn uuii_orthogonal_columns() {
        // columns pairwise orthogonal: every off-diagonal inner product is 0
        let z = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]];
        let (l, _, _) = uuii_loss(z.view(), z.view(), KernelParams::default(), false).unwrap();
        let side = 0.5 * (1e-28f64).ln();
        assert_abs_diff_eq!(side, -28.0 * 10f64.ln() / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(side, -32.236, epsilon = 1e-3);
        assert_abs_diff_eq!(l, 2.0 * side, epsilon = 1e-9);
        assert_abs_diff_eq!(l, -64.472, epsilon = 1e-3);
    }

    #[test]
    fn uuii_identical_unit_columns() {
        let col = array![0.6, 0.8];
        let z = Array2::from_shape_fn((2, 3), |(r, _)| col[r]);
        let k = KernelParams { a: 1.0, c: 0.0, e: 4 };
        // c = 0 is outside validate() but the loss itself is defined
        let (lu, _) = uuii_side(z.view(), k, false).unwrap();
        assert_abs_diff_eq!(lu, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn uuii_row_permutation_invariant() {
        let zu = rand_mat(5, 4, 1);
        let zi = rand_mat(5, 4, 2);
        let perm = [3, 0, 4, 1, 2];
        let pu = Array2::from_shape_fn((5, 4), |(r, c)| zu[[perm[r], c]]);
        let pi = Array2::from_shape_fn((5, 4), |(r, c)| zi[[perm[r], c]]);
        let k = KernelParams::default();
        let a = uuii_loss(zu.view(), zi.view(), k, false).unwrap().0;
        let b = uuii_loss(pu.view(), pi.view(), k, false).unwrap().0;
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn uuii_decreases_as_off_diagonal_shrinks() {
        // two columns with inner product t * const
        let k = KernelParams::default();
        let mut prev = f64::INFINITY;
        for step in (1..=10).rev() {
            let t = step as f64 / 10.0;
            let z = array![[1.0, t], [1.0, t], [0.0, 1.0]];
            let (l, _) = uuii_side(z.view(), k, false).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn uuii_reports_nonpositive_log_argument() {
        let z = array![[1.0, -1.0], [1.0, -1.0]];
        let k = KernelParams { a: 1.0, c: 1e-7, e: 3 };
        assert!(matches!(uuii_side(z.view(), k, false), Err(Error::Numeric(_))));
    }

    #[test]
    fn bcl_extremes() {
        let e = normalize_rows(&rand_mat(4, 3, 5));
        let f = normalize_rows(&rand_mat(4, 3, 6));
        let (l, _, _) = bcl_loss(f.view(), e.view(), e.view(), f.view()).unwrap();
        assert_abs_diff_eq!(l, -1.0, epsilon = 1e-12);

        let a = array![[1.0, 0.0], [0.0, 2.0]];
        let b = array![[0.0, 3.0], [-1.0, 0.0]];
        let (l, _, _) = bcl_loss(a.view(), a.view(), a.view(), b.view()).unwrap();
        // S(a, b) = 0 for the user side, S(a, a) = -1 for the item side
        assert_abs_diff_eq!(l, -0.5, epsilon = 1e-12);
        let (l, _, _) = bcl_loss(a.view(), a.view(), b.view(), b.view()).unwrap();
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn bcl_row_scale_invariant() {
        let pu = rand_mat(4, 3, 1);
        let pi = rand_mat(4, 3, 2);
        let eu = rand_mat(4, 3, 3);
        let ei = rand_mat(4, 3, 4);
        let base = bcl_loss(pu.view(), pi.view(), eu.view(), ei.view()).unwrap().0;
        let mut scaled = pu.clone();
        scaled.row_mut(2).mapv_inplace(|v| v * 2.0);
        let after = bcl_loss(scaled.view(), pi.view(), eu.view(), ei.view()).unwrap().0;
        assert_abs_diff_eq!(base, after, epsilon = 1e-14);
    }

    #[test]
    fn bcl_zero_row_contributes_nothing() {
        let mut pu = rand_mat(3, 2, 1);
        pu.row_mut(0).fill(0.0);
        let pi = rand_mat(3, 2, 2);
        let e = rand_mat(3, 2, 3);
        let (_, gu, _) = bcl_loss(pu.view(), pi.view(), e.view(), e.view()).unwrap();
        assert!(gu.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn directau_collapsed_is_zero() {
        let v = array![0.6, 0.8];
        let x = Array2::from_shape_fn((4, 2), |(_, c)| v[c]);
        let (l, _, _) = directau_loss(x.view(), x.view(), 1.0).unwrap();
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn directau_antipodal_uniformity() {
        let x = array![[1.0, 0.0], [-1.0, 0.0]];
        let (u, _) = log_mean_gaussian_potential(x.view());
        assert_abs_diff_eq!(u, -8.0, epsilon = 1e-12);
    }

    #[test]
    fn directau_needs_two_rows() {
        let x = array![[1.0, 0.0]];
        assert!(directau_loss(x.view(), x.view(), 1.0).is_err());
    }

    #[test]
    fn fcl_offdiag_values() {
        assert_eq!(fcl_offdiag_loss(Array2::<f64>::eye(3).view(), 2.0).unwrap().0, 0.0);
        let mut c = Array2::<f64>::eye(3);
        c[[0, 2]] = 0.3;
        assert_abs_diff_eq!(fcl_offdiag_loss(c.view(), 1.0).unwrap().0, 0.09, epsilon = 1e-15);
        let ct = c.t().to_owned();
        assert_eq!(
            fcl_offdiag_loss(c.view(), 1.5).unwrap().0,
            fcl_offdiag_loss(ct.view(), 1.5).unwrap().0
        );
    }

    #[test]
    fn dcl_composition() {
        let xu = normalize_rows(&rand_mat(4, 3, 1));
        let xi = normalize_rows(&rand_mat(4, 3, 2));
        let c = rand_mat(3, 3, 3);
        let au = directau_loss(xu.view(), xi.view(), 1.0).unwrap().0;
        let d0 = dcl_loss(xu.view(), xi.view(), c.view(), 1.0, 0.0).unwrap();
        assert_eq!(d0.value, au);

        // directau term 0 (collapsed) and single off-diagonal 0.3
        let v = array![0.6, 0.8, 0.0];
        let x = Array2::from_shape_fn((3, 3), |(_, k)| v[k]);
        let mut c = Array2::<f64>::eye(3);
        c[[1, 0]] = 0.3;
        let d = dcl_loss(x.view(), x.view(), c.view(), 1.0, 2.0).unwrap();
        assert_abs_diff_eq!(d.value, 0.18, epsilon = 1e-12);
    }

    #[test]
    fn bpr_values() {
        let z = Array1::from(vec![0.3, -1.0, 2.0]);
        assert_abs_diff_eq!(
            bpr_loss(z.view(), z.view()).unwrap().0,
            3.0 * 2f64.ln(),
            epsilon = 1e-12
        );
        let big = Array1::from(vec![800.0]);
        let small = Array1::from(vec![0.0]);
        let (l, dp, _) = bpr_loss(big.view(), small.view()).unwrap();
        assert!((0.0..1e-300).contains(&l));
        assert!(dp[0].abs() < 1e-300);
        let (l, _, _) = bpr_loss(Array1::from(vec![1.0]).view(), small.view()).unwrap();
        assert_abs_diff_eq!(l, (1.0 + (-1f64).exp()).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(l, 0.3133, epsilon = 1e-4);
        let (l, _, _) = bpr_loss(small.view(), big.view()).unwrap();
        assert_abs_diff_eq!(l, 800.0, epsilon = 1e-9);
    }

    #[test]
    fn total_loss_weights_components() {
        let r = total_loss(
            &Component::new(0.25),
            &Component::new(-64.0),
            &Component::new(-1.0),
            0.2,
            5.0,
        );
        assert_abs_diff_eq!(r.total, -17.55, epsilon = 1e-12);
        let r0 = total_loss(
            &Component::new(0.7),
            &Component::new(3.0),
            &Component::new(2.0),
            0.0,
            0.0,
        );
        assert_eq!(r0.total, 0.7);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (b, f) in [(3, 3), (5, 6), (3, 6), (5, 3)] {
            let seed = (b * 10 + f) as u64;
            let zu = rand_mat(b, f, seed);
            let zi = rand_mat(b, f, seed + 1);

            let c = cross_correlation(zu.view(), zi.view()).unwrap();
            let (_, dc) = uibt_loss(c.view(), 0.7).unwrap();
            let (dzu, dzi) = cross_correlation_backward(zu.view(), zi.view(), dc.view());
            let uibt_of = |u: &Array2<f64>, i: &Array2<f64>| {
                uibt_loss(cross_correlation(u.view(), i.view()).unwrap().view(), 0.7)
                    .unwrap()
                    .0
            };
            assert!(fd_check(&zu, &dzu, |z| uibt_of(z, &zi)) < 1e-5);
            assert!(fd_check(&zi, &dzi, |z| uibt_of(&zu, z)) < 1e-5);

            for diag in [false, true] {
                let k = KernelParams::default();
                let (_, gu, gi) = uuii_loss(zu.view(), zi.view(), k, diag).unwrap();
                let uuii_of = |u: &Array2<f64>, i: &Array2<f64>| uuii_loss(u.view(), i.view(), k, diag).unwrap().0;
                assert!(fd_check(&zu, &gu, |z| uuii_of(z, &zi)) < 1e-5);
                assert!(fd_check(&zi, &gi, |z| uuii_of(&zu, z)) < 1e-5);
            }

            let eu = rand_mat(b, f, seed + 2);
            let ei = rand_mat(b, f, seed + 3);
            let (_, gpu, gpi) = bcl_loss(zu.view(), zi.view(), eu.view(), ei.view()).unwrap();
            let bcl_of =
                |u: &Array2<f64>, i: &Array2<f64>| bcl_loss(u.view(), i.view(), eu.view(), ei.view()).unwrap().0;
            assert!(fd_check(&zu, &gpu, |z| bcl_of(z, &zi)) < 1e-5);
            assert!(fd_check(&zi, &gpi, |z| bcl_of(&zu, z)) < 1e-5);

            let xu = normalize_rows(&zu);
            let xi = normalize_rows(&zi);
            let cm = rand_mat(f, f, seed + 4);
            let d = dcl_loss(xu.view(), xi.view(), cm.view(), 1.3, 0.6).unwrap();
            let dcl_of = |u: &Array2<f64>, i: &Array2<f64>, c: &Array2<f64>| {
                dcl_loss(u.view(), i.view(), c.view(), 1.3, 0.6).unwrap().value
            };
            assert!(fd_check(&xu, &d.dxu, |x| dcl_of(x, &xi, &cm)) < 1e-5);
            assert!(fd_check(&xi, &d.dxi, |x| dcl_of(&xu, x, &cm)) < 1e-5);
            assert!(fd_check(&cm, &d.dc, |c| dcl_of(&xu, &xi, c)) < 1e-5);

            let y = rand_mat(b, f, seed + 5);
            let w = rand_mat(b, f, seed + 6);
            let (_, std) = standardize_columns(y.view(), 1e-9);
            let dy = standardize_columns_backward(y.view(), std.view(), w.view(), 1e-9);
            assert!(fd_check(&y, &dy, |y| (standardize_columns(y.view(), 1e-9).0 * &w).sum()) < 1e-5);
        }
    }

    #[test]
    fn bpr_gradient_matches_finite_differences() {
        let pos = Array1::from(vec![0.5, -0.2, 1.5]);
        let neg = Array1::from(vec![0.1, 0.4, -0.7]);
        let (_, dp, dn) = bpr_loss(pos.view(), neg.view()).unwrap();
        let h = 1e-5;
        for k in 0..3 {
            let mut pp = pos.clone();
            pp[k] += h;
            let mut pm = pos.clone();
            pm[k] -= h;
            let fd =
                (bpr_loss(pp.view(), neg.view()).unwrap().0 - bpr_loss(pm.view(), neg.view()).unwrap().0) / (2.0 * h);
            assert!((fd - dp[k]).abs() < 1e-9);
            assert_eq!(dn[k], -dp[k]);
        }
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_std() {
        let y = rand_mat(7, 3, 9);
        let (z, _) = standardize_columns(y.view(), 1e-9);
        for col in z.columns() {
            assert_abs_diff_eq!(col.sum(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(col.dot(&col) / 7.0, 1.0, epsilon = 1e-6);
        }
        // constant column stays zero with zero gradient spread term
        let mut y = y;
        y.slice_mut(s![.., 1]).fill(2.0);
        let (z, std) = standardize_columns(y.view(), 1e-9);
        assert!(z.column(1).iter().all(|&v| v == 0.0));
        let dy = standardize_columns_backward(y.view(), std.view(), Array2::ones((7, 3)).view(), 1e-9);
        assert!(dy.iter().all(|v| v.is_finite()));
    }

    proptest! {
        #[test]
        fn uibt_is_nonnegative(vals in proptest::collection::vec(-2.0f64..2.0, 9), gamma in 0.0f64..1.0) {
            let c = Array2::from_shape_vec((3, 3), vals).unwrap();
            let (l, _) = uibt_loss(c.view(), gamma).unwrap();
            prop_assert!(l >= 0.0);
        }

        #[test]
        fn bcl_is_bounded(seed in 0u64..1000) {
            let (l, _, _) = bcl_loss(
                rand_mat(4, 3, seed).view(),
                rand_mat(4, 3, seed + 1).view(),
                rand_mat(4, 3, seed + 2).view(),
                rand_mat(4, 3, seed + 3).view(),
            ).unwrap();
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&l));
        }

        #[test]
        fn total_is_linear_in_weights(a in -5.0f64..5.0, b in -5.0f64..5.0, u in -2.0f64..2.0, v in -70.0f64..0.0, w in -1.0f64..1.0) {
            let r = total_loss(&Component::new(u), &Component::new(v), &Component::new(w), a, b);
            prop_assert!((r.total - (u + a * v + b * w)).abs() < 1e-12);
        }
    }
}
