//! Central finite-difference checks of every objective composed with the
//! encoder, projector and predictor.
//!
//! Each check perturbs every trainable scalar, so instances are kept tiny
//! (at most 8 nodes, F at most 6).

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{Batch, InteractionTable};
use crate::error::Result;
use crate::graph::BipartiteGraph;
use crate::losses::{total_loss, KernelParams};
use crate::model::{mix_historical, ForwardCache, HeadGrads, HistoricalCache, ModelState, ParamGrads};
use crate::objective::{self, heads_from};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-5;
/// Denominator floor of the relative error, so entries whose true gradient
/// is zero are judged on absolute error instead of dividing by ~0.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckedLoss {
    Uibt,
    Uuii,
    Bcl,
    DirectAu,
    Dcl,
    Bpr,
    Total,
}

impl CheckedLoss {
    pub const ALL: [CheckedLoss; 7] = [
        CheckedLoss::Uibt,
        CheckedLoss::Uuii,
        CheckedLoss::Bcl,
        CheckedLoss::DirectAu,
        CheckedLoss::Dcl,
        CheckedLoss::Bpr,
        CheckedLoss::Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckedLoss::Uibt => "uibt",
            CheckedLoss::Uuii => "uuii",
            CheckedLoss::Bcl => "bcl",
            CheckedLoss::DirectAu => "directau",
            CheckedLoss::Dcl => "dcl",
            CheckedLoss::Bpr => "bpr",
            CheckedLoss::Total => "total",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub loss: &'static str,
    pub layers: usize,
    pub dim: usize,
    pub params_checked: usize,
    pub max_rel_error: f64,
    pub worst_group: &'static str,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < REL_TOLERANCE
    }
}

/// A tiny fixed problem: graph, model, batch, frozen targets and negatives.
pub struct Instance {
    pub graph: BipartiteGraph,
    pub model: ModelState,
    pub batch: Batch,
    pub eu_hat: Array2<f64>,
    pub ei_hat: Array2<f64>,
    pub negatives: Vec<u32>,
}

impl Instance {
    /// 3 users and 4 items (7 nodes).
    pub fn new(dim: usize, layers: usize, seed: u64) -> Result<Self> {
        let table = InteractionTable::from_pairs(3, 4, vec![(0, 0), (0, 1), (1, 1), (1, 2), (2, 3), (2, 0), (0, 3)])?;
        let graph = BipartiteGraph::build(&table)?;
        let mut model = ModelState::init(3, 4, dim, layers, false, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
        // non-zero biases exercise their gradients
        model.predictor.b1.mapv_inplace(|_| rng.gen_range(-0.3..0.3));
        model.predictor.b2.mapv_inplace(|_| rng.gen_range(-0.3..0.3));
        // larger embedding scale keeps the finite differences well above
        // round-off
        model.embeddings.mapv_inplace(|v| v * 3.0);
        let batch = Batch {
            users: vec![0, 1, 2, 0],
            items: vec![0, 2, 3, 1],
        };
        let cache = model.forward(&graph, &batch)?;
        let mut hist = HistoricalCache::new(model.node_count(), dim);
        hist.embeddings = Array2::from_shape_simple_fn((model.node_count(), dim), || rng.gen_range(-1.0..1.0));
        hist.initialized = true;
        let (eu, ei) = mix_historical(&cache, &hist, 0.3);
        let (eu_hat, ei_hat) = objective::normalized_targets(eu, ei);
        Ok(Instance {
            graph,
            model,
            batch,
            eu_hat,
            ei_hat,
            negatives: vec![3, 0, 1, 2],
        })
    }

    /// Loss value and head gradients of one objective at the current cache.
    pub fn evaluate(&self, which: CheckedLoss, cache: &ForwardCache) -> Result<(f64, HeadGrads)> {
        let kernel = KernelParams::default();
        let comp = match which {
            CheckedLoss::Uibt => objective::uibt_component(cache, 0.05)?,
            CheckedLoss::Uuii => objective::uuii_component(cache, kernel, false)?,
            CheckedLoss::Bcl => objective::bcl_component(cache, &self.eu_hat, &self.ei_hat)?,
            CheckedLoss::DirectAu => objective::directau_component(cache, 1.0)?,
            CheckedLoss::Dcl => objective::dcl_component(cache, 1.0, 0.5)?,
            CheckedLoss::Bpr => {
                let (value, d_final) = objective::bpr_objective(cache, &self.negatives, self.model.n_users)?;
                let heads = HeadGrads {
                    final_emb: Some(d_final),
                    ..Default::default()
                };
                return Ok((value, heads));
            }
            CheckedLoss::Total => {
                let report = total_loss(
                    &objective::uibt_component(cache, 0.05)?,
                    &objective::uuii_component(cache, kernel, false)?,
                    &objective::bcl_component(cache, &self.eu_hat, &self.ei_hat)?,
                    0.2,
                    5.0,
                );
                return Ok((report.total, heads_from(&report.grads)));
            }
        };
        Ok((comp.value, heads_from(&comp.grads)))
    }

    fn loss_at(&self, which: CheckedLoss, model: &ModelState) -> Result<f64> {
        let cache = model.forward(&self.graph, &self.batch)?;
        Ok(self.evaluate(which, &cache)?.0)
    }
}

const GROUPS: [&str; 6] = ["embeddings", "projector", "w1", "b1", "w2", "b2"];

fn group_mut<'a>(m: &'a mut ModelState, group: &str) -> &'a mut [f64] {
    let p = &mut m.predictor;
    let slice = match group {
        "embeddings" => m.embeddings.as_slice_mut(),
        "projector" => m.projector.weight.as_slice_mut(),
        "w1" => p.w1.as_slice_mut(),
        "b1" => p.b1.as_slice_mut(),
        "w2" => p.w2.as_slice_mut(),
        "b2" => p.b2.as_slice_mut(),
        _ => unreachable!("unknown group {group}"),
    };
    slice.expect("standard layout")
}

fn group_grad<'a>(g: &'a ParamGrads, group: &str) -> &'a [f64] {
    let slice = match group {
        "embeddings" => g.embeddings.as_slice(),
        "projector" => g.projector.as_ref().expect("trainable projector").as_slice(),
        "w1" => g.w1.as_slice(),
        "b1" => g.b1.as_slice(),
        "w2" => g.w2.as_slice(),
        "b2" => g.b2.as_slice(),
        _ => unreachable!("unknown group {group}"),
    };
    slice.expect("standard layout")
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn check(instance: &Instance, which: CheckedLoss) -> Result<CheckResult> {
    let cache = instance.model.forward(&instance.graph, &instance.batch)?;
    let (_, heads) = instance.evaluate(which, &cache)?;
    let grads = instance.model.backward(&instance.graph, &cache, &heads)?;

    let mut worst = 0.0f64;
    let mut worst_group = GROUPS[0];
    let mut count = 0;
    let mut probe = instance.model.clone();
    for group in GROUPS {
        let analytic = group_grad(&grads, group).to_vec();
        for (idx, &a) in analytic.iter().enumerate() {
            let orig = group_mut(&mut probe, group)[idx];
            group_mut(&mut probe, group)[idx] = orig + FD_STEP;
            let plus = instance.loss_at(which, &probe)?;
            group_mut(&mut probe, group)[idx] = orig - FD_STEP;
            let minus = instance.loss_at(which, &probe)?;
            group_mut(&mut probe, group)[idx] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(a, numeric);
            if err > worst {
                worst = err;
                worst_group = group;
            }
            count += 1;
        }
    }
    Ok(CheckResult {
        loss: which.name(),
        layers: instance.model.layers,
        dim: instance.model.dim,
        params_checked: count,
        max_rel_error: worst,
        worst_group,
    })
}

/// Every objective on two encoder shapes: (F=5, L=2) and (F=6, L=1).
pub fn run_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    for (dim, layers) in [(5, 2), (6, 1)] {
        let instance = Instance::new(dim, layers, seed)?;
        for which in CheckedLoss::ALL {
            results.push(check(&instance, which)?);
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn instance_respects_size_limits() {
        let inst = Instance::new(6, 2, 0).unwrap();
        assert!(inst.graph.node_count() <= 8);
        assert!(inst.model.dim <= 6 && inst.model.layers <= 2);
    }

    #[test]
    fn uibt_and_bpr_pass() {
        let inst = Instance::new(4, 2, 1).unwrap();
        for which in [CheckedLoss::Uibt, CheckedLoss::Bpr] {
            let r = check(&inst, which).unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }
}
