//! Glue between a [`ForwardCache`] and the loss functions: each component
//! reads the cache slices it needs and reports gradients keyed by head.

use ndarray::{Array1, Array2};

use crate::error::Result;
use crate::losses::{self, keys, Component, GradMap, KernelParams};
use crate::model::{normalize_rows_in_place, ForwardCache, HeadGrads};

pub fn uibt_component(cache: &ForwardCache, gamma: f64) -> Result<Component> {
    let c = losses::cross_correlation(cache.zu().view(), cache.zi().view())?;
    let (value, dc) = losses::uibt_loss(c.view(), gamma)?;
    let (dzu, dzi) = losses::cross_correlation_backward(cache.zu().view(), cache.zi().view(), dc.view());
    Ok(Component::new(value).with_grad(keys::ZU, dzu).with_grad(keys::ZI, dzi))
}

pub fn uuii_component(cache: &ForwardCache, kernel: KernelParams, include_diagonal: bool) -> Result<Component> {
    let (value, dzu, dzi) = losses::uuii_loss(cache.zu().view(), cache.zi().view(), kernel, include_diagonal)?;
    Ok(Component::new(value).with_grad(keys::ZU, dzu).with_grad(keys::ZI, dzi))
}

/// Batch-wise loss against frozen targets `(Êu, Êi)`.
pub fn bcl_component(cache: &ForwardCache, eu_hat: &Array2<f64>, ei_hat: &Array2<f64>) -> Result<Component> {
    let (value, dpu, dpi) = losses::bcl_loss(cache.pu().view(), cache.pi().view(), eu_hat.view(), ei_hat.view())?;
    Ok(Component::new(value).with_grad(keys::PU, dpu).with_grad(keys::PI, dpi))
}

/// Normalized targets for the batch-wise loss from a raw historical mix.
pub fn normalized_targets(mut eu_hat: Array2<f64>, mut ei_hat: Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    normalize_rows_in_place(&mut eu_hat);
    normalize_rows_in_place(&mut ei_hat);
    (eu_hat, ei_hat)
}

pub fn directau_component(cache: &ForwardCache, gamma_au: f64) -> Result<Component> {
    let (value, dxu, dxi) = losses::directau_loss(cache.xu.view(), cache.xi.view(), gamma_au)?;
    Ok(Component::new(value).with_grad(keys::XU, dxu).with_grad(keys::XI, dxi))
}

/// DirectAU on the normalized rows plus `λ` times the redundancy term of the
/// projector's cross-correlation.
pub fn dcl_component(cache: &ForwardCache, gamma_au: f64, lambda: f64) -> Result<Component> {
    let c = losses::cross_correlation(cache.zu().view(), cache.zi().view())?;
    let out = losses::dcl_loss(cache.xu.view(), cache.xi.view(), c.view(), gamma_au, lambda)?;
    let (dzu, dzi) = losses::cross_correlation_backward(cache.zu().view(), cache.zi().view(), out.dc.view());
    Ok(Component::new(out.value)
        .with_grad(keys::XU, out.dxu)
        .with_grad(keys::XI, out.dxi)
        .with_grad(keys::ZU, dzu)
        .with_grad(keys::ZI, dzi))
}

/// BPR over `(user, positive, negative)` triples scored by inner products of
/// unnormalized final embeddings. `neg_items` are item ids aligned with the
/// batch. Returns the loss and the gradient on the full final embedding.
pub fn bpr_objective(cache: &ForwardCache, neg_items: &[u32], n_users: usize) -> Result<(f64, Array2<f64>)> {
    let e = &cache.final_emb;
    let b = cache.user_nodes.len();
    let neg_nodes: Vec<usize> = neg_items.iter().map(|&j| n_users + j as usize).collect();
    let mut pos = Array1::zeros(b);
    let mut neg = Array1::zeros(b);
    for k in 0..b {
        let u = e.row(cache.user_nodes[k]);
        pos[k] = u.dot(&e.row(cache.item_nodes[k]));
        neg[k] = u.dot(&e.row(neg_nodes[k]));
    }
    let (value, dpos, dneg) = losses::bpr_loss(pos.view(), neg.view())?;
    let mut d_final = Array2::zeros(e.raw_dim());
    for k in 0..b {
        let (un, inn, jn) = (cache.user_nodes[k], cache.item_nodes[k], neg_nodes[k]);
        let eu = e.row(un).to_owned();
        let du = &e.row(inn) * dpos[k] + &e.row(jn) * dneg[k];
        d_final.row_mut(un).scaled_add(1.0, &du);
        d_final.row_mut(inn).scaled_add(dpos[k], &eu);
        d_final.row_mut(jn).scaled_add(dneg[k], &eu);
    }
    Ok((value, d_final))
}

pub fn heads_from(grads: &GradMap) -> HeadGrads {
    HeadGrads {
        zu: grads.get(keys::ZU).cloned(),
        zi: grads.get(keys::ZI).cloned(),
        pu: grads.get(keys::PU).cloned(),
        pi: grads.get(keys::PI).cloned(),
        xu: grads.get(keys::XU).cloned(),
        xi: grads.get(keys::XI).cloned(),
        final_emb: None,
    }
}
