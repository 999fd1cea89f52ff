//! Trainable parameters, the layer-mean graph encoder and its reverse pass.
//!
//! Forward path for a batch of `(user, item)` pairs:
//!
//! ```text
//! E0 --Â--> X1 --Â--> ... XL      E = mean(X0..XL)
//! x = E[batch] / ‖E[batch]‖       (row-normalized)
//! z = standardize(x W)            projector, feeds the feature-wise losses
//! p = relu(x W1 + b1) W2 + b2     predictor, feeds the batch-wise loss
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Batch;
use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::losses::{standardize_columns, standardize_columns_backward};

/// Added to the per-feature standard deviation in the projector.
pub const STANDARDIZE_EPS: f64 = 1e-9;

const CHECKPOINT_MAGIC: &[u8; 4] = b"RDCL";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub weight: Array2<f64>,
    /// When set the linear map is the fixed identity and only the batch
    /// standardization remains.
    pub identity: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub n_users: usize,
    pub n_items: usize,
    pub dim: usize,
    pub layers: usize,
    /// Layer-0 embeddings, users first then items.
    pub embeddings: Array2<f64>,
    pub projector: Projector,
    pub predictor: Predictor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub embeddings: Array2<f64>,
    /// `None` when the projector is the fixed identity.
    pub projector: Option<Array2<f64>>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ProjectorCache {
    pub pre: Array2<f64>,
    pub std: Array1<f64>,
    pub out: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct PredictorCache {
    pub hidden_pre: Array2<f64>,
    pub hidden: Array2<f64>,
    pub out: Array2<f64>,
}

/// Intermediates of one forward pass, kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Mean over layers, all nodes.
    pub final_emb: Array2<f64>,
    pub user_nodes: Vec<usize>,
    pub item_nodes: Vec<usize>,
    pub user_norms: Array1<f64>,
    pub item_norms: Array1<f64>,
    /// Row-normalized batch slices.
    pub xu: Array2<f64>,
    pub xi: Array2<f64>,
    pub proj_u: ProjectorCache,
    pub proj_i: ProjectorCache,
    pub pred_u: PredictorCache,
    pub pred_i: PredictorCache,
}

impl ForwardCache {
    pub fn zu(&self) -> &Array2<f64> {
        &self.proj_u.out
    }

    pub fn zi(&self) -> &Array2<f64> {
        &self.proj_i.out
    }

    pub fn pu(&self) -> &Array2<f64> {
        &self.pred_u.out
    }

    pub fn pi(&self) -> &Array2<f64> {
        &self.pred_i.out
    }
}

/// Upstream gradients arriving at the heads of the forward graph. Absent
/// entries are zero.
#[derive(Debug, Clone, Default)]
pub struct HeadGrads {
    pub zu: Option<Array2<f64>>,
    pub zi: Option<Array2<f64>>,
    pub pu: Option<Array2<f64>>,
    pub pi: Option<Array2<f64>>,
    /// Gradients on the row-normalized batch slices.
    pub xu: Option<Array2<f64>>,
    pub xi: Option<Array2<f64>>,
    /// Gradient on the unnormalized final embedding of every node.
    pub final_emb: Option<Array2<f64>>,
}

/// Final embeddings from a prior iteration, used as the target view.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalCache {
    pub embeddings: Array2<f64>,
    pub initialized: bool,
}

fn xavier(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..bound))
}

impl ModelState {
    pub fn init(
        n_users: usize,
        n_items: usize,
        dim: usize,
        layers: usize,
        identity_projector: bool,
        seed: u64,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!(
                "embedding dimension must be at least 2, got {dim}"
            )));
        }
        let n = n_users + n_items;
        if n == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = xavier(n, dim, n, dim, &mut rng);
        let projector = if identity_projector {
            Projector {
                weight: Array2::eye(dim),
                identity: true,
            }
        } else {
            Projector {
                weight: xavier(dim, dim, dim, dim, &mut rng),
                identity: false,
            }
        };
        let predictor = Predictor {
            w1: xavier(dim, dim, dim, dim, &mut rng),
            b1: Array1::zeros(dim),
            w2: xavier(dim, dim, dim, dim, &mut rng),
            b2: Array1::zeros(dim),
        };
        Ok(ModelState {
            n_users,
            n_items,
            dim,
            layers,
            embeddings,
            projector,
            predictor,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn all_finite(&self) -> bool {
        let p = &self.predictor;
        self.embeddings.iter().all(|v| v.is_finite())
            && self.projector.weight.iter().all(|v| v.is_finite())
            && p.w1
                .iter()
                .chain(p.b1.iter())
                .chain(p.w2.iter())
                .chain(p.b2.iter())
                .all(|v| v.is_finite())
    }

    fn check_graph(&self, graph: &BipartiteGraph) -> Result<()> {
        if graph.n_users != self.n_users || graph.n_items != self.n_items {
            return Err(Error::shape(
                format!("graph with {} users, {} items", self.n_users, self.n_items),
                format!("{} users, {} items", graph.n_users, graph.n_items),
            ));
        }
        Ok(())
    }

    /// Per-layer embeddings `X0..XL`.
    pub fn encode_layers(&self, graph: &BipartiteGraph) -> Result<Vec<Array2<f64>>> {
        self.check_graph(graph)?;
        let mut layers = vec![self.embeddings.clone()];
        for _ in 0..self.layers {
            let next = graph.propagate(layers.last().expect("layer 0").view())?;
            layers.push(next);
        }
        Ok(layers)
    }

    /// Layer-mean final embedding of every node.
    pub fn final_embeddings(&self, graph: &BipartiteGraph) -> Result<Array2<f64>> {
        self.check_graph(graph)?;
        let mut acc = self.embeddings.clone();
        let mut cur = self.embeddings.clone();
        for _ in 0..self.layers {
            cur = graph.propagate(cur.view())?;
            acc += &cur;
        }
        acc /= (self.layers + 1) as f64;
        Ok(acc)
    }

    pub fn forward(&self, graph: &BipartiteGraph, batch: &Batch) -> Result<ForwardCache> {
        if batch.users.len() != batch.items.len() || batch.is_empty() {
            return Err(Error::shape(
                "non-empty batch of equal-length users and items",
                format!("{} users, {} items", batch.users.len(), batch.items.len()),
            ));
        }
        let final_emb = self.final_embeddings(graph)?;
        let user_nodes: Vec<usize> = batch.users.iter().map(|&u| u as usize).collect();
        let item_nodes: Vec<usize> = batch.items.iter().map(|&i| self.n_users + i as usize).collect();
        for (&u, &i) in batch.users.iter().zip(&batch.items) {
            if u as usize >= self.n_users || i as usize >= self.n_items {
                return Err(Error::Config(format!("batch pair ({u}, {i}) out of range")));
            }
        }
        let (xu, user_norms) = normalized_rows(final_emb.view(), &user_nodes);
        let (xi, item_norms) = normalized_rows(final_emb.view(), &item_nodes);
        let proj_u = self.project(xu.view());
        let proj_i = self.project(xi.view());
        let pred_u = self.predict(xu.view());
        let pred_i = self.predict(xi.view());
        Ok(ForwardCache {
            final_emb,
            user_nodes,
            item_nodes,
            user_norms,
            item_norms,
            xu,
            xi,
            proj_u,
            proj_i,
            pred_u,
            pred_i,
        })
    }

    fn project(&self, x: ArrayView2<'_, f64>) -> ProjectorCache {
        let pre = if self.projector.identity {
            x.to_owned()
        } else {
            x.dot(&self.projector.weight)
        };
        let (out, std) = standardize_columns(pre.view(), STANDARDIZE_EPS);
        ProjectorCache { pre, std, out }
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> PredictorCache {
        let p = &self.predictor;
        let hidden_pre = x.dot(&p.w1) + &p.b1;
        let hidden = hidden_pre.mapv(|v| v.max(0.0));
        let out = hidden.dot(&p.w2) + &p.b2;
        PredictorCache {
            hidden_pre,
            hidden,
            out,
        }
    }

    pub fn backward(&self, graph: &BipartiteGraph, cache: &ForwardCache, heads: &HeadGrads) -> Result<ParamGrads> {
        let f = self.dim;
        let mut d_proj = Array2::zeros((f, f));
        let p = &self.predictor;
        let mut dw1 = Array2::zeros((f, f));
        let mut db1 = Array1::zeros(f);
        let mut dw2 = Array2::zeros((f, f));
        let mut db2 = Array1::zeros(f);

        let sides = [
            (&cache.xu, &cache.proj_u, &cache.pred_u, &heads.zu, &heads.pu, &heads.xu),
            (&cache.xi, &cache.proj_i, &cache.pred_i, &heads.zi, &heads.pi, &heads.xi),
        ];
        let mut dx_sides = Vec::with_capacity(2);
        for (x, proj, pred, dz, dp, dx_direct) in sides {
            let mut dx = match dx_direct {
                Some(g) => {
                    check_dims(g.view(), x.view())?;
                    g.clone()
                }
                None => Array2::zeros(x.raw_dim()),
            };
            if let Some(dz) = dz {
                check_dims(dz.view(), x.view())?;
                let dpre = standardize_columns_backward(proj.pre.view(), proj.std.view(), dz.view(), STANDARDIZE_EPS);
                if self.projector.identity {
                    dx += &dpre;
                } else {
                    d_proj += &x.t().dot(&dpre);
                    dx += &dpre.dot(&self.projector.weight.t());
                }
            }
            if let Some(dp) = dp {
                check_dims(dp.view(), x.view())?;
                dw2 += &pred.hidden.t().dot(dp);
                db2 += &dp.sum_axis(Axis(0));
                let mut dh = dp.dot(&p.w2.t());
                Zip::from(&mut dh).and(&pred.hidden_pre).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
                dw1 += &x.t().dot(&dh);
                db1 += &dh.sum_axis(Axis(0));
                dx += &dh.dot(&p.w1.t());
            }
            dx_sides.push(dx);
        }

        let mut d_final = match &heads.final_emb {
            Some(g) => {
                check_dims(g.view(), cache.final_emb.view())?;
                g.clone()
            }
            None => Array2::zeros(cache.final_emb.raw_dim()),
        };
        scatter_normalize_backward(
            &mut d_final,
            &dx_sides[0],
            &cache.xu,
            &cache.user_norms,
            &cache.user_nodes,
        );
        scatter_normalize_backward(
            &mut d_final,
            &dx_sides[1],
            &cache.xi,
            &cache.item_norms,
            &cache.item_nodes,
        );

        // E = (1/(L+1)) Σ_l Â^l E0, so dE0 = (1/(L+1)) Σ_l (Âᵀ)^l dE
        let mut acc = d_final.clone();
        let mut cur = d_final;
        for _ in 0..self.layers {
            cur = graph.propagate_transpose(cur.view())?;
            acc += &cur;
        }
        acc /= (self.layers + 1) as f64;

        Ok(ParamGrads {
            embeddings: acc,
            projector: (!self.projector.identity).then_some(d_proj),
            w1: dw1,
            b1: db1,
            w2: dw2,
            b2: db2,
        })
    }

    pub fn save_checkpoint(&self, hist: &HistoricalCache, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_checkpoint(hist, &mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_checkpoint(&self, hist: &HistoricalCache, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for v in [self.n_users, self.n_items, self.dim, self.layers] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        let p = &self.predictor;
        let blocks = [self.embeddings.iter(), self.projector.weight.iter(), p.w1.iter()];
        for block in blocks {
            write_f64s(w, block)?;
        }
        write_f64s(w, p.b1.iter())?;
        write_f64s(w, p.w2.iter())?;
        write_f64s(w, p.b2.iter())?;
        write_f64s(w, hist.embeddings.iter())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelState, HistoricalCache)> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(&mut BufReader::new(file))
    }

    pub fn read_checkpoint(r: &mut impl Read) -> Result<(ModelState, HistoricalCache)> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_owned());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf).map_err(|_| bad("truncated header"))?;
            *d = usize::try_from(u64::from_le_bytes(buf)).map_err(|_| bad("dimension overflow"))?;
        }
        let [n_users, n_items, dim, layers] = dims;
        let n = n_users.checked_add(n_items).ok_or_else(|| bad("dimension overflow"))?;
        if dim < 2 || n == 0 {
            return Err(bad("invalid dimensions"));
        }
        let mut read_mat = |rows: usize, cols: usize| -> Result<Array2<f64>> {
            let data = read_f64s(r, rows * cols).map_err(|_| bad("truncated parameter block"))?;
            Ok(Array2::from_shape_vec((rows, cols), data).expect("sized above"))
        };
        let embeddings = read_mat(n, dim)?;
        let proj = read_mat(dim, dim)?;
        let w1 = read_mat(dim, dim)?;
        let b1 = read_mat(1, dim)?.into_shape_with_order(dim).expect("row");
        let w2 = read_mat(dim, dim)?;
        let b2 = read_mat(1, dim)?.into_shape_with_order(dim).expect("row");
        let hist = read_mat(n, dim)?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(|_| bad("read error"))? != 0 {
            return Err(bad("trailing bytes after parameter blocks"));
        }
        let identity = proj == Array2::<f64>::eye(dim);
        Ok((
            ModelState {
                n_users,
                n_items,
                dim,
                layers,
                embeddings,
                projector: Projector { weight: proj, identity },
                predictor: Predictor { w1, b1, w2, b2 },
            },
            HistoricalCache {
                embeddings: hist,
                initialized: true,
            },
        ))
    }
}

fn write_f64s<'a>(w: &mut impl Write, vals: impl Iterator<Item = &'a f64>) -> std::io::Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn check_dims(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{:?}", b.dim()), format!("{:?}", a.dim())));
    }
    Ok(())
}

/// Gathers rows and scales each to unit norm; zero rows stay zero.
pub fn normalized_rows(emb: ArrayView2<'_, f64>, nodes: &[usize]) -> (Array2<f64>, Array1<f64>) {
    let mut out = Array2::zeros((nodes.len(), emb.ncols()));
    let mut norms = Array1::zeros(nodes.len());
    for (k, &node) in nodes.iter().enumerate() {
        let row = emb.row(node);
        let norm = row.dot(&row).sqrt();
        norms[k] = norm;
        if norm > 0.0 {
            out.row_mut(k).assign(&(&row / norm));
        }
    }
    (out, norms)
}

/// Row-normalizes a matrix in place; zero rows stay zero.
pub fn normalize_rows_in_place(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
}

/// Adds `(I - x̃x̃ᵀ) g / ‖x‖` for every batch row into its node's gradient.
fn scatter_normalize_backward(
    d_final: &mut Array2<f64>,
    dx: &Array2<f64>,
    x_unit: &Array2<f64>,
    norms: &Array1<f64>,
    nodes: &[usize],
) {
    for (k, &node) in nodes.iter().enumerate() {
        let norm = norms[k];
        if norm == 0.0 {
            continue;
        }
        let g = dx.row(k);
        let u = x_unit.row(k);
        let radial = u.dot(&g);
        let mut target = d_final.row_mut(node);
        Zip::from(&mut target)
            .and(&g)
            .and(&u)
            .for_each(|t, &gv, &uv| *t += (gv - radial * uv) / norm);
    }
}

impl HistoricalCache {
    pub fn new(nodes: usize, dim: usize) -> Self {
        HistoricalCache {
            embeddings: Array2::zeros((nodes, dim)),
            initialized: false,
        }
    }

    /// On first use the cache becomes a copy of the current final embedding.
    pub fn ensure_initialized(&mut self, cache: &ForwardCache) {
        if !self.initialized {
            self.embeddings.assign(&cache.final_emb);
            self.initialized = true;
        }
    }
}

/// `τ·E_hist + (1-τ)·E` on the batch rows. The result is a constant target.
pub fn mix_historical(cache: &ForwardCache, hist: &HistoricalCache, tau: f64) -> (Array2<f64>, Array2<f64>) {
    let mix = |nodes: &[usize]| {
        let mut out = Array2::zeros((nodes.len(), cache.final_emb.ncols()));
        for (k, &node) in nodes.iter().enumerate() {
            let mut row = out.row_mut(k);
            row.scaled_add(tau, &hist.embeddings.row(node));
            row.scaled_add(1.0 - tau, &cache.final_emb.row(node));
        }
        out
    };
    (mix(&cache.user_nodes), mix(&cache.item_nodes))
}

/// Copies this iteration's final-embedding rows for the batch nodes into the
/// cache; all other rows are untouched.
pub fn update_historical(hist: &mut HistoricalCache, cache: &ForwardCache) {
    for &node in cache.user_nodes.iter().chain(&cache.item_nodes) {
        hist.embeddings.row_mut(node).assign(&cache.final_emb.row(node));
    }
    hist.initialized = true;
}
