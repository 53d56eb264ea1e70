//! Pairwise ranking loss and its gradients.
//!
//! The loss for a triple (u, i⁺, j⁻) is `−ln σ(score⁺ − score⁻)` plus L2
//! regularization on the three embedding rows. Gradients flow by reverse
//! accumulation through the readout, the stacked relaxed propagation
//! layers, and the initial `tanh(beta·e)` layer; the derivative of
//! `tanh(beta·x)` is `beta·(1 − tanh²(beta·x))`.

use rayon::prelude::*;

use crate::graph::{BipartiteGraph, Triple};
use crate::matrix::Matrix;
use crate::model::{forward_relaxed, EmbeddingTable, LayerState, ModelConfig, ModelError, Readout};
use crate::scalar::Real;

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function, stable on both tails.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss for one triple given its two scores and a precomputed
/// regularization term: −ln σ(pos − neg) + reg.
pub fn bpr_loss_value(score_pos: f64, score_neg: f64, reg: f64) -> f64 {
    softplus(-(score_pos - score_neg)) + reg
}

#[derive(Debug)]
pub struct BatchGradients<R> {
    /// Mean loss over the batch.
    pub loss: f64,
    /// d(mean loss)/d(embeddings), shape (N+M) × K.
    pub grads: Matrix<R>,
}

/// Mean BPR loss of a batch of triples and its gradient with respect to
/// every embedding entry, through the full relaxed forward.
pub fn bpr_batch<R: Real>(
    graph: &BipartiteGraph,
    emb: &EmbeddingTable<R>,
    cfg: &ModelConfig,
    beta: f64,
    lambda: f64,
    triples: &[Triple],
) -> Result<BatchGradients<R>, ModelError> {
    assert!(!triples.is_empty(), "empty batch");
    let state = forward_relaxed(graph, emb, cfg, beta)?;
    let n = graph.num_users();
    let k = emb.bits() as usize;
    let k_f = k as f64;

    let read_owned;
    let read: &Matrix<R> = match cfg.readout {
        Readout::LastLayer => state.last(),
        Readout::MeanThenSign => {
            read_owned = state.readout(cfg);
            &read_owned
        }
    };

    // Score the batch and scatter dL/d(readout) into the touched rows.
    let mut grad_read = Matrix::<R>::zeros(read.rows(), k);
    let mut loss_sum = 0.0f64;
    for t in triples {
        let (ur, pr, nr) = (t.user as usize, n + t.pos as usize, n + t.neg as usize);
        let su = read.row(ur);
        let si = read.row(pr);
        let sj = read.row(nr);
        let mut dot_pos = R::zero();
        let mut dot_neg = R::zero();
        for kk in 0..k {
            dot_pos += su[kk] * si[kk];
            dot_neg += su[kk] * sj[kk];
        }
        let d = (dot_pos - dot_neg).to_config() / k_f;
        let reg = lambda
            * (sq_norm(emb.row(ur)) + sq_norm(emb.row(pr)) + sq_norm(emb.row(nr)));
        loss_sum += softplus(-d) + reg;

        // dL/dd = −σ(−d); the 1/K of the prediction folds into the scatter.
        let g = R::from_config(-sigmoid(-d) / k_f);
        for kk in 0..k {
            let (su_k, si_k, sj_k) = (su[kk], si[kk], sj[kk]);
            grad_read.row_mut(ur)[kk] += g * (si_k - sj_k);
            grad_read.row_mut(pr)[kk] += g * su_k;
            grad_read.row_mut(nr)[kk] -= g * su_k;
        }
    }

    let mut grads = backward(graph, &state, cfg, beta, &grad_read);

    // Per-triple L2 terms differentiate directly against the raw rows.
    let two_lambda = R::from_config(2.0 * lambda);
    for t in triples {
        for r in [t.user as usize, n + t.pos as usize, n + t.neg as usize] {
            let er: Vec<R> = emb.row(r).to_vec();
            let g = grads.row_mut(r);
            for kk in 0..k {
                g[kk] += two_lambda * er[kk];
            }
        }
    }

    let inv_b = R::from_config(1.0 / triples.len() as f64);
    grads.data_mut().iter_mut().for_each(|v| *v *= inv_b);
    Ok(BatchGradients {
        loss: loss_sum / triples.len() as f64,
        grads,
    })
}

fn sq_norm<R: Real>(row: &[R]) -> f64 {
    row.iter().map(|&v| (v * v).to_config()).sum()
}

/// Reverse accumulation from d/d(readout) down to d/d(embeddings).
fn backward<R: Real>(
    graph: &BipartiteGraph,
    state: &LayerState<R>,
    cfg: &ModelConfig,
    beta: f64,
    grad_read: &Matrix<R>,
) -> Matrix<R> {
    let layers = state.states.len() - 1; // L
    let rows = grad_read.rows();
    let k = grad_read.cols();
    let n = graph.num_users();
    let s = cfg.self_weight;

    // Readout weight of each layer state.
    let w = |l: usize| -> f64 {
        match cfg.readout {
            Readout::LastLayer => {
                if l == layers {
                    1.0
                } else {
                    0.0
                }
            }
            Readout::MeanThenSign => 1.0 / (layers + 1) as f64,
        }
    };

    let scaled = |weight: f64| -> Option<R> {
        if weight == 0.0 {
            None
        } else {
            Some(R::from_config(weight))
        }
    };

    // g = dL/dh^(l), starting at the top layer.
    let mut g = Matrix::<R>::zeros(rows, k);
    if let Some(wl) = scaled(w(layers)) {
        g.data_mut()
            .iter_mut()
            .zip(grad_read.data().iter())
            .for_each(|(gv, &rv)| *gv = rv * wl);
    }

    for l in (1..=layers).rev() {
        let h_l = &state.states[l];
        // T[v] = g[v] ⊙ (1 − h^l[v]²) · beta / D_v.
        let mut t = Matrix::<R>::zeros(rows, k);
        t.par_rows_mut().enumerate().for_each(|(v, out)| {
            let deg = node_degree(graph, n, v);
            let denom = if cfg.normalize_neighbors {
                s + 1.0
            } else {
                s + deg as f64
            };
            let scale = R::from_config(beta / denom);
            let hv = h_l.row(v);
            let gv = g.row(v);
            for kk in 0..k {
                out[kk] = gv[kk] * (R::one() - hv[kk] * hv[kk]) * scale;
            }
        });

        // dL/dh^(l-1)[x] = s·T[x] + Σ_{v ∈ N(x)} c_v · T[v]
        // with c_v = 1/deg(v) when the aggregate is a mean, else 1,
        // plus the readout contribution of layer l−1.
        let sw = R::from_config(s);
        let w_prev = scaled(w(l - 1));
        let mut g_prev = Matrix::<R>::zeros(rows, k);
        g_prev.par_rows_mut().enumerate().for_each(|(x, out)| {
            let tx = t.row(x);
            for kk in 0..k {
                out[kk] = sw * tx[kk];
            }
            let (neighbors, user_side) = if x < n {
                (graph.user_neighbors(x as u32), true)
            } else {
                (graph.item_neighbors((x - n) as u32), false)
            };
            for &nb in neighbors {
                let v = if user_side { n + nb as usize } else { nb as usize };
                let coef = if cfg.normalize_neighbors {
                    let dv = node_degree(graph, n, v);
                    R::from_config(1.0 / dv as f64)
                } else {
                    R::one()
                };
                let tv = t.row(v);
                for kk in 0..k {
                    out[kk] += coef * tv[kk];
                }
            }
            if let Some(wp) = w_prev {
                let rr = grad_read.row(x);
                for kk in 0..k {
                    out[kk] += wp * rr[kk];
                }
            }
        });
        g = g_prev;
    }

    // Initial layer: h^(0) = tanh(beta·e).
    let h0 = &state.states[0];
    let beta_r = R::from_config(beta);
    let mut grads = Matrix::<R>::zeros(rows, k);
    grads.par_rows_mut().enumerate().for_each(|(v, out)| {
        let hv = h0.row(v);
        let gv = g.row(v);
        for kk in 0..k {
            out[kk] = gv[kk] * (R::one() - hv[kk] * hv[kk]) * beta_r;
        }
    });
    grads
}

#[inline]
fn node_degree(graph: &BipartiteGraph, n: usize, v: usize) -> usize {
    if v < n {
        graph.user_degree(v as u32)
    } else {
        graph.item_degree((v - n) as u32)
    }
}
