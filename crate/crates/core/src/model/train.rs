use super::kernels::{
    affine_input_grad, affine_param_grads, col2im, global_pool_backward, inject_backward, relu_backward,
    softmax_into,
};
use super::{encode_batch, EnsembleParameters, Network};
use crate::env::{CELLS, NUM_CLASSES, NUM_REWARDS};
use crate::error::{Error, Result};
use crate::experience::TransitionRecord;
use crate::scalar::Scalar;

/// Per-head losses of one batch, averaged over that head's masked-in items.
#[derive(Debug, Clone, PartialEq)]
pub struct LossStats {
    pub state: Vec<f64>,
    pub reward: Vec<f64>,
    /// Masked-in items per head.
    pub items: Vec<usize>,
    /// The optimised objective: summed over (item, head) pairs, divided by
    /// the batch size.
    pub total: f64,
}

/// Gradient of [`LossStats::total`] with respect to the trainable blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub trunk: Vec<T>,
    pub heads: Vec<Vec<T>>,
}

/// Masked cross-entropy and its gradient.
///
/// For every item `i` and head `k` with mask bit set, the loss adds the
/// cell-averaged cross-entropy of the next-state logits plus the reward
/// cross-entropy. Logits include the scaled prior, which receives no
/// gradient. Heads without any masked-in item get an exactly zero gradient.
pub fn loss_and_gradients<T: Scalar>(
    net: &Network<T>,
    batch: &[&TransitionRecord],
) -> Result<(LossStats, Gradients<T>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let heads = net.heads();
    let layout = &net.layout;
    let n = batch.len();
    let rows = n * CELLS;
    let samples: Vec<_> = batch.iter().map(|r| (r.state, r.action)).collect();
    let (out, cache) = net.forward_cached(encode_batch(&samples), n);

    let inv_batch = T::of(1.0 / n as f64);
    let inv_cells = T::of(1.0 / CELLS as f64);
    let mut stats = LossStats {
        state: vec![0.0; heads],
        reward: vec![0.0; heads],
        items: vec![0; heads],
        total: 0.0,
    };
    let mut grads = Gradients {
        trunk: vec![T::zero(); layout.trunk_len],
        heads: vec![vec![T::zero(); layout.head_len]; heads],
    };
    let mut dfeatures = vec![T::zero(); rows * layout.features];
    let mut dtrunk_pool = vec![T::zero(); n * 2 * layout.trunk_out];
    let mut probs = [T::zero(); NUM_CLASSES];
    let mut rprobs = [T::zero(); NUM_REWARDS];

    for k in 0..heads {
        let p = &net.params.heads[k];
        let g = &mut grads.heads[k];
        let mut ds = vec![T::zero(); rows * NUM_CLASSES];
        let mut dr = vec![T::zero(); n * NUM_REWARDS];
        for (i, rec) in batch.iter().enumerate() {
            if !rec.mask.get(k) {
                continue;
            }
            stats.items[k] += 1;
            let mut state_ce = 0.0;
            for (cell, &target) in rec.next_state.cells().iter().enumerate() {
                let row = (i * CELLS + cell) * NUM_CLASSES;
                softmax_into(&out.state_logits[k][row..row + NUM_CLASSES], &mut probs);
                state_ce += neg_log(probs[target.index()]);
                for c in 0..NUM_CLASSES {
                    let y = if c == target.index() { T::one() } else { T::zero() };
                    ds[row + c] = (probs[c] - y) * inv_cells * inv_batch;
                }
            }
            softmax_into(&out.reward_logits[k][i * NUM_REWARDS..(i + 1) * NUM_REWARDS], &mut rprobs);
            let reward_ce = neg_log(rprobs[rec.reward.index()]);
            for j in 0..NUM_REWARDS {
                let y = if j == rec.reward.index() { T::one() } else { T::zero() };
                dr[i * NUM_REWARDS + j] = (rprobs[j] - y) * inv_batch;
            }
            state_ce /= CELLS as f64;
            stats.state[k] += state_ce;
            stats.reward[k] += reward_ce;
            stats.total += (state_ce + reward_ce) / n as f64;
        }
        if stats.items[k] == 0 {
            continue;
        }
        stats.state[k] /= stats.items[k] as f64;
        stats.reward[k] /= stats.items[k] as f64;

        let hc = &cache.heads[k];
        let (s, r) = (&layout.state, &layout.reward);
        let (sw, sb) = g.split_at_mut(s.bias);
        let state_in = if layout.hidden.is_some() { &hc.hidden } else { &cache.features };
        affine_param_grads(state_in, &ds, rows, s.fan_in, s.fan_out, &mut sw[s.weight..], &mut sb[..s.fan_out]);
        let reward_in = if layout.hidden.is_some() { &hc.pool } else { &cache.trunk_pool };
        let (rw, rb) = g.split_at_mut(r.bias);
        affine_param_grads(reward_in, &dr, n, r.fan_in, r.fan_out, &mut rw[r.weight..], &mut rb[..r.fan_out]);
        match layout.hidden {
            Some(h) => {
                let mut dh = vec![T::zero(); rows * h.fan_out];
                affine_input_grad(&ds, s.weight(p), rows, s.fan_in, s.fan_out, &mut dh);
                let mut dpool = vec![T::zero(); n * r.fan_in];
                affine_input_grad(&dr, r.weight(p), n, r.fan_in, r.fan_out, &mut dpool);
                global_pool_backward(&dpool, &hc.argmax, n, h.fan_out, &mut dh);
                relu_backward(&hc.hidden, &mut dh);
                let (hw, hb) = g.split_at_mut(h.bias);
                affine_param_grads(&cache.features, &dh, rows, h.fan_in, h.fan_out, &mut hw[h.weight..], &mut hb[..h.fan_out]);
                affine_input_grad(&dh, h.weight(p), rows, h.fan_in, h.fan_out, &mut dfeatures);
            }
            None => {
                affine_input_grad(&ds, s.weight(p), rows, s.fan_in, s.fan_out, &mut dfeatures);
                affine_input_grad(&dr, r.weight(p), n, r.fan_in, r.fan_out, &mut dtrunk_pool);
            }
        }
    }
    if !stats.total.is_finite() {
        return Err(Error::Divergence(format!("non-finite loss {}", stats.total)));
    }
    if stats.items.iter().all(|&c| c == 0) || layout.convs.is_empty() {
        return Ok((stats, grads));
    }

    // Back through pool-and-inject into the trunk output.
    let c = layout.trunk_out;
    let mut dact = if layout.features != c {
        let (dx, dp) = inject_backward(&dfeatures, n, c);
        for (d, g) in dtrunk_pool.iter_mut().zip(dp) {
            *d += g;
        }
        dx
    } else {
        dfeatures
    };
    global_pool_backward(&dtrunk_pool, &cache.trunk_argmax, n, c, &mut dact);

    for (l, conv) in layout.convs.iter().enumerate().rev() {
        relu_backward(&cache.acts[l], &mut dact);
        let (w, b) = grads.trunk.split_at_mut(conv.bias);
        affine_param_grads(&cache.cols[l], &dact, rows, 9 * conv.cin, conv.cout, &mut w[conv.weight..], &mut b[..conv.cout]);
        if l == 0 {
            break;
        }
        let mut dcols = vec![T::zero(); rows * 9 * conv.cin];
        let weight = &net.params.trunk[conv.weight..conv.bias];
        affine_input_grad(&dact, weight, rows, 9 * conv.cin, conv.cout, &mut dcols);
        dact = col2im(&dcols, n, conv.cin);
    }
    Ok((stats, grads))
}

/// `-ln p`, clamped away from infinity but keeping NaN visible.
fn neg_log<T: Scalar>(p: T) -> f64 {
    let p = p.to_f64().unwrap_or(f64::NAN);
    if p.is_nan() {
        f64::NAN
    } else {
        -p.max(f64::MIN_POSITIVE).ln()
    }
}

#[derive(Debug, Clone)]
struct AdamBlock<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> AdamBlock<T> {
    fn new(len: usize) -> Self {
        AdamBlock { m: vec![T::zero(); len], v: vec![T::zero(); len], t: 0 }
    }

    fn update(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let step = T::of(lr * (1.0 - B2.powi(self.t)).sqrt() / (1.0 - B1.powi(self.t)));
        let (b1, b2, eps) = (T::of(B1), T::of(B2), T::of(EPS));
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        }
    }
}

/// Adam over the trainable blocks of a [`Network`].
///
/// Each block keeps its own moments and step count. A block is only
/// touched in a step where it received gradient from at least one
/// masked-in item, so a head never drifts on momentum alone.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    net: Network<T>,
    trunk: AdamBlock<T>,
    heads: Vec<AdamBlock<T>>,
    steps: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(net: Network<T>) -> Self {
        let trunk = AdamBlock::new(net.layout.trunk_len);
        let heads = (0..net.heads()).map(|_| AdamBlock::new(net.layout.head_len)).collect();
        Trainer { net, trunk, heads, steps: 0 }
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn into_network(self) -> Network<T> {
        self.net
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn train_step(&mut self, batch: &[&TransitionRecord]) -> Result<LossStats> {
        let (stats, grads) = loss_and_gradients(&self.net, batch)?;
        let lr = self.net.config.learning_rate;
        let EnsembleParameters { trunk, heads } = &mut self.net.params;
        if stats.items.iter().any(|&c| c > 0) {
            self.trunk.update(trunk, &grads.trunk, lr);
        }
        for (k, (p, g)) in heads.iter_mut().zip(&grads.heads).enumerate() {
            if stats.items[k] > 0 {
                self.heads[k].update(p, g, lr);
            }
        }
        if !self.net.params.all_finite() {
            return Err(Error::Divergence("non-finite parameters after update".into()));
        }
        self.steps += 1;
        Ok(stats)
    }
}
