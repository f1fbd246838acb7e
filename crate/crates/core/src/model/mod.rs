//! K-headed convolutional forward model with optional randomized priors.
//!
//! Architecture: a trunk of 3x3 convolutions with ReLU, an optional
//! pool-and-inject block (global max and mean broadcast back to every cell),
//! then K independent heads. Each head maps the per-cell features to next
//! state class logits (1x1 convolution, optionally through a hidden 1x1
//! layer) and pools its hidden map to produce reward class logits through a
//! fully connected layer.
//!
//! With priors enabled a second, frozen network of the same shape is
//! evaluated alongside and its logits are added with weight `beta`.

mod checkpoint;
pub(crate) mod kernels;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{encode_input_into, Action, Frame, CELLS, INPUT_CHANNELS, NUM_CLASSES, NUM_REWARDS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use kernels::{affine, global_pool, im2col, inject, relu_in_place};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{loss_and_gradients, Gradients, LossStats, Trainer};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Number of heads K.
    pub heads: usize,
    /// Prior scale.
    pub beta: f64,
    pub use_prior: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Output channels of each 3x3 trunk convolution.
    pub trunk_channels: Vec<usize>,
    pub pool_inject: bool,
    /// Width of a per-head hidden 1x1 layer, 0 for none.
    pub head_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            heads: 10,
            beta: 3.0,
            use_prior: false,
            learning_rate: 1e-3,
            batch_size: 32,
            trunk_channels: vec![16, 16],
            pool_inject: true,
            head_hidden: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.heads == 0 {
            return fail("heads must be at least 1");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return fail("beta must be finite and non-negative");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.trunk_channels.contains(&0) {
            return fail("trunk channel counts must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvLayout {
    cin: usize,
    cout: usize,
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dense {
    fan_in: usize,
    fan_out: usize,
    weight: usize,
    bias: usize,
}

impl Dense {
    fn at(fan_in: usize, fan_out: usize, offset: &mut usize) -> Self {
        let d = Dense { fan_in, fan_out, weight: *offset, bias: *offset + fan_in * fan_out };
        *offset += fan_in * fan_out + fan_out;
        d
    }

    fn weight<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.weight..self.weight + self.fan_in * self.fan_out]
    }

    fn bias<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.bias..self.bias + self.fan_out]
    }
}

/// Offsets of every tensor inside the flat trunk and head parameter blocks.
///
/// Trunk block: for each convolution, weights `[9 * cin][cout]` (taps
/// row-major over the 3x3 window, then input channel) followed by bias.
/// Head block: optional hidden `[features][hidden]` + bias, state
/// `[in][6]` + bias, reward `[2 * pooled][5]` + bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    convs: Vec<ConvLayout>,
    trunk_len: usize,
    trunk_out: usize,
    features: usize,
    hidden: Option<Dense>,
    state: Dense,
    reward: Dense,
    head_len: usize,
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        let mut convs = Vec::new();
        let mut offset = 0;
        let mut cin = INPUT_CHANNELS;
        for &cout in &config.trunk_channels {
            let weight = offset;
            offset += 9 * cin * cout;
            convs.push(ConvLayout { cin, cout, weight, bias: offset });
            offset += cout;
            cin = cout;
        }
        let trunk_len = offset;
        let trunk_out = cin;
        let features = if config.pool_inject { 3 * trunk_out } else { trunk_out };

        let mut offset = 0;
        let hidden = (config.head_hidden > 0).then(|| Dense::at(features, config.head_hidden, &mut offset));
        let state_in = hidden.map_or(features, |h| h.fan_out);
        let state = Dense::at(state_in, NUM_CLASSES, &mut offset);
        // Reward pools the head's hidden map, or the trunk output without
        // the injected channels.
        let pooled = hidden.map_or(trunk_out, |h| h.fan_out);
        let reward = Dense::at(2 * pooled, NUM_REWARDS, &mut offset);
        Layout { convs, trunk_len, trunk_out, features, hidden, state, reward, head_len: offset }
    }

    pub fn trunk_len(&self) -> usize {
        self.trunk_len
    }

    pub fn head_len(&self) -> usize {
        self.head_len
    }
}

/// Trainable parameters: one shared trunk block and K disjoint head blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleParameters<T> {
    pub trunk: Vec<T>,
    pub heads: Vec<Vec<T>>,
}

impl<T: Scalar> EnsembleParameters<T> {
    fn random(layout: &Layout, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut trunk = vec![T::zero(); layout.trunk_len];
        for conv in &layout.convs {
            he_uniform(&mut trunk[conv.weight..conv.bias], 9 * conv.cin, rng);
        }
        let heads = (0..heads)
            .map(|_| {
                let mut p = vec![T::zero(); layout.head_len];
                for d in layout.hidden.iter().chain([&layout.state, &layout.reward]) {
                    he_uniform(&mut p[d.weight..d.bias], d.fan_in, rng);
                }
                p
            })
            .collect();
        EnsembleParameters { trunk, heads }
    }

    pub fn len(&self) -> usize {
        self.trunk.len() + self.heads.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        self.trunk.iter().chain(self.heads.iter().flatten()).all(|v| v.is_finite())
    }
}

/// Frozen prior networks; empty when priors are disabled.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorParameters<T>(Option<EnsembleParameters<T>>);

impl<T> PriorParameters<T> {
    pub fn empty() -> Self {
        PriorParameters(None)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_none()
    }

    pub fn params(&self) -> Option<&EnsembleParameters<T>> {
        self.0.as_ref()
    }
}

fn he_uniform<T: Scalar>(w: &mut [T], fan_in: usize, rng: &mut ChaCha8Rng) {
    let limit = (6.0 / fan_in as f64).sqrt();
    for v in w {
        *v = T::of(rng.random_range(-limit..limit));
    }
}

/// Logits of one head for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput<T> {
    /// `[row][col][class]`, `CELLS * 6` values.
    pub state_logits: Vec<T>,
    pub reward_logits: [T; NUM_REWARDS],
}

/// Logits of every head for a batch of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput<T> {
    pub batch: usize,
    /// Per head, `batch * CELLS * 6`.
    pub state_logits: Vec<Vec<T>>,
    /// Per head, `batch * 5`.
    pub reward_logits: Vec<Vec<T>>,
}

impl<T: Scalar> BatchOutput<T> {
    pub fn heads(&self) -> usize {
        self.state_logits.len()
    }

    pub fn sample(&self, b: usize) -> Vec<HeadOutput<T>> {
        (0..self.heads())
            .map(|k| HeadOutput {
                state_logits: self.state_logits[k][b * CELLS * NUM_CLASSES..(b + 1) * CELLS * NUM_CLASSES].to_vec(),
                reward_logits: self.reward_logits[k][b * NUM_REWARDS..(b + 1) * NUM_REWARDS]
                    .try_into()
                    .expect("five reward logits"),
            })
            .collect()
    }

    fn add_scaled(&mut self, other: &BatchOutput<T>, scale: T) {
        let pairs = self
            .state_logits
            .iter_mut()
            .zip(&other.state_logits)
            .chain(self.reward_logits.iter_mut().zip(&other.reward_logits));
        for (dst, src) in pairs {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    fn check_finite(&self) -> Result<()> {
        let finite = self.state_logits.iter().chain(&self.reward_logits).flatten().all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::Divergence("non-finite logits in forward pass".into()))
        }
    }
}

/// Intermediate activations kept for the backward pass.
pub(crate) struct ForwardCache<T> {
    pub cols: Vec<Vec<T>>,
    /// Post-ReLU output of each trunk convolution.
    pub acts: Vec<Vec<T>>,
    pub trunk_pool: Vec<T>,
    pub trunk_argmax: Vec<usize>,
    pub features: Vec<T>,
    pub heads: Vec<HeadCache<T>>,
}

pub(crate) struct HeadCache<T> {
    pub hidden: Vec<T>,
    pub pool: Vec<T>,
    pub argmax: Vec<usize>,
}

/// Run one parameter set over an encoded batch.
pub(crate) fn forward_params<T: Scalar>(
    layout: &Layout,
    params: &EnsembleParameters<T>,
    input: Vec<T>,
    batch: usize,
) -> (BatchOutput<T>, ForwardCache<T>) {
    let rows = batch * CELLS;
    let mut cols = Vec::with_capacity(layout.convs.len());
    let mut acts: Vec<Vec<T>> = Vec::with_capacity(layout.convs.len());
    for conv in &layout.convs {
        let x = acts.last().unwrap_or(&input);
        let c = im2col(x, batch, conv.cin);
        let w = &params.trunk[conv.weight..conv.bias];
        let b = &params.trunk[conv.bias..conv.bias + conv.cout];
        let mut a = affine(&c, w, b, rows, 9 * conv.cin, conv.cout);
        relu_in_place(&mut a);
        cols.push(c);
        acts.push(a);
    }
    let trunk_out = acts.last().unwrap_or(&input);
    let (trunk_pool, trunk_argmax) = global_pool(trunk_out, batch, layout.trunk_out);
    let features = if layout.features != layout.trunk_out {
        inject(trunk_out, &trunk_pool, batch, layout.trunk_out)
    } else {
        trunk_out.clone()
    };

    let mut out = BatchOutput { batch, state_logits: Vec::new(), reward_logits: Vec::new() };
    let mut heads = Vec::with_capacity(params.heads.len());
    for p in &params.heads {
        let (hidden, pool, argmax) = match layout.hidden {
            Some(h) => {
                let mut hid = affine(&features, h.weight(p), h.bias(p), rows, h.fan_in, h.fan_out);
                relu_in_place(&mut hid);
                let (pool, argmax) = global_pool(&hid, batch, h.fan_out);
                (hid, pool, argmax)
            }
            None => (Vec::new(), Vec::new(), Vec::new()),
        };
        let state_in = if layout.hidden.is_some() { &hidden } else { &features };
        let reward_in = if layout.hidden.is_some() { &pool } else { &trunk_pool };
        let s = &layout.state;
        out.state_logits.push(affine(state_in, s.weight(p), s.bias(p), rows, s.fan_in, s.fan_out));
        let r = &layout.reward;
        out.reward_logits.push(affine(reward_in, r.weight(p), r.bias(p), batch, r.fan_in, r.fan_out));
        heads.push(HeadCache { hidden, pool, argmax });
    }
    let cache = ForwardCache { cols, acts, trunk_pool, trunk_argmax, features, heads };
    (out, cache)
}

pub(crate) fn encode_batch<T: Scalar>(samples: &[(Frame, Action)]) -> Vec<T> {
    let per = CELLS * INPUT_CHANNELS;
    let mut input = vec![T::zero(); samples.len() * per];
    for (chunk, (frame, action)) in input.chunks_exact_mut(per).zip(samples) {
        encode_input_into(frame, *action, chunk);
    }
    input
}

/// A trained (or freshly initialised) ensemble together with its priors.
///
/// Forward passes take `&self`, so a network can be shared read-only across
/// planning threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    config: ModelConfig,
    layout: Layout,
    params: EnsembleParameters<T>,
    priors: PriorParameters<T>,
}

impl<T: Scalar> Network<T> {
    /// Random initialisation. Trainable and prior parameters come from
    /// independent streams of the same seed.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = EnsembleParameters::random(&layout, config.heads, &mut rng);
        let priors = if config.use_prior {
            let mut prior_rng = ChaCha8Rng::seed_from_u64(seed);
            prior_rng.set_stream(1);
            PriorParameters(Some(EnsembleParameters::random(&layout, config.heads, &mut prior_rng)))
        } else {
            PriorParameters::empty()
        };
        Ok(Network { config, layout, params, priors })
    }

    pub fn from_parts(config: ModelConfig, params: EnsembleParameters<T>, priors: PriorParameters<T>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let check = |p: &EnsembleParameters<T>, what: &str| {
            if p.trunk.len() != layout.trunk_len
                || p.heads.len() != config.heads
                || p.heads.iter().any(|h| h.len() != layout.head_len)
            {
                Err(Error::ConfigMismatch(format!("{what} shapes do not match the configuration")))
            } else {
                Ok(())
            }
        };
        check(&params, "trainable parameter")?;
        match (&priors.0, config.use_prior) {
            (Some(p), true) => check(p, "prior parameter")?,
            (None, false) => {}
            _ => return Err(Error::ConfigMismatch("prior presence does not match use_prior".into())),
        }
        Ok(Network { config, layout, params, priors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn heads(&self) -> usize {
        self.config.heads
    }

    pub fn params(&self) -> &EnsembleParameters<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut EnsembleParameters<T> {
        &mut self.params
    }

    pub fn priors(&self) -> &PriorParameters<T> {
        &self.priors
    }

    /// Logits of all heads for a batch of `(frame, action)` inputs, priors
    /// included.
    pub fn forward_batch(&self, samples: &[(Frame, Action)]) -> Result<BatchOutput<T>> {
        let (out, _) = self.forward_cached(encode_batch(samples), samples.len());
        out.check_finite()?;
        Ok(out)
    }

    pub fn forward_all_heads(&self, frame: &Frame, action: Action) -> Result<Vec<HeadOutput<T>>> {
        Ok(self.forward_batch(&[(*frame, action)])?.sample(0))
    }

    pub(crate) fn forward_cached(&self, input: Vec<T>, batch: usize) -> (BatchOutput<T>, ForwardCache<T>) {
        let prior_input = self.priors.0.as_ref().map(|_| input.clone());
        let (mut out, cache) = forward_params(&self.layout, &self.params, input, batch);
        if let (Some(prior), Some(x)) = (&self.priors.0, prior_input) {
            let (prior_out, _) = forward_params(&self.layout, prior, x, batch);
            out.add_scaled(&prior_out, T::of(self.config.beta));
        }
        (out, cache)
    }

    /// Convert to another precision (used to check gradients in `f64`).
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv = |p: &EnsembleParameters<T>| EnsembleParameters {
            trunk: p.trunk.iter().map(|v| U::of(v.to_f64().unwrap())).collect(),
            heads: p.heads.iter().map(|h| h.iter().map(|v| U::of(v.to_f64().unwrap())).collect()).collect(),
        };
        Network {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: conv(&self.params),
            priors: PriorParameters(self.priors.0.as_ref().map(conv)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Maze, Pos};

    fn tiny(heads: usize, use_prior: bool) -> ModelConfig {
        ModelConfig {
            heads,
            use_prior,
            trunk_channels: vec![4],
            pool_inject: true,
            head_hidden: 0,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Network::<f32>::init(tiny(3, true), 11).unwrap();
        let b = Network::<f32>::init(tiny(3, true), 11).unwrap();
        assert_eq!(a, b);
        let c = Network::<f32>::init(tiny(3, true), 12).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn heads_start_different() {
        let n = Network::<f32>::init(tiny(3, false), 0).unwrap();
        assert_ne!(n.params().heads[0], n.params().heads[1]);
        assert_ne!(n.params().heads[1], n.params().heads[2]);
    }

    #[test]
    fn prior_gate() {
        let off = Network::<f32>::init(tiny(2, false), 0).unwrap();
        assert!(off.priors().is_empty());
        let on = Network::<f32>::init(tiny(2, true), 0).unwrap();
        assert!(!on.priors().is_empty());
        // Prior stream is independent of the trainable stream.
        assert_ne!(on.priors().params().unwrap(), on.params());
        assert_eq!(on.params(), off.params());
    }

    #[test]
    fn single_head_shapes() {
        let n = Network::<f32>::init(tiny(1, false), 0).unwrap();
        let out = n.forward_all_heads(&Maze::default().initial_frame(), Action::Left).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].state_logits.len(), 15 * 19 * 6);
        assert_eq!(out[0].reward_logits.len(), 5);
    }

    #[test]
    fn zero_beta_matches_no_prior() {
        let frame = Maze::default().initial_frame();
        let with = Network::<f64>::init(ModelConfig { beta: 0.0, ..tiny(3, true) }, 5).unwrap();
        let without = Network::<f64>::init(tiny(3, false), 5).unwrap();
        let a = with.forward_all_heads(&frame, Action::Up).unwrap();
        let b = without.forward_all_heads(&frame, Action::Up).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prior_adds_scaled_logits() {
        let frame = Maze::default().initial_frame();
        let config = ModelConfig { beta: 2.5, ..tiny(2, true) };
        let net = Network::<f64>::init(config.clone(), 9).unwrap();
        let combined = net.forward_all_heads(&frame, Action::Down).unwrap();
        let layout = Layout::new(&config);
        let x = encode_batch::<f64>(&[(frame, Action::Down)]);
        let (f, _) = forward_params(&layout, net.params(), x.clone(), 1);
        let (p, _) = forward_params(&layout, net.priors().params().unwrap(), x, 1);
        for k in 0..2 {
            for i in 0..CELLS * NUM_CLASSES {
                let want = f.state_logits[k][i] + 2.5 * p.state_logits[k][i];
                assert!((combined[k].state_logits[i] - want).abs() < 1e-12);
            }
            for i in 0..NUM_REWARDS {
                let want = f.reward_logits[k][i] + 2.5 * p.reward_logits[k][i];
                assert!((combined[k].reward_logits[i] - want).abs() < 1e-12);
            }
        }
    }

    /// Hand-set weights on a one-layer trunk; logits recomputed directly.
    #[test]
    fn hand_computed_forward() {
        let config = ModelConfig {
            heads: 1,
            trunk_channels: vec![1],
            pool_inject: false,
            head_hidden: 0,
            ..ModelConfig::default()
        };
        let mut net = Network::<f64>::init(config, 0).unwrap();
        let layout = net.layout().clone();
        // Trunk filter: centre tap reads the Pacman channel with weight 2,
        // the tap left of centre reads the Food channel with weight 1; bias 0.5.
        {
            let conv = layout.convs[0];
            let t = &mut net.params_mut().trunk;
            t.iter_mut().for_each(|v| *v = 0.0);
            t[conv.weight + 4 * INPUT_CHANNELS + 4] = 2.0;
            t[conv.weight + 3 * INPUT_CHANNELS + 1] = 1.0;
            t[conv.bias] = 0.5;
        }
        // Head: state logit c = (c + 1) * h + c, reward logit j = max * j - mean.
        {
            let (s, r) = (layout.state, layout.reward);
            let h = &mut net.params_mut().heads[0];
            for c in 0..NUM_CLASSES {
                h[s.weight + c] = (c + 1) as f64;
                h[s.bias + c] = c as f64;
            }
            for j in 0..NUM_REWARDS {
                h[r.weight + j] = j as f64;
                h[r.weight + NUM_REWARDS + j] = -1.0;
                h[r.bias + j] = 0.0;
            }
        }
        let frame = Maze::default().initial_frame();
        let out = &net.forward_all_heads(&frame, Action::Noop).unwrap()[0];
        // Oracle: h(cell) = relu(2 [cell is pacman] + [left neighbour is food] + 0.5).
        let mut hs = Vec::new();
        for cell in 0..CELLS {
            let pos = Pos::from_index(cell);
            let pac = (frame.get(pos) == crate::env::CellClass::Pacman) as u8 as f64;
            let left = if pos.col > 0 {
                (frame.get(Pos::new(pos.row, pos.col - 1)) == crate::env::CellClass::Food) as u8 as f64
            } else {
                0.0
            };
            let h: f64 = (2.0 * pac + left + 0.5).max(0.0);
            hs.push(h);
            for c in 0..NUM_CLASSES {
                let want = (c + 1) as f64 * h + c as f64;
                assert!((out.state_logits[cell * NUM_CLASSES + c] - want).abs() < 1e-12);
            }
        }
        let max = hs.iter().copied().fold(f64::MIN, f64::max);
        let mean = hs.iter().sum::<f64>() / CELLS as f64;
        assert_eq!(max, 3.5);
        for j in 0..NUM_REWARDS {
            assert!((out.reward_logits[j] - (max * j as f64 - mean)).abs() < 1e-12);
        }
    }

    #[test]
    fn layout_lengths() {
        let layout = Layout::new(&ModelConfig {
            heads: 2,
            trunk_channels: vec![8, 8],
            pool_inject: true,
            head_hidden: 4,
            ..ModelConfig::default()
        });
        assert_eq!(layout.trunk_len(), 9 * 11 * 8 + 8 + 9 * 8 * 8 + 8);
        assert_eq!(layout.head_len(), 24 * 4 + 4 + 4 * 6 + 6 + 8 * 5 + 5);
    }

    #[test]
    fn rejects_invalid_config() {
        assert!(Network::<f32>::init(ModelConfig { heads: 0, ..ModelConfig::default() }, 0).is_err());
        assert!(Network::<f32>::init(ModelConfig { beta: -1.0, ..ModelConfig::default() }, 0).is_err());
    }
}
