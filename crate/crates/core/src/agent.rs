//! Actor-critic agent deciding between updating and keeping the template.
//!
//! Both networks are tanh MLPs over the state vector. The critic is trained by
//! semi-gradient TD(0), `w += l_c * delta * grad V(s)`, and the actor by the
//! policy gradient with the TD error as advantage,
//! `theta += l_a * delta * grad log pi(a|s)`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::StateVec;
use crate::template::Action;

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn uniform(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs);
        for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *w = rng.gen_range(-bound..=bound);
        }
        layer
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
            out.push(b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
}

/// Tanh on every hidden layer, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    fn new(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        Self {
            layers: sizes.windows(2).map(|w| Dense::uniform(w[0], w[1], rng)).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn zeroed_like(&self) -> Mlp {
        Mlp {
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    /// Activations of every layer, input first.
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.forward(acts.last().expect("input pushed"), &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_all(x).pop().expect("at least one layer")
    }

    /// Gradient of `sum_k grad_out[k] * output[k]` with respect to every
    /// parameter, laid out like `self`.
    fn backward(&self, acts: &[Vec<f64>], grad_out: &[f64]) -> Mlp {
        let mut grads = self.zeroed_like();
        let mut delta = grad_out.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &acts[li];
            let g = &mut grads.layers[li];
            for (o, d) in delta.iter().enumerate() {
                g.bias[o] = *d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw = d * x;
                }
            }
            if li == 0 {
                break;
            }
            // Back through the weights, then through tanh of the layer below.
            let mut next = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (n, w) in next.iter_mut().zip(row) {
                    *n += d * w;
                }
            }
            for (n, a) in next.iter_mut().zip(input) {
                *n *= 1.0 - a * a;
            }
            delta = next;
        }
        grads
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Flattened parameters in layer order, weights before bias.
    pub fn flat(&self) -> Vec<f64> {
        self.params().copied().collect()
    }

    pub fn set_flat(&mut self, i: usize, value: f64) {
        if let Some(p) = self.params_mut().nth(i) {
            *p = value;
        }
    }

    fn add_scaled(&mut self, grad: &Mlp, scale: f64) {
        for (p, g) in self.params_mut().zip(grad.params()) {
            *p += scale * g;
        }
    }

    fn all_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentConfig {
    /// Length of one feature stream; the network input is twice this.
    pub feature_dim: usize,
    pub hidden: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            feature_dim: 262,
            hidden: 128,
            lr_actor: 1e-4,
            lr_critic: 5e-4,
            decay_factor: 0.99,
            decay_every: 200,
        }
    }
}

/// Actor and critic parameters plus learning-rate state.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNet {
    feature_dim: usize,
    actor: Mlp,
    critic: Mlp,
    lr_actor: f64,
    lr_critic: f64,
    decay_factor: f64,
    decay_every: u64,
    iteration: u64,
}

impl AgentNet {
    /// Seeded uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(cfg: &AgentConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = 2 * cfg.feature_dim;
        let actor = Mlp::new(&[input, cfg.hidden, cfg.hidden, 2], &mut rng);
        let critic = Mlp::new(&[input, cfg.hidden, cfg.hidden, 1], &mut rng);
        Self {
            feature_dim: cfg.feature_dim,
            actor,
            critic,
            lr_actor: cfg.lr_actor,
            lr_critic: cfg.lr_critic,
            decay_factor: cfg.decay_factor,
            decay_every: cfg.decay_every,
            iteration: 0,
        }
    }

    /// Same shapes with every parameter zero.
    pub fn zeroed(cfg: &AgentConfig) -> Self {
        let mut net = Self::new(cfg, 0);
        net.actor = net.actor.zeroed_like();
        net.critic = net.critic.zeroed_like();
        net
    }

    /// Zeroed net whose actor always prefers `action` by a logit margin of 10.
    pub fn constant(cfg: &AgentConfig, action: Action) -> Self {
        let mut net = Self::zeroed(cfg);
        let out = net.actor.layers.last_mut().expect("output layer");
        out.bias[action.index()] = 10.0;
        net
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn input_dim(&self) -> usize {
        2 * self.feature_dim
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut Mlp {
        &mut self.critic
    }

    pub fn lr_actor(&self) -> f64 {
        self.lr_actor
    }

    pub fn lr_critic(&self) -> f64 {
        self.lr_critic
    }

    pub fn set_learning_rates(&mut self, actor: f64, critic: f64) {
        self.lr_actor = actor;
        self.lr_critic = critic;
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    fn check_len(&self, s: &StateVec) -> Result<()> {
        if s.len() != self.input_dim() {
            return Err(Error::LengthMismatch {
                expected: self.input_dim(),
                found: s.len(),
            });
        }
        Ok(())
    }

    /// `(pi(Update|s), pi(Keep|s))`.
    pub fn actor_forward(&self, s: &StateVec) -> Result<[f64; 2]> {
        self.check_len(s)?;
        Ok(softmax2(&self.actor.forward(s.as_slice())))
    }

    pub fn critic_forward(&self, s: &StateVec) -> Result<f64> {
        self.check_len(s)?;
        Ok(self.critic.forward(s.as_slice())[0])
    }

    /// Gradient of `V(s)` with respect to the critic parameters.
    pub fn critic_gradient(&self, s: &StateVec) -> Result<Mlp> {
        self.check_len(s)?;
        let acts = self.critic.forward_all(s.as_slice());
        Ok(self.critic.backward(&acts, &[1.0]))
    }

    /// Gradient of `log pi(a|s)` with respect to the actor parameters.
    pub fn actor_log_prob_gradient(&self, s: &StateVec, a: Action) -> Result<Mlp> {
        self.check_len(s)?;
        let acts = self.actor.forward_all(s.as_slice());
        let probs = softmax2(acts.last().expect("output layer"));
        let mut g = [-probs[0], -probs[1]];
        g[a.index()] += 1.0;
        Ok(self.actor.backward(&acts, &g))
    }

    pub fn update_critic(&mut self, s: &StateVec, delta: f64) -> Result<()> {
        if !delta.is_finite() {
            return Err(Error::NonFinite("TD error"));
        }
        let g = self.critic_gradient(s)?;
        if !g.all_finite() {
            return Err(Error::NonFinite("critic gradient"));
        }
        self.critic.add_scaled(&g, self.lr_critic * delta);
        if !self.critic.all_finite() {
            return Err(Error::NonFinite("critic parameters"));
        }
        Ok(())
    }

    pub fn update_actor(&mut self, s: &StateVec, a: Action, delta: f64) -> Result<()> {
        if !delta.is_finite() {
            return Err(Error::NonFinite("advantage"));
        }
        let g = self.actor_log_prob_gradient(s, a)?;
        if !g.all_finite() {
            return Err(Error::NonFinite("actor gradient"));
        }
        self.actor.add_scaled(&g, self.lr_actor * delta);
        if !self.actor.all_finite() {
            return Err(Error::NonFinite("actor parameters"));
        }
        Ok(())
    }

    /// Counts one processed transition; every `decay_every` iterations both
    /// learning rates shrink by `decay_factor`.
    pub fn decay_learning_rates(&mut self) {
        self.iteration += 1;
        if self.decay_every > 0 && self.iteration.is_multiple_of(self.decay_every) {
            self.lr_actor *= self.decay_factor;
            self.lr_critic *= self.decay_factor;
        }
    }

    /// One online actor-critic step on a transition; returns the TD error.
    pub fn learn(&mut self, tr: &Transition, gamma: f64) -> Result<f64> {
        let v = self.critic_forward(&tr.state)?;
        let v_next = if tr.terminal {
            0.0
        } else {
            self.critic_forward(&tr.next_state)?
        };
        let delta = td_error(tr.reward, v_next, v, gamma, tr.terminal);
        self.update_critic(&tr.state, delta)?;
        self.update_actor(&tr.state, tr.action, delta)?;
        self.decay_learning_rates();
        Ok(delta)
    }
}

fn softmax2(logits: &[f64]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

/// One step of experience.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StateVec,
    pub action: Action,
    pub reward: f64,
    pub next_state: StateVec,
    pub terminal: bool,
}

/// `100 J^3 + 10` above 0.1, otherwise `-10`.
pub fn reward(j: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&j) {
        return Err(Error::invalid("J", format!("{j} not in [0,1]")));
    }
    Ok(if j > 0.1 { 100.0 * j * j * j + 10.0 } else { -10.0 })
}

/// `r + gamma V(s') - V(s)`, with `V(s') = 0` on terminal transitions.
pub fn td_error(r: f64, v_next: f64, v: f64, gamma: f64, terminal: bool) -> f64 {
    let v_next = if terminal { 0.0 } else { v_next };
    r + gamma * v_next - v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Stochastic,
    Greedy,
}

/// Greedy picks the argmax (ties go to `Update`); stochastic draws from the
/// distribution.
pub fn sample_action<R: Rng + ?Sized>(probs: [f64; 2], mode: SampleMode, rng: &mut R) -> Action {
    match mode {
        SampleMode::Greedy => {
            if probs[0] >= probs[1] {
                Action::Update
            } else {
                Action::Keep
            }
        }
        SampleMode::Stochastic => {
            let u: f64 = rng.gen();
            if u < probs[0] {
                Action::Update
            } else {
                Action::Keep
            }
        }
    }
}

const MAGIC: &[u8; 8] = b"TMRLAGNT";
const VERSION: u32 = 1;

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn encode_mlp(buf: &mut Vec<u8>, mlp: &Mlp) {
    put_u64(buf, mlp.layers.len() as u64);
    for l in &mlp.layers {
        put_u64(buf, l.inputs as u64);
        put_u64(buf, l.outputs as u64);
        l.weights.iter().for_each(|&w| put_f64(buf, w));
        l.bias.iter().for_each(|&b| put_f64(buf, b));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn mlp(&mut self) -> Result<Mlp> {
        let n = self.u64("layer count")? as usize;
        if n == 0 || n > 64 {
            return Err(Error::Checkpoint(format!("implausible layer count {n}")));
        }
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let inputs = self.u64("layer inputs")? as usize;
            let outputs = self.u64("layer outputs")? as usize;
            let fits = |n: usize| n.checked_mul(8).is_some_and(|b| b <= self.bytes.len());
            let plausible = inputs.checked_mul(outputs).is_some_and(fits) && fits(outputs);
            if !plausible {
                return Err(Error::Checkpoint("implausible layer size".into()));
            }
            let mut layer = Dense::zeros(inputs, outputs);
            for w in layer.weights.iter_mut() {
                *w = self.f64("weights")?;
            }
            for b in layer.bias.iter_mut() {
                *b = self.f64("bias")?;
            }
            layers.push(layer);
        }
        Ok(Mlp { layers })
    }
}

pub fn encode_checkpoint(net: &AgentNet) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    put_u64(&mut buf, net.feature_dim as u64);
    encode_mlp(&mut buf, &net.actor);
    encode_mlp(&mut buf, &net.critic);
    put_f64(&mut buf, net.lr_actor);
    put_f64(&mut buf, net.lr_critic);
    put_f64(&mut buf, net.decay_factor);
    put_u64(&mut buf, net.decay_every);
    put_u64(&mut buf, net.iteration);
    buf
}

/// Decodes a checkpoint; `expected_dim` rejects a mismatched feature dimension.
pub fn decode_checkpoint(bytes: &[u8], expected_dim: Option<usize>) -> Result<AgentNet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let feature_dim = r.u64("feature dimension")? as usize;
    if let Some(expected) = expected_dim {
        if expected != feature_dim {
            return Err(Error::CheckpointDimension {
                expected,
                found: feature_dim,
            });
        }
    }
    let actor = r.mlp()?;
    let critic = r.mlp()?;
    for (name, mlp, out) in [("actor", &actor, 2), ("critic", &critic, 1)] {
        let chained = mlp.layers.windows(2).all(|w| w[0].outputs == w[1].inputs);
        if mlp.input_dim() != 2 * feature_dim || !chained || mlp.layers.last().map(|l| l.outputs) != Some(out) {
            return Err(Error::Checkpoint(format!("{name} layer shapes inconsistent")));
        }
    }
    let net = AgentNet {
        feature_dim,
        actor,
        critic,
        lr_actor: r.f64("actor learning rate")?,
        lr_critic: r.f64("critic learning rate")?,
        decay_factor: r.f64("decay factor")?,
        decay_every: r.u64("decay period")?,
        iteration: r.u64("iteration")?,
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(net)
}

pub fn save_checkpoint(net: &AgentNet, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(net)).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path, expected_dim: Option<usize>) -> Result<AgentNet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_checkpoint(&bytes, expected_dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> AgentConfig {
        AgentConfig {
            feature_dim: 3,
            hidden: 5,
            ..Default::default()
        }
    }

    fn random_state(dim: usize, rng: &mut ChaCha8Rng) -> StateVec {
        StateVec::from_vec((0..dim).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn actor_forward_is_distribution() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..10 {
            let net = AgentNet::new(&cfg, seed);
            let p = net.actor_forward(&random_state(6, &mut rng)).unwrap();
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        }
        let zero = AgentNet::zeroed(&cfg);
        assert_eq!(zero.actor_forward(&random_state(6, &mut rng)).unwrap(), [0.5, 0.5]);
        assert!(zero.actor_forward(&random_state(5, &mut rng)).is_err());
    }

    #[test]
    fn softmax_shift_invariant() {
        let a = softmax2(&[0.3, -1.2]);
        let b = softmax2(&[100.3, 98.8]);
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        let big = softmax2(&[1000.0, -1000.0]);
        assert!(big[0].is_finite() && big[1].is_finite());
    }

    #[test]
    fn critic_forward_examples() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_state(6, &mut rng);
        assert_eq!(AgentNet::zeroed(&cfg).critic_forward(&s).unwrap(), 0.0);
        let net = AgentNet::new(&cfg, 7);
        assert_eq!(net.critic_forward(&s).unwrap(), net.critic_forward(&s).unwrap());
        assert!(net.critic_forward(&random_state(7, &mut rng)).is_err());
    }

    #[test]
    fn critic_forward_matches_hand_arithmetic() {
        // input 2 (feature_dim 1), hidden 2, output 1.
        let cfg = AgentConfig {
            feature_dim: 1,
            hidden: 2,
            ..Default::default()
        };
        let mut net = AgentNet::zeroed(&cfg);
        let c = net.critic_mut();
        c.layers[0].weights = vec![0.5, -1.0, 0.25, 2.0];
        c.layers[0].bias = vec![0.1, -0.2];
        c.layers[1].weights = vec![1.0, -0.5, 0.3, 0.7];
        c.layers[1].bias = vec![0.0, 0.05];
        c.layers[2].weights = vec![2.0, -3.0];
        c.layers[2].bias = vec![0.5];
        let s = StateVec::from_vec(vec![0.4, 0.8]).unwrap();
        let h1 = [
            (0.5f64 * 0.4 - 1.0 * 0.8 + 0.1).tanh(),
            (0.25f64 * 0.4 + 2.0 * 0.8 - 0.2).tanh(),
        ];
        let h2 = [
            (1.0 * h1[0] - 0.5 * h1[1]).tanh(),
            (0.3 * h1[0] + 0.7 * h1[1] + 0.05).tanh(),
        ];
        let v = 2.0 * h2[0] - 3.0 * h2[1] + 0.5;
        assert!((net.critic_forward(&s).unwrap() - v).abs() < 1e-15);
    }

    #[test]
    fn reward_piecewise() {
        assert_eq!(reward(0.05).unwrap(), -10.0);
        assert_eq!(reward(0.1).unwrap(), -10.0);
        assert_eq!(reward(1.0).unwrap(), 110.0);
        assert!((reward(0.2).unwrap() - 10.8).abs() < 1e-12);
        assert!(reward(1.5).is_err());
        assert!(reward(-0.1).is_err());
    }

    #[test]
    fn td_error_examples() {
        assert!((td_error(1.0, 2.0, 1.0, 0.9, false) - 1.8).abs() < 1e-12);
        assert_eq!(td_error(1.0, 123.0, 1.0, 0.9, true), 0.0);
        assert_eq!(td_error(3.0, 5.0, 1.0, 0.0, false), 2.0);
    }

    #[test]
    fn zero_delta_leaves_parameters() {
        let mut net = AgentNet::new(&small_cfg(), 3);
        let before = net.clone();
        let s = random_state(6, &mut ChaCha8Rng::seed_from_u64(0));
        net.update_critic(&s, 0.0).unwrap();
        net.update_actor(&s, Action::Keep, 0.0).unwrap();
        assert_eq!(net, before);
        assert!(net.update_critic(&s, f64::NAN).is_err());
        assert!(net.update_actor(&s, Action::Keep, f64::INFINITY).is_err());
    }

    #[test]
    fn critic_update_reduces_td_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for seed in 0..10 {
            let mut net = AgentNet::new(&small_cfg(), seed);
            net.set_learning_rates(1e-4, 1e-2);
            let s = random_state(6, &mut rng);
            let target = 3.0;
            let d0 = target - net.critic_forward(&s).unwrap();
            net.update_critic(&s, d0).unwrap();
            let d1 = target - net.critic_forward(&s).unwrap();
            assert!(d1.abs() < d0.abs());
        }
    }

    #[test]
    fn actor_update_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..10 {
            let s = random_state(6, &mut rng);
            for a in [Action::Update, Action::Keep] {
                let mut up = AgentNet::new(&small_cfg(), seed);
                let p0 = up.actor_forward(&s).unwrap()[a.index()];
                let mut down = up.clone();
                up.update_actor(&s, a, 1.0).unwrap();
                down.update_actor(&s, a, -1.0).unwrap();
                assert!(up.actor_forward(&s).unwrap()[a.index()] > p0);
                assert!(down.actor_forward(&s).unwrap()[a.index()] < p0);
            }
        }
    }

    #[test]
    fn sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..1000 {
            assert_eq!(
                sample_action([1.0, 0.0], SampleMode::Stochastic, &mut rng),
                Action::Update
            );
        }
        assert_eq!(sample_action([0.5, 0.5], SampleMode::Greedy, &mut rng), Action::Update);
        assert_eq!(sample_action([0.4, 0.6], SampleMode::Greedy, &mut rng), Action::Keep);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| sample_action([0.5, 0.5], SampleMode::Stochastic, &mut rng) == Action::Update)
            .count();
        let freq = hits as f64 / n as f64;
        assert!((0.47..=0.53).contains(&freq), "{freq}");

        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| sample_action([0.3, 0.7], SampleMode::Stochastic, &mut r))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
    }

    #[test]
    fn learning_rate_schedule() {
        let mut net = AgentNet::new(&small_cfg(), 0);
        assert_eq!(net.lr_actor(), 1e-4);
        assert_eq!(net.lr_critic(), 5e-4);
        for _ in 0..199 {
            net.decay_learning_rates();
        }
        assert_eq!(net.lr_actor(), 1e-4);
        net.decay_learning_rates();
        assert!((net.lr_actor() - 9.9e-5).abs() < 1e-18);
        for _ in 0..200 {
            net.decay_learning_rates();
        }
        assert!((net.lr_actor() - 9.801e-5).abs() < 1e-18);
        assert!((net.lr_critic() - 5e-4 * 0.9801).abs() < 1e-17);
        assert_eq!(net.iteration(), 400);
    }

    #[test]
    fn learn_terminal_uses_zero_bootstrap() {
        let net = AgentNet::new(&small_cfg(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_state(6, &mut rng);
        let s2 = random_state(6, &mut rng);
        let tr = Transition {
            state: s.clone(),
            action: Action::Update,
            reward: 5.0,
            next_state: s2,
            terminal: true,
        };
        let v = net.critic_forward(&s).unwrap();
        let mut n2 = net.clone();
        let delta = n2.learn(&tr, 0.9).unwrap();
        assert_eq!(delta, 5.0 - v);
        assert_eq!(n2.iteration(), 1);
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.ckpt");
        let mut net = AgentNet::new(&AgentConfig::default(), 12);
        for _ in 0..201 {
            net.decay_learning_rates();
        }
        save_checkpoint(&net, &path).unwrap();
        let back = load_checkpoint(&path, Some(262)).unwrap();
        assert_eq!(back, net);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let s = random_state(524, &mut rng);
            assert_eq!(back.actor_forward(&s).unwrap(), net.actor_forward(&s).unwrap());
            assert_eq!(back.critic_forward(&s).unwrap(), net.critic_forward(&s).unwrap());
        }

        let err = load_checkpoint(&path, Some(100)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("100") && msg.contains("262"), "{msg}");

        let bytes = encode_checkpoint(&net);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3], None).is_err());
        assert!(decode_checkpoint(&bytes[..20], None).is_err());
        let mut bad = bytes.clone();
        bad[8] = 99;
        assert!(decode_checkpoint(&bad, None).is_err());
    }
}
