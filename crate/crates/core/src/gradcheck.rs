//! Central finite-difference checks of the agent's analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{AgentConfig, AgentNet, Mlp};
use crate::error::Result;
use crate::features::StateVec;
use crate::template::Action;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Floor on the relative-error denominator so near-zero entries are compared
/// in absolute terms.
pub const DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub cases: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    /// Adds a fixed offset to the analytic gradients. Used to prove the check
    /// can fail.
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            cases: 10,
            feature_dim: 4,
            hidden: 6,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub actor_max_rel: f64,
    pub critic_max_rel: f64,
    pub cases: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.actor_max_rel < TOLERANCE && self.critic_max_rel < TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Network with every parameter uniform in `[-0.5, 0.5]`.
pub fn random_net(cfg: &AgentConfig, rng: &mut ChaCha8Rng) -> AgentNet {
    let mut net = AgentNet::new(cfg, rng.gen());
    let mut fill = |mlp: &mut Mlp| {
        for layer in &mut mlp.layers {
            for p in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *p = rng.gen_range(-0.5..=0.5);
            }
        }
    };
    fill(net.actor_mut());
    fill(net.critic_mut());
    net
}

fn max_rel(analytic: &[f64], mlp: &Mlp, f: impl Fn(&Mlp) -> f64) -> f64 {
    let base = mlp.flat();
    let mut probe = mlp.clone();
    let mut worst = 0.0f64;
    for (i, (&a, &p)) in analytic.iter().zip(&base).enumerate() {
        probe.set_flat(i, p + STEP);
        let plus = f(&probe);
        probe.set_flat(i, p - STEP);
        let minus = f(&probe);
        probe.set_flat(i, p);
        let numeric = (plus - minus) / (2.0 * STEP);
        worst = worst.max(relative_error(a, numeric));
    }
    worst
}

fn log_softmax(logits: &[f64], a: Action) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    logits[a.index()] - lse
}

/// Checks both gradients on `opts.cases` random (net, state) pairs.
pub fn run(seed: u64, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let cfg = AgentConfig {
        feature_dim: opts.feature_dim,
        hidden: opts.hidden,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport {
        actor_max_rel: 0.0,
        critic_max_rel: 0.0,
        cases: opts.cases,
    };
    let offset = if opts.corrupt { 1e-2 } else { 0.0 };
    for _ in 0..opts.cases {
        let net = random_net(&cfg, &mut rng);
        let s = StateVec::from_vec((0..net.input_dim()).map(|_| rng.gen()).collect())?;

        let cg: Vec<f64> = net.critic_gradient(&s)?.flat().iter().map(|g| g + offset).collect();
        let critic = max_rel(&cg, net.critic(), |m| m.forward(s.as_slice())[0]);
        report.critic_max_rel = report.critic_max_rel.max(critic);

        for a in [Action::Update, Action::Keep] {
            let ag: Vec<f64> = net
                .actor_log_prob_gradient(&s, a)?
                .flat()
                .iter()
                .map(|g| g + offset)
                .collect();
            let actor = max_rel(&ag, net.actor(), |m| log_softmax(&m.forward(s.as_slice()), a));
            report.actor_max_rel = report.actor_max_rel.max(actor);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passes_on_default_seed() {
        let r = run(0, &GradcheckOptions::default()).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn corruption_is_detected() {
        let r = run(
            0,
            &GradcheckOptions {
                corrupt: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!r.passed());
    }
}
