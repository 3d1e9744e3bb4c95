//! Instance-selection policy trained with REINFORCE.
//!
//! The policy scores each instance with `P_j = sigmoid(logit_j)`. Candidate
//! subsets are drawn without replacement with probability proportional to
//! `P_j` (Gumbel-top-k over `ln P`). The log-probability attached to a draw is
//! that of the ordered sequence of picks:
//!
//! ```text
//! log p(s_1..s_k) = sum_t [ ln P_{s_t} - ln sum_{j in remaining_t} P_j ]
//! ```
//!
//! When a bag has no more real instances than `bag_size`, the selection is
//! forced: every real instance is chosen and the log-probability is exactly 0.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{ops, ParamGroup, Parameter, Value};
use crate::error::{Error, Result};
use crate::nn::Mlp;

/// `d → hp → 1` selection-logit network.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub mlp: Mlp,
}

impl PolicyNet {
    pub fn new(dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        PolicyNet {
            mlp: Mlp::new("policy", ParamGroup::Actor, &[dim, hidden, 1], rng),
        }
    }

    /// Per-instance selection logits, `n × 1`.
    pub fn logits(&self, h: &Value) -> Result<Value> {
        self.mlp.forward(h)
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        self.mlp.parameters()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    Sample,
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    /// Selected row indices, ascending.
    pub chosen: Vec<usize>,
    /// The same indices in draw order (equal to `chosen` for greedy and
    /// forced selections).
    pub order: Vec<usize>,
    pub log_prob: f64,
    /// Summed Bernoulli entropy of `P` over the candidate rows.
    pub entropy: f64,
    /// True when every candidate was taken because the bag is small.
    pub forced: bool,
}

fn bernoulli_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

fn safe_ln(p: f64) -> f64 {
    p.max(f64::MIN_POSITIVE).ln()
}

/// Log-probability of drawing `order` sequentially, proportional to `probs`,
/// from `candidates` without replacement.
pub fn sequence_log_prob_f64(probs: &[f64], order: &[usize], candidates: &[usize]) -> f64 {
    let mut remaining: f64 = candidates.iter().map(|&j| probs[j]).sum();
    let mut lp = 0.0;
    for &s in order {
        lp += safe_ln(probs[s]) - safe_ln(remaining);
        remaining -= probs[s];
    }
    lp
}

/// Selects subsets of the unmasked rows. Sample mode returns `pool_size`
/// outcomes, greedy mode exactly one.
pub fn select(
    probs: &[f64],
    mask: &[bool],
    bag_size: usize,
    mode: SelectMode,
    pool_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<SelectionOutcome>> {
    if bag_size == 0 {
        return Err(Error::Config("bag_size must be >= 1".into()));
    }
    if probs.len() != mask.len() {
        return Err(Error::shape("select", (probs.len(), 1), (mask.len(), 1)));
    }
    let candidates: Vec<usize> = (0..probs.len()).filter(|&i| mask[i]).collect();
    if candidates.is_empty() {
        return Err(Error::EmptyBag("select: no unmasked instances".into()));
    }
    let entropy: f64 = candidates.iter().map(|&j| bernoulli_entropy(probs[j])).sum();
    let copies = match mode {
        SelectMode::Sample => pool_size.max(1),
        SelectMode::Greedy => 1,
    };
    if candidates.len() <= bag_size {
        let forced = SelectionOutcome {
            chosen: candidates.clone(),
            order: candidates,
            log_prob: 0.0,
            entropy,
            forced: true,
        };
        return Ok(vec![forced; copies]);
    }
    let outcomes = match mode {
        SelectMode::Greedy => {
            let mut ranked = candidates.clone();
            // Stable sort keeps ascending index order among equal scores.
            ranked.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap_or(std::cmp::Ordering::Equal));
            ranked.truncate(bag_size);
            let mut chosen = ranked;
            chosen.sort_unstable();
            vec![SelectionOutcome {
                order: chosen.clone(),
                chosen,
                log_prob: 0.0,
                entropy,
                forced: false,
            }]
        }
        SelectMode::Sample => (0..copies)
            .map(|_| {
                let mut keyed: Vec<(f64, usize)> = candidates
                    .iter()
                    .map(|&j| {
                        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                        (safe_ln(probs[j]) - (-u.ln()).ln(), j)
                    })
                    .collect();
                keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
                let order: Vec<usize> = keyed.iter().take(bag_size).map(|&(_, j)| j).collect();
                let log_prob = sequence_log_prob_f64(probs, &order, &candidates);
                let mut chosen = order.clone();
                chosen.sort_unstable();
                SelectionOutcome {
                    chosen,
                    order,
                    log_prob,
                    entropy,
                    forced: false,
                }
            })
            .collect(),
    };
    Ok(outcomes)
}

/// Differentiable log-probability of an ordered draw, given per-row log
/// weights `log_w` (`n × 1`, typically `log_sigmoid(logits)`).
pub fn sequence_log_prob(log_w: &Value, order: &[usize], candidates: &[usize]) -> Result<Value> {
    let (n, c) = log_w.shape();
    if c != 1 {
        return Err(Error::shape("sequence_log_prob", (n, c), (n, 1)));
    }
    if order.iter().chain(candidates).any(|&i| i >= n) {
        return Err(Error::Contract("sequence_log_prob: index out of range".into()));
    }
    let lw: Vec<f64> = log_w.data().column(0).to_vec();
    // Softmax of the remaining candidates at each step, for the backward rule.
    let mut remaining: Vec<usize> = candidates.to_vec();
    let mut steps: Vec<Vec<(usize, f64)>> = Vec::with_capacity(order.len());
    let mut lp = 0.0;
    for &s in order {
        let m = remaining.iter().map(|&j| lw[j]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = remaining.iter().map(|&j| (lw[j] - m).exp()).sum();
        let lse = m + z.ln();
        lp += lw[s] - lse;
        steps.push(remaining.iter().map(|&j| (j, (lw[j] - lse).exp())).collect());
        remaining.retain(|&j| j != s);
    }
    let order = order.to_vec();
    Ok(Value::from_op(
        Array2::from_elem((1, 1), lp),
        vec![log_w.clone()],
        Box::new(move |g, _, _| {
            let g = g[[0, 0]];
            let mut d = Array2::zeros((n, 1));
            for (t, &s) in order.iter().enumerate() {
                d[[s, 0]] += g;
                for &(j, q) in &steps[t] {
                    d[[j, 0]] -= g * q;
                }
            }
            vec![Some(d)]
        }),
    ))
}

/// How a subset's prediction is turned into a reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    /// `log_softmax(logits)[y]`, in `(-inf, 0]`.
    LogLikelihood,
    /// 1 if the argmax is the true class, else 0.
    Accuracy,
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardKind::LogLikelihood => "loglik",
            RewardKind::Accuracy => "accuracy",
        })
    }
}

impl FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loglik" => Ok(RewardKind::LogLikelihood),
            "accuracy" => Ok(RewardKind::Accuracy),
            other => Err(Error::Config(format!("unknown reward `{other}` (loglik|accuracy)"))),
        }
    }
}

pub fn reward(logits: &[f64], label: usize, kind: RewardKind) -> f64 {
    match kind {
        RewardKind::LogLikelihood => {
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            logits[label] - lse
        }
        RewardKind::Accuracy => {
            if crate::mil::argmax(logits) == label {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Exponential moving average of rewards. The first update seeds the average
/// with the observed mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBaseline {
    pub beta: f64,
    pub value: Option<f64>,
}

impl RewardBaseline {
    pub fn new(beta: f64) -> Self {
        RewardBaseline { beta, value: None }
    }

    /// Baseline to use for `rewards` before they are folded in.
    pub fn current(&self, rewards: &[f64]) -> f64 {
        self.value.unwrap_or_else(|| mean(rewards))
    }

    pub fn update(&mut self, rewards: &[f64]) {
        let m = mean(rewards);
        self.value = Some(match self.value {
            None => m,
            Some(b) => self.beta * b + (1.0 - self.beta) * m,
        });
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// `-mean_k[(reward_k - baseline) * log_prob_k]`.
pub fn policy_loss(log_probs: &[Value], rewards: &[f64], baseline: f64) -> Result<Value> {
    if log_probs.is_empty() || log_probs.len() != rewards.len() {
        return Err(Error::Config(format!(
            "policy_loss needs matching non-empty outcomes and rewards ({} vs {})",
            log_probs.len(),
            rewards.len()
        )));
    }
    let k = log_probs.len() as f64;
    let mut total: Option<Value> = None;
    for (lp, &r) in log_probs.iter().zip(rewards) {
        let term = ops::scale(lp, -(r - baseline) / k);
        total = Some(match total {
            None => term,
            Some(t) => ops::add(&t, &term)?,
        });
    }
    Ok(total.unwrap())
}

/// `-weight * mean entropy of Bernoulli(P_j)` over unmasked rows.
pub fn regularizer(p: &Value, mask: &[bool], weight: f64) -> Result<Value> {
    let (n, c) = p.shape();
    if c != 1 || mask.len() != n {
        return Err(Error::shape("regularizer", (n, c), (mask.len(), 1)));
    }
    let rows: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return Err(Error::EmptyBag("regularizer: no unmasked instances".into()));
    }
    let h = ops::bernoulli_entropy(&ops::select_rows(p, &rows)?);
    Ok(ops::scale(&ops::mean(&h), -weight))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::backward;
    use crate::nn::{stream_rng, Stream};
    use ndarray::array;

    #[test]
    fn greedy_picks_argmax() {
        let mut rng = stream_rng(0, Stream::Selection);
        let out = select(&[0.9, 0.1, 0.1], &[true; 3], 1, SelectMode::Greedy, 10, &mut rng).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].chosen, vec![0]);
    }

    #[test]
    fn greedy_ties_resolve_by_index() {
        let mut rng = stream_rng(0, Stream::Selection);
        let out = select(&[0.5, 0.7, 0.5, 0.5], &[true; 4], 2, SelectMode::Greedy, 1, &mut rng).unwrap();
        assert_eq!(out[0].chosen, vec![0, 1]);
    }

    #[test]
    fn small_bag_is_forced_with_zero_log_prob() {
        let mut rng = stream_rng(0, Stream::Selection);
        let mut mask = vec![true; 3];
        mask.extend([false; 5]);
        let probs = vec![0.2; 8];
        let out = select(&probs, &mask, 20, SelectMode::Sample, 10, &mut rng).unwrap();
        assert_eq!(out.len(), 10);
        for o in &out {
            assert_eq!(o.chosen, vec![0, 1, 2]);
            assert_eq!(o.log_prob, 0.0);
            assert!(o.forced);
        }
    }

    #[test]
    fn samples_never_touch_masked_rows_or_repeat() {
        let mut rng = stream_rng(1, Stream::Selection);
        let mask = [true, false, true, true, false, true, true];
        let probs = [0.3, 0.99, 0.2, 0.8, 0.99, 0.5, 0.6];
        for o in select(&probs, &mask, 3, SelectMode::Sample, 50, &mut rng).unwrap() {
            assert_eq!(o.chosen.len(), 3);
            assert!(o.chosen.windows(2).all(|w| w[0] < w[1]));
            assert!(o.chosen.iter().all(|&i| mask[i]));
        }
    }

    #[test]
    fn empty_mask_is_an_error() {
        let mut rng = stream_rng(1, Stream::Selection);
        let err = select(&[0.5], &[false], 1, SelectMode::Greedy, 1, &mut rng).unwrap_err();
        assert!(matches!(err, Error::EmptyBag(_)));
    }

    #[test]
    fn differentiable_log_prob_matches_scalar_version() {
        let logits = array![[0.3], [-1.2], [2.0], [0.0], [0.7]];
        let probs: Vec<f64> = logits.iter().map(|&z: &f64| 1.0 / (1.0 + (-z).exp())).collect();
        let lw = ops::log_sigmoid(&Value::variable(logits));
        let cands = [0, 1, 2, 4];
        let order = [2, 0, 4];
        let v = sequence_log_prob(&lw, &order, &cands).unwrap();
        let s = sequence_log_prob_f64(&probs, &order, &cands);
        assert!((v.item() - s).abs() < 1e-12, "{} vs {s}", v.item());
    }

    #[test]
    fn reward_values() {
        assert!((reward(&[0.0, 0.0], 0, RewardKind::LogLikelihood) + std::f64::consts::LN_2).abs() < 1e-15);
        let r = reward(&[40.0, -40.0], 0, RewardKind::LogLikelihood);
        assert!(r <= 0.0 && r > -1e-30);
        assert_eq!(reward(&[1.0, 2.0], 1, RewardKind::Accuracy), 1.0);
        assert_eq!(reward(&[1.0, 2.0], 0, RewardKind::Accuracy), 0.0);
    }

    #[test]
    fn zero_advantage_gives_zero_loss() {
        let lps = vec![Value::scalar(-1.3), Value::scalar(-0.2)];
        let l = policy_loss(&lps, &[-0.5, -0.5], -0.5).unwrap();
        assert_eq!(l.item(), 0.0);
    }

    #[test]
    fn policy_loss_is_linear_in_advantage() {
        let lps = vec![Value::scalar(-1.3), Value::scalar(-0.2), Value::scalar(-2.0)];
        let rewards = [-0.1, -0.9, -0.4];
        let base = -0.5;
        let l1 = policy_loss(&lps, &rewards, base).unwrap().item();
        let c = 3.0;
        let scaled: Vec<f64> = rewards.iter().map(|r| base + c * (r - base)).collect();
        let l2 = policy_loss(&lps, &scaled, base).unwrap().item();
        assert!((l2 - c * l1).abs() < 1e-12);
    }

    #[test]
    fn regularizer_values() {
        let p = Value::constant(array![[0.5], [0.5], [0.9]]);
        let l = regularizer(&p, &[true, true, false], 0.01).unwrap();
        assert!((l.item() + 0.01 * std::f64::consts::LN_2).abs() < 1e-15);
        let p = Value::constant(array![[0.0], [1.0]]);
        assert_eq!(regularizer(&p, &[true, true], 0.01).unwrap().item(), 0.0);
        let p = Value::constant(array![[0.3], [0.6]]);
        assert_eq!(regularizer(&p, &[true, true], 0.0).unwrap().item(), 0.0);
    }

    #[test]
    fn baseline_is_ema_seeded_by_first_mean() {
        let mut b = RewardBaseline::new(0.9);
        assert_eq!(b.current(&[-1.0, -3.0]), -2.0);
        b.update(&[-1.0, -3.0]);
        assert_eq!(b.value, Some(-2.0));
        b.update(&[0.0]);
        assert!((b.value.unwrap() + 1.8).abs() < 1e-15);
    }

    #[test]
    fn positive_advantage_raises_chosen_probability() {
        // One outcome with reward above baseline; a small SGD step on the
        // logits must raise P of the chosen rows.
        let z = Value::variable(array![[0.1], [-0.3], [0.4], [0.0]]);
        let lw = ops::log_sigmoid(&z);
        let order = [1, 3];
        let lp = sequence_log_prob(&lw, &order, &[0, 1, 2, 3]).unwrap();
        let loss = policy_loss(&[lp], &[-0.1], -0.5).unwrap();
        backward(&loss).unwrap();
        let g = z.grad().clone();
        let before: Vec<f64> = z.data().iter().copied().collect();
        let after: Vec<f64> = before.iter().zip(g.iter()).map(|(v, d)| v - 0.1 * d).collect();
        let p = |v: f64| 1.0 / (1.0 + (-v).exp());
        let share = |zs: &[f64]| (p(zs[1]) + p(zs[3])) / zs.iter().map(|&v| p(v)).sum::<f64>();
        assert!(p(after[1]) > p(before[1]));
        assert!(p(after[3]) > p(before[3]));
        assert!(share(&after) > share(&before));
    }
}
