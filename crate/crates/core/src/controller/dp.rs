//! Bitrate planning over a short horizon of GOPs whose lengths are fixed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::sim::{simulate_gop_analytic, GopInputs};
use crate::trace::Bitrate;

/// DP time cell, seconds.
pub const TIME_CELL_S: f64 = 0.01;
/// Largest sequence count the brute-force oracle accepts.
pub const ORACLE_CAP: usize = 1_000_000;

/// One candidate configuration for one horizon GOP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOption {
    pub bitrate: Bitrate,
    /// γ-scaled, uncapped accuracy.
    pub accuracy: f64,
    pub encode: Vec<f64>,
    pub sizes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub gop_length: u32,
    /// Capture time of the GOP's first frame.
    pub content_start: f64,
    /// Predicted mean throughput, Mbps.
    pub throughput: f64,
    /// Sorted by ascending bitrate.
    pub options: Vec<StageOption>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanInstance {
    /// `t_{k-1}`.
    pub t0: f64,
    /// `Q_{k-1}`.
    pub q0: f64,
    pub frame_rate: f64,
    pub alpha: f64,
    pub beta: f64,
    /// A GOP taking longer than this to send is infeasible.
    pub stall_cap: f64,
    pub stages: Vec<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    /// Chosen option index per stage.
    pub choices: Vec<usize>,
    pub bitrates: Vec<Bitrate>,
    pub objective: f64,
    /// No sequence was feasible; the plan holds the lowest bitrates.
    pub stall: bool,
}

impl PlanInstance {
    /// Reward and next state for taking `option` at `stage` from `(t, q)`,
    /// or `None` when the GOP would stall.
    fn step(&self, stage: &Stage, option: &StageOption, t: f64, q: f64) -> Option<(f64, f64, f64)> {
        let timing = simulate_gop_analytic(
            &GopInputs {
                prev_end: t,
                prev_queue: q,
                gop_length: f64::from(stage.gop_length),
                first_capture: stage.content_start,
                frame_rate: self.frame_rate,
                encode: &option.encode,
                sizes: &option.sizes,
            },
            stage.throughput,
        );
        if !timing.end.is_finite() || timing.end - t > self.stall_cap {
            return None;
        }
        let reward = self.alpha * option.accuracy - self.beta * timing.queue;
        Some((timing.end, timing.queue, reward))
    }

    /// Objective of a full choice sequence, `None` if any GOP stalls.
    pub fn evaluate(&self, choices: &[usize]) -> Option<f64> {
        let (mut t, mut q, mut value) = (self.t0, self.q0, 0.0);
        for (stage, &c) in self.stages.iter().zip(choices) {
            let (nt, nq, r) = self.step(stage, &stage.options[c], t, q)?;
            t = nt;
            q = nq;
            value += r;
        }
        Some(value)
    }

    fn validate(&self) -> Result<(), ControlError> {
        if self.stages.is_empty() {
            return Err(ControlError::Plan("empty horizon".into()));
        }
        if let Some(i) = self.stages.iter().position(|s| s.options.is_empty()) {
            return Err(ControlError::Plan(format!("stage {i} has no options")));
        }
        if let Some(i) = self.stages.iter().position(|s| !(s.throughput > 0.0)) {
            return Err(ControlError::Plan(format!("stage {i} has non-positive throughput")));
        }
        Ok(())
    }

    fn stalled_plan(&self) -> Plan {
        Plan {
            choices: vec![0; self.stages.len()],
            bitrates: self.stages.iter().map(|s| s.options[0].bitrate).collect(),
            objective: f64::NEG_INFINITY,
            stall: true,
        }
    }

    fn plan_from(&self, choices: Vec<usize>, objective: f64) -> Plan {
        Plan {
            bitrates: self
                .stages
                .iter()
                .zip(&choices)
                .map(|(s, &c)| s.options[c].bitrate)
                .collect(),
            choices,
            objective,
            stall: false,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    t: f64,
    q: f64,
    value: f64,
    seq: Vec<usize>,
}

/// `a` makes `b` redundant: same completion time (or same cell), no more
/// backlog, at least the value, and `a` wins any tie.
///
/// Completion times are never ordered against each other: because of the
/// clamp, finishing earlier can leave more backlog after the next GOP.
fn dominates(a: &Node, b: &Node, same_time: bool) -> bool {
    (!same_time || a.t == b.t)
        && a.q <= b.q
        && a.value >= b.value
        && (a.value > b.value || a.seq < b.seq)
}

/// Keeps the nodes not dominated by another node of the same group.
fn prune(group: Vec<Node>, same_time: bool) -> Vec<Node> {
    let mut kept: Vec<Node> = Vec::with_capacity(group.len());
    for node in group {
        if kept.iter().any(|k| dominates(k, &node, same_time)) {
            continue;
        }
        kept.retain(|k| !dominates(&node, k, same_time));
        kept.push(node);
    }
    kept
}

/// Maximizes `Σ α·γA(c_k) − β·Q_k` over bitrate sequences.
///
/// States are `(t_k, Q_k)` pairs; `Q` is carried because the clamp at zero
/// makes it path dependent. With `quantize`, states whose completion times
/// share a 10 ms cell are compared on `(Q, value)` alone, which loses at most
/// `quantization_bound` against the exact optimum. Without it only states
/// with identical `t` are compared, which is exact. Ties go to the
/// lexicographically smallest sequence.
pub fn optimize_dp(instance: &PlanInstance, quantize: bool) -> Result<Plan, ControlError> {
    instance.validate()?;
    let mut nodes = vec![Node {
        t: instance.t0,
        q: instance.q0,
        value: 0.0,
        seq: Vec::new(),
    }];
    for stage in &instance.stages {
        let mut next = Vec::with_capacity(nodes.len() * stage.options.len());
        for node in &nodes {
            for (c, option) in stage.options.iter().enumerate() {
                if let Some((t, q, r)) = instance.step(stage, option, node.t, node.q) {
                    let mut seq = node.seq.clone();
                    seq.push(c);
                    next.push(Node {
                        t,
                        q,
                        value: node.value + r,
                        seq,
                    });
                }
            }
        }
        nodes = if quantize {
            let mut cells: BTreeMap<i64, Vec<Node>> = BTreeMap::new();
            for n in next {
                cells.entry((n.t / TIME_CELL_S).floor() as i64).or_default().push(n);
            }
            cells.into_values().flat_map(|g| prune(g, false)).collect()
        } else {
            prune(next, true)
        };
        if nodes.is_empty() {
            return Ok(instance.stalled_plan());
        }
    }
    let best = nodes
        .into_iter()
        .reduce(|a, b| {
            if b.value > a.value || (b.value == a.value && b.seq < a.seq) {
                b
            } else {
                a
            }
        })
        .expect("non-empty");
    Ok(instance.plan_from(best.seq, best.value))
}

/// Worst-case objective loss of the quantized DP for a horizon of `h` GOPs.
pub fn quantization_bound(beta: f64, h: usize) -> f64 {
    2.0 * beta * TIME_CELL_S * (h * h) as f64
}

/// Exhaustive enumeration in lexicographic order; a later sequence replaces
/// the incumbent only with a strictly greater objective.
pub fn brute_force_oracle(instance: &PlanInstance) -> Result<Plan, ControlError> {
    instance.validate()?;
    let total = instance
        .stages
        .iter()
        .try_fold(1usize, |acc, s| acc.checked_mul(s.options.len()))
        .filter(|&n| n <= ORACLE_CAP)
        .ok_or_else(|| ControlError::Plan(format!("more than {ORACLE_CAP} sequences")))?;
    let h = instance.stages.len();
    let mut seq = vec![0usize; h];
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..total {
        if let Some(v) = instance.evaluate(&seq) {
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((seq.clone(), v));
            }
        }
        // Odometer increment, last position fastest.
        for i in (0..h).rev() {
            seq[i] += 1;
            if seq[i] < instance.stages[i].options.len() {
                break;
            }
            seq[i] = 0;
        }
    }
    Ok(match best {
        Some((choices, v)) => instance.plan_from(choices, v),
        None => instance.stalled_plan(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const KBPS: [u32; 6] = [1500, 3000, 4500, 6000, 7500, 9000];

    /// A CBR-like instance: the I-frame is four P-frames, sizes scale with
    /// the bitrate and accuracy saturates with it.
    fn random_instance(rng: &mut ChaCha8Rng, h: usize) -> PlanInstance {
        let f = 15.0;
        let gamma = rng.gen_range(1.0 / 3.0..=3.0);
        let mut start = 0.0;
        let stages = (0..h)
            .map(|_| {
                let l = rng.gen_range(1..=5u32);
                let frames = (l * 15) as usize;
                let options = KBPS
                    .iter()
                    .map(|&k| {
                        let bits = f64::from(k) * 1e3 * f64::from(l);
                        let mut w = vec![1.0; frames];
                        w[0] = 4.0;
                        let ws: f64 = w.iter().sum();
                        StageOption {
                            bitrate: Bitrate::from_kbps(k),
                            accuracy: gamma * (1.0 - (-f64::from(k) / 3000.0).exp()),
                            encode: vec![0.008; frames],
                            sizes: w.iter().map(|x| bits * x / ws).collect(),
                        }
                    })
                    .collect();
                let s = Stage {
                    gop_length: l,
                    content_start: start,
                    throughput: rng.gen_range(1.0..=12.0),
                    options,
                };
                start += f64::from(l);
                s
            })
            .collect();
        let q0 = rng.gen_range(0.0..=10.0);
        PlanInstance {
            t0: q0,
            q0,
            frame_rate: f,
            alpha: 1.0,
            beta: 0.02,
            stall_cap: 120.0,
            stages,
        }
    }

    #[test]
    fn dp_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let inst = random_instance(&mut rng, 3);
            let oracle = brute_force_oracle(&inst).unwrap();
            let exact = optimize_dp(&inst, false).unwrap();
            assert!((exact.objective - oracle.objective).abs() <= 1e-9);
            assert_eq!(exact.choices, oracle.choices);
            let q = optimize_dp(&inst, true).unwrap();
            assert!(oracle.objective >= q.objective - 1e-9);
            assert!(oracle.objective <= q.objective + quantization_bound(0.02, 3) + 1e-9);
            assert_eq!(inst.evaluate(&q.choices), Some(q.objective));
        }
    }

    #[test]
    fn single_stage_is_a_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inst = random_instance(&mut rng, 1);
        let scan = (0..6)
            .filter_map(|c| inst.evaluate(&[c]).map(|v| (c, v)))
            .fold(None::<(usize, f64)>, |b, (c, v)| match b {
                Some((_, bv)) if bv >= v => b,
                _ => Some((c, v)),
            })
            .unwrap();
        let p = brute_force_oracle(&inst).unwrap();
        assert_eq!(p.choices, vec![scan.0]);
    }

    #[test]
    fn degenerate_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut inst = random_instance(&mut rng, 3);
        inst.beta = 0.0;
        let p = optimize_dp(&inst, true).unwrap();
        assert_eq!(p.choices, vec![5, 5, 5]);
        // Lag only, on a link too slow for the queue to drain: every GOP
        // adds its full send time to Q, so the smallest sizes win.
        inst.beta = 0.02;
        inst.alpha = 0.0;
        inst.q0 = 5.0;
        for s in &mut inst.stages {
            s.throughput = 1.0;
        }
        let p = optimize_dp(&inst, true).unwrap();
        assert_eq!(p.choices, vec![0, 0, 0]);
    }

    #[test]
    fn all_stalled_gives_min_bitrate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut inst = random_instance(&mut rng, 2);
        inst.stall_cap = 1e-3;
        let p = optimize_dp(&inst, true).unwrap();
        assert!(p.stall);
        assert_eq!(p.choices, vec![0, 0]);
        assert!(brute_force_oracle(&inst).unwrap().stall);
    }

    #[test]
    fn finishing_earlier_can_cost_backlog() {
        // Capture-limited first GOP: a larger first GOP ends later and
        // leaves less apparent lag after the second one.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut inst = random_instance(&mut rng, 3);
        inst.alpha = 0.0;
        let low = inst.evaluate(&[0, 0, 0]).unwrap();
        let mixed = inst.evaluate(&[1, 2, 0]).unwrap();
        assert!(mixed > low);
        assert_eq!(optimize_dp(&inst, false).unwrap().objective, brute_force_oracle(&inst).unwrap().objective);
    }

    #[test]
    fn oracle_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = random_instance(&mut rng, 8);
        assert!(brute_force_oracle(&inst).is_err());
        assert!(optimize_dp(&inst, true).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn higher_beta_never_raises_first_bitrate(seed in 0u64..10_000, beta in 0.0..0.5f64, bump in 0.0..0.5f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut inst = random_instance(&mut rng, 3);
            inst.beta = beta;
            let low = optimize_dp(&inst, false).unwrap();
            inst.beta = beta + bump;
            let high = optimize_dp(&inst, false).unwrap();
            prop_assert!(high.bitrates[0] <= low.bitrates[0]);
        }

        #[test]
        fn oracle_is_deterministic(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = random_instance(&mut rng, 2);
            prop_assert_eq!(brute_force_oracle(&inst).unwrap(), brute_force_oracle(&inst).unwrap());
        }
    }
}
