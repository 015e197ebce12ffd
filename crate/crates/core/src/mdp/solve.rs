use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{Action, DiscreteMdp, MdpError, Policy};

/// Relative margin by which migrate must beat continue to be chosen.
const TIE_MARGIN: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-9,
            max_iter: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub values: Vec<f64>,
    pub policy: Policy,
    pub iterations: usize,
}

fn q_of(mdp: &DiscreteMdp, v: &[f64], s: usize, c: usize) -> f64 {
    let choice = &mdp.choices[s][c];
    choice.reward + mdp.gamma * choice.probs.iter().map(|(j, p)| p * v[*j]).sum::<f64>()
}

/// Action values of state `s` under value vector `v`.
pub fn q_values(mdp: &DiscreteMdp, v: &[f64], s: usize) -> Vec<(Action, f64)> {
    (0..mdp.choices[s].len())
        .map(|c| (mdp.choices[s][c].action, q_of(mdp, v, s, c)))
        .collect()
}

/// Index of the greedy choice, preferring continue unless migrate is clearly better.
fn best_choice(mdp: &DiscreteMdp, v: &[f64], s: usize) -> usize {
    let qs = q_values(mdp, v, s);
    let mut best = 0;
    for (c, (action, q)) in qs.iter().enumerate().skip(1) {
        let (best_action, best_q) = qs[best];
        let margin = TIE_MARGIN * best_q.abs().max(1.0);
        let better = if *action == Action::Migrate && best_action == Action::Continue {
            *q > best_q + margin
        } else if *action == Action::Continue && best_action == Action::Migrate {
            *q >= best_q - margin
        } else {
            *q > best_q
        };
        if better {
            best = c;
        }
    }
    best
}

pub fn bellman_update(mdp: &DiscreteMdp, v: &[f64]) -> Vec<f64> {
    (0..mdp.len())
        .map(|s| {
            (0..mdp.choices[s].len())
                .map(|c| q_of(mdp, v, s, c))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

fn policy_from_choices(mdp: &DiscreteMdp, choice: &[usize]) -> Policy {
    Policy {
        actions: choice
            .iter()
            .enumerate()
            .map(|(s, c)| mdp.choices[s][*c].action)
            .collect(),
        distances: mdp.distances.clone(),
        indifferent: mdp.indifferent(),
    }
}

fn greedy_choices(mdp: &DiscreteMdp, v: &[f64]) -> Vec<usize> {
    (0..mdp.len()).map(|s| best_choice(mdp, v, s)).collect()
}

pub fn greedy_policy(mdp: &DiscreteMdp, v: &[f64]) -> Policy {
    policy_from_choices(mdp, &greedy_choices(mdp, v))
}

/// `||T v - v||_inf`.
pub fn optimality_residual(mdp: &DiscreteMdp, v: &[f64]) -> f64 {
    bellman_update(mdp, v)
        .iter()
        .zip(v)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn value_iteration(mdp: &DiscreteMdp, opts: &SolveOptions) -> Result<Solution, MdpError> {
    value_iteration_from(mdp, vec![0.0; mdp.len()], opts)
}

/// Value iteration from `init`, stopping once successive iterates differ by
/// at most `tol (1 - gamma) / (2 gamma)`, which bounds the greedy policy's
/// loss by `tol`.
pub fn value_iteration_from(
    mdp: &DiscreteMdp,
    init: Vec<f64>,
    opts: &SolveOptions,
) -> Result<Solution, MdpError> {
    let gamma = mdp.gamma;
    let stop = opts.tol * (1.0 - gamma) / (2.0 * gamma);
    let mut v = init;
    for it in 1..=opts.max_iter {
        let next = bellman_update(mdp, &v);
        let delta = sup_diff(&next, &v);
        v = next;
        if delta <= stop {
            let policy = greedy_policy(mdp, &v);
            return Ok(Solution {
                values: v,
                policy,
                iterations: it,
            });
        }
    }
    Err(MdpError::NonConvergence(opts.max_iter))
}

/// Exact value of the stationary policy selecting `choice[s]` in each state.
pub fn evaluate_policy(mdp: &DiscreteMdp, choice: &[usize]) -> Result<Vec<f64>, MdpError> {
    let n = mdp.len();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for s in 0..n {
        let c = &mdp.choices[s][choice[s]];
        r[s] = c.reward;
        for (j, p) in &c.probs {
            a[(s, *j)] -= mdp.gamma * p;
        }
    }
    let x = a.lu().solve(&r).ok_or(MdpError::SingularSystem)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(MdpError::SingularSystem);
    }
    Ok(x.iter().copied().collect())
}

/// Howard policy iteration starting from the all-continue policy.
pub fn policy_iteration(mdp: &DiscreteMdp, max_iter: usize) -> Result<Solution, MdpError> {
    let mut choice = vec![0usize; mdp.len()];
    for it in 1..=max_iter {
        let v = evaluate_policy(mdp, &choice)?;
        // Keep the incumbent action unless a different one is strictly better.
        let next: Vec<usize> = (0..mdp.len())
            .map(|s| {
                let candidate = best_choice(mdp, &v, s);
                let incumbent = q_of(mdp, &v, s, choice[s]);
                let challenger = q_of(mdp, &v, s, candidate);
                if challenger > incumbent + TIE_MARGIN * incumbent.abs().max(1.0) {
                    candidate
                } else {
                    choice[s]
                }
            })
            .collect();
        if next == choice {
            let policy = greedy_policy(mdp, &v);
            return Ok(Solution {
                values: v,
                policy,
                iterations: it,
            });
        }
        choice = next;
    }
    Err(MdpError::NonConvergence(max_iter))
}

/// Evaluates every deterministic stationary policy; returns the best value
/// vector found together with its choice indices.
///
/// Exponential in the number of states with a choice; meant as a test oracle.
pub fn enumerate_policies(mdp: &DiscreteMdp) -> Result<(Vec<f64>, Vec<usize>), MdpError> {
    let free: Vec<usize> = (0..mdp.len())
        .filter(|s| mdp.choices[*s].len() > 1)
        .collect();
    assert!(
        free.len() <= 20,
        "enumeration over {} free states",
        free.len()
    );
    let results: Vec<(Vec<f64>, Vec<usize>)> = (0u64..1 << free.len())
        .into_par_iter()
        .map(|mask| {
            let mut choice = vec![0usize; mdp.len()];
            for (bit, s) in free.iter().enumerate() {
                if mask >> bit & 1 == 1 {
                    choice[*s] = 1;
                }
            }
            evaluate_policy(mdp, &choice).map(|v| (v, choice))
        })
        .collect::<Result<_, _>>()?;
    // The optimal policy dominates componentwise, so the largest sum is optimal.
    let best = results
        .into_iter()
        .max_by(|a, b| a.0.iter().sum::<f64>().total_cmp(&b.0.iter().sum::<f64>()))
        .expect("at least one policy");
    Ok(best)
}
