//! Exact tabular MDP machinery.
//!
//! Small dense MDPs solved by direct linear algebra, used to verify the
//! policy-transfer value identity that motivates retrieval by transfer
//! success. Intended for n_states <= 8 so every solve stays well under a
//! millisecond.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// Transition tensor `p[s][a][s']`, each row stochastic.
    pub p: Vec<Vec<Vec<f64>>>,
    /// Reward matrix `r[s][a]`.
    pub r: Vec<Vec<f64>>,
    pub gamma: f64,
    /// Initial state distribution.
    pub rho: Vec<f64>,
}

impl TabularMdp {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma outside [0, 1)"));
        }
        if self.p.len() != self.n_states || self.r.len() != self.n_states {
            return Err(Error::invalid("p/r first dimension != n_states"));
        }
        for s in 0..self.n_states {
            if self.p[s].len() != self.n_actions || self.r[s].len() != self.n_actions {
                return Err(Error::invalid("p/r second dimension != n_actions"));
            }
            for a in 0..self.n_actions {
                if self.p[s][a].len() != self.n_states {
                    return Err(Error::invalid("p third dimension != n_states"));
                }
                let sum: f64 = self.p[s][a].iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::invalid(format!("p[{s}][{a}] sums to {sum}")));
                }
            }
        }
        let rho_sum: f64 = self.rho.iter().sum();
        if self.rho.len() != self.n_states || (rho_sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::invalid("rho is not a distribution over states"));
        }
        Ok(())
    }

    /// Random dense MDP with Dirichlet-ish rows (normalized uniforms).
    pub fn random(n_states: usize, n_actions: usize, gamma: f64, rng: &mut ChaCha8Rng) -> Self {
        let row = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let mut v: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            v
        };
        let p = (0..n_states)
            .map(|_| (0..n_actions).map(|_| row(rng)).collect())
            .collect();
        let r = (0..n_states)
            .map(|_| {
                (0..n_actions)
                    .map(|_| rng.random::<f64>() * 2.0 - 1.0)
                    .collect()
            })
            .collect();
        let rho = row(rng);
        TabularMdp {
            n_states,
            n_actions,
            p,
            r,
            gamma,
            rho,
        }
    }

    /// Copy with freshly randomized dynamics, keeping r and gamma shared.
    pub fn with_random_dynamics(&self, rng: &mut ChaCha8Rng) -> Self {
        let mut other = Self::random(self.n_states, self.n_actions, self.gamma, rng);
        other.r = self.r.clone();
        other
    }
}

fn check_policy(mdp: &TabularMdp, policy: &[Vec<f64>]) -> Result<()> {
    if policy.len() != mdp.n_states {
        return Err(Error::invalid("policy rows != n_states"));
    }
    for (s, row) in policy.iter().enumerate() {
        if row.len() != mdp.n_actions {
            return Err(Error::invalid("policy columns != n_actions"));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || row.iter().any(|x| *x < -1e-12) {
            return Err(Error::invalid(format!("policy row {s} is not stochastic")));
        }
    }
    Ok(())
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
/// `a` is row-major n x n.
fn solve_linear(mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[pivot * n + col].abs() < 1e-14 {
            return Err(Error::invalid("singular linear system"));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

/// Exact policy evaluation: solves `V = r^pi + gamma P^pi V` directly.
pub fn exact_policy_value(mdp: &TabularMdp, policy: &[Vec<f64>]) -> Result<Vec<f64>> {
    mdp.validate()?;
    check_policy(mdp, policy)?;
    let n = mdp.n_states;
    // A = I - gamma * P^pi, b = r^pi
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for s in 0..n {
        a[s * n + s] = 1.0;
        for act in 0..mdp.n_actions {
            b[s] += policy[s][act] * mdp.r[s][act];
            for sn in 0..n {
                a[s * n + sn] -= mdp.gamma * policy[s][act] * mdp.p[s][act][sn];
            }
        }
    }
    let v = solve_linear(a.clone(), b.clone())?;
    // Residual guard on the Bellman fixed point: (I - gamma P^pi) V == r^pi.
    for s in 0..n {
        let rowdot: f64 = (0..n).map(|sn| a[s * n + sn] * v[sn]).sum();
        if (rowdot - b[s]).abs() > 1e-10 {
            return Err(Error::invalid(format!(
                "value solve residual {} exceeds 1e-10",
                (rowdot - b[s]).abs()
            )));
        }
    }
    Ok(v)
}

/// Action values `Q^pi[s][a] = r[s][a] + gamma * sum_s' p[s][a][s'] V^pi[s']`.
pub fn policy_q_values(mdp: &TabularMdp, policy: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let v = exact_policy_value(mdp, policy)?;
    let q = (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| {
                    mdp.r[s][a]
                        + mdp.gamma
                            * mdp.p[s][a]
                                .iter()
                                .zip(v.iter())
                                .map(|(p, vv)| p * vv)
                                .sum::<f64>()
                })
                .collect()
        })
        .collect();
    Ok(q)
}

/// Expected value of the initial-state distribution under `v`.
pub fn initial_value(mdp: &TabularMdp, v: &[f64]) -> f64 {
    mdp.rho.iter().zip(v.iter()).map(|(r, vv)| r * vv).sum()
}

/// Evaluates both sides of the exact Q-gap identity for one policy applied
/// to two MDPs that share rewards and discount:
///
/// lhs = `Q^pi(T_i) - Q^pi(T_j)` from two exact policy evaluations;
/// rhs = `gamma * (I - gamma P^pi(T_j))^-1 (p_i - p_j) V^pi(T_i)`,
/// where `P^pi(T_j)[(s,a),(s',a')] = p_j(s'|s,a) pi(a'|s')`.
///
/// Both are returned as `[s][a]` matrices so callers can compare them.
pub fn simulation_lemma_gap(
    mdp_i: &TabularMdp,
    mdp_j: &TabularMdp,
    policy: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if mdp_i.n_states != mdp_j.n_states || mdp_i.n_actions != mdp_j.n_actions {
        return Err(Error::invalid("MDP shapes differ"));
    }
    if mdp_i.gamma != mdp_j.gamma {
        return Err(Error::invalid("MDPs must share gamma"));
    }
    if mdp_i.r != mdp_j.r {
        return Err(Error::invalid("MDPs must share the reward matrix"));
    }
    let (ns, na) = (mdp_i.n_states, mdp_i.n_actions);
    let q_i = policy_q_values(mdp_i, policy)?;
    let q_j = policy_q_values(mdp_j, policy)?;
    let v_i = exact_policy_value(mdp_i, policy)?;

    let lhs: Vec<Vec<f64>> = (0..ns)
        .map(|s| (0..na).map(|a| q_i[s][a] - q_j[s][a]).collect())
        .collect();

    // State-action operator on T_j: M = I - gamma * P^pi(T_j), size (ns*na)^2.
    let dim = ns * na;
    let idx = |s: usize, a: usize| s * na + a;
    let mut m = vec![0.0; dim * dim];
    for s in 0..ns {
        for a in 0..na {
            let row = idx(s, a);
            m[row * dim + row] += 1.0;
            for sn in 0..ns {
                for an in 0..na {
                    m[row * dim + idx(sn, an)] -= mdp_i.gamma * mdp_j.p[s][a][sn] * policy[sn][an];
                }
            }
        }
    }
    // b[(s,a)] = gamma * sum_s' (p_i - p_j)(s'|s,a) V^pi(T_i)(s')
    let mut b = vec![0.0; dim];
    for s in 0..ns {
        for a in 0..na {
            let mut acc = 0.0;
            for sn in 0..ns {
                acc += (mdp_i.p[s][a][sn] - mdp_j.p[s][a][sn]) * v_i[sn];
            }
            b[idx(s, a)] = mdp_i.gamma * acc;
        }
    }
    let x = solve_linear(m, b)?;
    let rhs: Vec<Vec<f64>> = (0..ns)
        .map(|s| (0..na).map(|a| x[idx(s, a)]).collect())
        .collect();
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn uniform_policy(ns: usize, na: usize) -> Vec<Vec<f64>> {
        vec![vec![1.0 / na as f64; na]; ns]
    }

    fn random_policy(ns: usize, na: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..ns)
            .map(|_| {
                let mut row: Vec<f64> = (0..na).map(|_| rng.random::<f64>() + 1e-3).collect();
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= s);
                row
            })
            .collect()
    }

    /// Independent oracle: plain value iteration to convergence.
    fn value_iteration(mdp: &TabularMdp, policy: &[Vec<f64>]) -> Vec<f64> {
        let mut v = vec![0.0; mdp.n_states];
        for _ in 0..20_000 {
            let mut next = vec![0.0; mdp.n_states];
            for s in 0..mdp.n_states {
                for a in 0..mdp.n_actions {
                    let exp_next: f64 =
                        mdp.p[s][a].iter().zip(v.iter()).map(|(p, vv)| p * vv).sum();
                    next[s] += policy[s][a] * (mdp.r[s][a] + mdp.gamma * exp_next);
                }
            }
            let delta: f64 = next
                .iter()
                .zip(v.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            v = next;
            if delta < 1e-13 {
                break;
            }
        }
        v
    }

    #[test]
    fn zero_reward_gives_zero_value() {
        let mut rng = rng_from(1);
        let mut mdp = TabularMdp::random(4, 2, 0.9, &mut rng);
        mdp.r = vec![vec![0.0; 2]; 4];
        let v = exact_policy_value(&mdp, &uniform_policy(4, 2)).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn unit_reward_gives_geometric_series() {
        let mut rng = rng_from(2);
        let mut mdp = TabularMdp::random(5, 3, 0.9, &mut rng);
        mdp.r = vec![vec![1.0; 3]; 5];
        let v = exact_policy_value(&mdp, &uniform_policy(5, 3)).unwrap();
        for x in v {
            assert!((x - 10.0).abs() < 1e-9, "V={x}, expected 1/(1-gamma)=10");
        }
    }

    #[test]
    fn exact_solve_matches_value_iteration() {
        let mut rng = rng_from(3);
        for _ in 0..10 {
            let mdp = TabularMdp::random(3, 2, 0.95, &mut rng);
            let policy = random_policy(3, 2, &mut rng);
            let exact = exact_policy_value(&mdp, &policy).unwrap();
            let vi = value_iteration(&mdp, &policy);
            for (a, b) in exact.iter().zip(vi.iter()) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn non_stochastic_policy_rejected() {
        let mut rng = rng_from(4);
        let mdp = TabularMdp::random(3, 2, 0.9, &mut rng);
        let bad = vec![vec![0.7, 0.7]; 3];
        assert!(exact_policy_value(&mdp, &bad).is_err());
    }

    #[test]
    fn identical_dynamics_give_zero_gap() {
        let mut rng = rng_from(5);
        let mdp = TabularMdp::random(4, 2, 0.9, &mut rng);
        let policy = random_policy(4, 2, &mut rng);
        let (lhs, rhs) = simulation_lemma_gap(&mdp, &mdp, &policy).unwrap();
        for s in 0..4 {
            for a in 0..2 {
                assert!(lhs[s][a].abs() < 1e-12);
                assert!(rhs[s][a].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn q_gap_identity_holds_on_random_pairs() {
        let mut rng = rng_from(6);
        for trial in 0..50 {
            let ns = 2 + (trial % 5); // up to 6 states
            let na = 2 + (trial % 3);
            let mdp_i = TabularMdp::random(ns, na, 0.9, &mut rng);
            let mdp_j = mdp_i.with_random_dynamics(&mut rng);
            let policy = random_policy(ns, na, &mut rng);
            let (lhs, rhs) = simulation_lemma_gap(&mdp_i, &mdp_j, &policy).unwrap();
            for s in 0..ns {
                for a in 0..na {
                    assert!(
                        (lhs[s][a] - rhs[s][a]).abs() < 1e-8,
                        "trial {trial}: lhs {} rhs {}",
                        lhs[s][a],
                        rhs[s][a]
                    );
                }
            }
        }
    }

    #[test]
    fn rho_only_perturbation_shifts_initial_value_exactly() {
        let mut rng = rng_from(7);
        let mdp_j = TabularMdp::random(4, 2, 0.9, &mut rng);
        let mut mdp_i = mdp_j.clone();
        // Perturb only the initial distribution.
        mdp_i.rho = {
            let mut v: Vec<f64> = (0..4).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            v
        };
        let policy = random_policy(4, 2, &mut rng);
        let (lhs, _) = simulation_lemma_gap(&mdp_i, &mdp_j, &policy).unwrap();
        for row in &lhs {
            for x in row {
                assert!(x.abs() < 1e-12, "same dynamics must give zero Q gap");
            }
        }
        // V^pi(rho_i) - V^pi(rho_j) = sum_s (rho_i - rho_j)(s) V^pi(s)
        let v = exact_policy_value(&mdp_j, &policy).unwrap();
        let direct = initial_value(&mdp_i, &v) - initial_value(&mdp_j, &v);
        let expanded: f64 = (0..4).map(|s| (mdp_i.rho[s] - mdp_j.rho[s]) * v[s]).sum();
        assert!((direct - expanded).abs() < 1e-14);
    }

    #[test]
    fn mismatched_rewards_rejected() {
        let mut rng = rng_from(8);
        let a = TabularMdp::random(3, 2, 0.9, &mut rng);
        let b = TabularMdp::random(3, 2, 0.9, &mut rng);
        let policy = uniform_policy(3, 2);
        assert!(simulation_lemma_gap(&a, &b, &policy).is_err());
    }
}
