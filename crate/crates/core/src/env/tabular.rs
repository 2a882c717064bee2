//! Finite fixed-horizon MDPs.
//!
//! # Text format
//!
//! Whitespace-separated numbers; `#` starts a comment that runs to the end of the line.
//! Tokens are read in this order:
//!
//! ```text
//! S A T                      # state count, action count, horizon
//! rho_0[0] .. rho_0[S-1]     # initial distribution
//! P[s][a][s']                # S*A rows of S entries, s major then a
//! r[s][a][s']                # S*A rows of S entries, same order
//! ```

use std::path::Path;
use std::sync::Arc;

use rand::Rng;

use super::{ActionSpace, EnvSpec, Environment, ObservationSpace, Transition};
use crate::mdp::{Action, Observation};
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-12;
/// Upper bound on the number of enumerated trajectories.
pub const ENUMERATION_LIMIT: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    initial: Vec<f64>,
    /// `P(s'|s,a)` at `(s * A + a) * S + s'`.
    transitions: Vec<f64>,
    /// `r(s,a,s')`, same layout.
    rewards: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        initial: Vec<f64>,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(Error::invalid("S, A and T must all be positive"));
        }
        let table = num_states * num_actions * num_states;
        if initial.len() != num_states || transitions.len() != table || rewards.len() != table {
            return Err(Error::invalid(format!(
                "table sizes ({}, {}, {}) do not match S={num_states} A={num_actions}",
                initial.len(),
                transitions.len(),
                rewards.len()
            )));
        }
        check_distribution(&initial, "rho_0")?;
        for (row, chunk) in transitions.chunks(num_states).enumerate() {
            check_distribution(
                chunk,
                &format!("P(.|s={}, a={})", row / num_actions, row % num_actions),
            )?;
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("rewards must be finite"));
        }
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            initial,
            transitions,
            rewards,
        })
    }

    /// Parses the text format described in the module docs.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        let mut count = |what: &str| -> Result<usize> {
            let tok = tokens
                .next()
                .ok_or_else(|| Error::invalid(format!("missing {what}")))?;
            tok.parse()
                .map_err(|_| Error::invalid(format!("bad {what}: {tok:?}")))
        };
        let s = count("state count")?;
        let a = count("action count")?;
        let t = count("horizon")?;
        let values: Vec<f64> = tokens
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad number {tok:?}")))
            })
            .collect::<Result<_>>()?;
        let table = s * a * s;
        if values.len() != s + 2 * table {
            return Err(Error::invalid(format!(
                "expected {} numbers after the header, found {}",
                s + 2 * table,
                values.len()
            )));
        }
        let initial = values[..s].to_vec();
        let transitions = values[s..s + table].to_vec();
        let rewards = values[s + table..].to_vec();
        Self::new(s, a, t, initial, transitions, rewards)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Serialises into the text format.
    pub fn to_text(&self) -> String {
        let row = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        let mut out = format!(
            "# S A T\n{} {} {}\n# rho_0\n{}\n# P[s][a][s']\n",
            self.num_states,
            self.num_actions,
            self.horizon,
            row(&self.initial)
        );
        for chunk in self.transitions.chunks(self.num_states) {
            out.push_str(&row(chunk));
            out.push('\n');
        }
        out.push_str("# r[s][a][s']\n");
        for chunk in self.rewards.chunks(self.num_states) {
            out.push_str(&row(chunk));
            out.push('\n');
        }
        out
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    pub fn reward(&self, s: usize, a: usize, next: usize) -> f64 {
        self.rewards[(s * self.num_actions + a) * self.num_states + next]
    }

    pub fn reward_bound(&self) -> f64 {
        self.rewards
            .iter()
            .fold(0.0f64, |m, r| m.max(r.abs()))
            .max(f64::MIN_POSITIVE)
    }

    /// Single-state two-armed bandit: reward equals the chosen arm index.
    pub fn bandit() -> Self {
        Self::new(1, 2, 1, vec![1.0], vec![1.0, 1.0], vec![0.0, 1.0]).expect("valid bandit")
    }

    /// Deterministic 3-state chain, horizon 3, starting in state 0.
    ///
    /// Action 1 moves right, action 0 moves left (both clamped at the ends). Landing in
    /// state `s'` pays `1 + s'`.
    pub fn chain3() -> Self {
        let (s, a) = (3, 2);
        let mut p = vec![0.0; s * a * s];
        let mut r = vec![0.0; s * a * s];
        for state in 0..s {
            for action in 0..a {
                let next = if action == 1 {
                    (state + 1).min(s - 1)
                } else {
                    state.saturating_sub(1)
                };
                p[(state * a + action) * s + next] = 1.0;
                for n in 0..s {
                    r[(state * a + action) * s + n] = 1.0 + n as f64;
                }
            }
        }
        Self::new(s, a, 3, vec![1.0, 0.0, 0.0], p, r).expect("valid chain")
    }

    /// Stochastic 4-state chain, horizon 4: the intended move succeeds with
    /// probability 0.8, otherwise the agent stays. Reaching state 3 pays 1.
    pub fn stochastic_chain4() -> Self {
        let (s, a) = (4, 2);
        let mut p = vec![0.0; s * a * s];
        let mut r = vec![0.0; s * a * s];
        for state in 0..s {
            for action in 0..a {
                let target = if action == 1 {
                    (state + 1).min(s - 1)
                } else {
                    state.saturating_sub(1)
                };
                let row = (state * a + action) * s;
                p[row + target] += 0.8;
                p[row + state] += 0.2;
                r[row + s - 1] = 1.0;
            }
        }
        Self::new(s, a, 4, vec![1.0, 0.0, 0.0, 0.0], p, r).expect("valid chain")
    }

    /// A `rows x cols` cliff grid with fixed horizon.
    ///
    /// Start bottom-left, goal bottom-right, cliff between them on the bottom row.
    /// Moves cost -1; entering the cliff costs -100 and returns to the start. The goal
    /// is absorbing with zero reward so every episode lasts exactly `horizon` steps.
    /// Actions: 0 up, 1 right, 2 down, 3 left.
    pub fn cliff_grid(rows: usize, cols: usize, horizon: usize) -> Self {
        assert!(rows >= 2 && cols >= 3);
        let (s, a) = (rows * cols, 4);
        let start = (rows - 1) * cols;
        let goal = rows * cols - 1;
        let mut p = vec![0.0; s * a * s];
        let mut r = vec![0.0; s * a * s];
        for state in 0..s {
            let (row, col) = (state / cols, state % cols);
            for action in 0..a {
                let idx = (state * a + action) * s;
                if state == goal {
                    p[idx + goal] = 1.0;
                    continue;
                }
                let (nr, nc) = match action {
                    0 => (row.saturating_sub(1), col),
                    1 => (row, (col + 1).min(cols - 1)),
                    2 => ((row + 1).min(rows - 1), col),
                    _ => (row, col.saturating_sub(1)),
                };
                let next = nr * cols + nc;
                let cliff = nr == rows - 1 && nc > 0 && nc < cols - 1;
                if cliff {
                    p[idx + start] = 1.0;
                    r[idx + start] = -100.0;
                } else {
                    p[idx + next] = 1.0;
                    r[idx + next] = -1.0;
                }
            }
        }
        let mut rho = vec![0.0; s];
        rho[start] = 1.0;
        Self::new(s, a, horizon, rho, p, r).expect("valid grid")
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

fn sample_index(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    // Round-off: fall back to the last index with positive mass.
    p.iter().rposition(|v| *v > 0.0).unwrap_or(p.len() - 1)
}

/// Simulator for a [`TabularMdp`]; episodes are truncated at the horizon.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    mdp: Arc<TabularMdp>,
    state: usize,
    elapsed: usize,
    rng: StreamRng,
}

impl TabularEnv {
    pub fn new(mdp: Arc<TabularMdp>) -> Self {
        Self {
            mdp,
            state: 0,
            elapsed: 0,
            rng: rng::stream(0, 0),
        }
    }

    pub fn with_rng(mdp: Arc<TabularMdp>, rng: StreamRng) -> Self {
        Self {
            rng,
            ..Self::new(mdp)
        }
    }
}

impl Environment for TabularEnv {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            observation: ObservationSpace::Discrete {
                n: self.mdp.num_states,
            },
            action: ActionSpace::Discrete {
                n: self.mdp.num_actions,
            },
            reward_bound: self.mdp.reward_bound(),
            max_episode_steps: self.mdp.horizon,
        }
    }

    fn reset(&mut self, seed: Option<u64>) -> Observation {
        if let Some(seed) = seed {
            self.rng = rng::stream(seed, 0);
        }
        self.state = sample_index(&self.mdp.initial, &mut self.rng);
        self.elapsed = 0;
        Observation::Discrete(self.state)
    }

    fn set_rng(&mut self, rng: StreamRng) {
        self.rng = rng;
    }

    fn step(&mut self, action: &Action) -> Result<Transition> {
        self.spec().action.check(action)?;
        let a = action.as_discrete().unwrap_or(0);
        let next = sample_index(self.mdp.transition_row(self.state, a), &mut self.rng);
        let reward = self.mdp.reward(self.state, a, next);
        self.state = next;
        self.elapsed += 1;
        Ok(Transition {
            observation: Observation::Discrete(next),
            reward,
            terminated: false,
            truncated: self.elapsed >= self.mdp.horizon,
        })
    }
}

/// One path `(s_0, a_0, ..., s_T)` with its policy-independent probability factor
/// `rho_0(s_0) * prod_t P(s_{t+1} | s_t, a_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedTrajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dynamics_factor: f64,
}

/// Lists every length-`horizon` path with nonzero dynamics probability.
pub fn enumerate_trajectories(mdp: &TabularMdp, horizon: usize) -> Result<Vec<EnumeratedTrajectory>> {
    let mut out = Vec::new();
    let mut prefix = EnumeratedTrajectory {
        states: Vec::with_capacity(horizon + 1),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        dynamics_factor: 1.0,
    };
    for (s0, &p0) in mdp.initial.iter().enumerate() {
        if p0 == 0.0 {
            continue;
        }
        prefix.states.push(s0);
        prefix.dynamics_factor = p0;
        extend(mdp, horizon, &mut prefix, &mut out)?;
        prefix.states.pop();
    }
    Ok(out)
}

fn extend(
    mdp: &TabularMdp,
    horizon: usize,
    prefix: &mut EnumeratedTrajectory,
    out: &mut Vec<EnumeratedTrajectory>,
) -> Result<()> {
    if prefix.actions.len() == horizon {
        if out.len() >= ENUMERATION_LIMIT {
            return Err(Error::Resource(format!(
                "more than {ENUMERATION_LIMIT} trajectories at horizon {horizon}"
            )));
        }
        out.push(prefix.clone());
        return Ok(());
    }
    let s = *prefix.states.last().expect("nonempty prefix");
    let factor = prefix.dynamics_factor;
    for a in 0..mdp.num_actions {
        for (next, &p) in mdp.transition_row(s, a).iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            prefix.states.push(next);
            prefix.actions.push(a);
            prefix.rewards.push(mdp.reward(s, a, next));
            prefix.dynamics_factor = factor * p;
            extend(mdp, horizon, prefix, out)?;
            prefix.states.pop();
            prefix.actions.pop();
            prefix.rewards.pop();
        }
    }
    prefix.dynamics_factor = factor;
    Ok(())
}
