use super::{ActionSpace, EnvSpec, Environment, ObservationSpace, Transition};
use crate::mdp::{Action, Observation};
use crate::rng::StreamRng;
use crate::Result;

pub const ROWS: usize = 4;
pub const COLS: usize = 12;
const START: usize = (ROWS - 1) * COLS;
const GOAL: usize = ROWS * COLS - 1;
const MAX_STEPS: usize = 200;
const CLIFF_PENALTY: f64 = -100.0;

/// The 4x12 cliff-walking grid.
///
/// States are `row * 12 + col`; the agent starts at (3, 0) and the goal is (3, 11).
/// Actions: 0 up, 1 right, 2 down, 3 left. Each move costs -1; stepping into the
/// cliff (row 3, columns 1..=10) costs -100 and teleports back to the start.
#[derive(Debug, Clone)]
pub struct CliffWalking {
    position: usize,
    elapsed: usize,
}

impl Default for CliffWalking {
    fn default() -> Self {
        Self::new()
    }
}

impl CliffWalking {
    pub fn new() -> Self {
        Self {
            position: START,
            elapsed: 0,
        }
    }

    pub fn cell(row: usize, col: usize) -> usize {
        row * COLS + col
    }

    pub fn set_position(&mut self, state: usize) {
        self.position = state;
    }

    fn is_cliff(state: usize) -> bool {
        let (row, col) = (state / COLS, state % COLS);
        row == ROWS - 1 && (1..COLS - 1).contains(&col)
    }

    /// Deterministic move result: `(next_state, reward, terminated)`.
    pub fn transition(state: usize, action: usize) -> (usize, f64, bool) {
        let (row, col) = (state / COLS, state % COLS);
        let (row, col) = match action {
            0 => (row.saturating_sub(1), col),
            1 => (row, (col + 1).min(COLS - 1)),
            2 => ((row + 1).min(ROWS - 1), col),
            _ => (row, col.saturating_sub(1)),
        };
        let next = row * COLS + col;
        if Self::is_cliff(next) {
            (START, CLIFF_PENALTY, false)
        } else {
            (next, -1.0, next == GOAL)
        }
    }
}

impl Environment for CliffWalking {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            observation: ObservationSpace::Discrete { n: ROWS * COLS },
            action: ActionSpace::Discrete { n: 4 },
            reward_bound: 100.0,
            max_episode_steps: MAX_STEPS,
        }
    }

    fn reset(&mut self, _seed: Option<u64>) -> Observation {
        self.position = START;
        self.elapsed = 0;
        Observation::Discrete(START)
    }

    fn set_rng(&mut self, _rng: StreamRng) {}

    fn step(&mut self, action: &Action) -> Result<Transition> {
        self.spec().action.check(action)?;
        let (next, reward, terminated) =
            Self::transition(self.position, action.as_discrete().unwrap_or(0));
        self.position = next;
        self.elapsed += 1;
        Ok(Transition {
            observation: Observation::Discrete(next),
            reward,
            terminated,
            truncated: !terminated && self.elapsed >= MAX_STEPS,
        })
    }
}
