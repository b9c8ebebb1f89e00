//! Reduced Taxi domain: a 3x3 grid without inner walls and two depots.
//!
//! State = (taxi row, taxi column, passenger location, destination) with
//! the passenger at depot 0, depot 1 or in the taxi, giving 54 states.
//! States where the passenger waits at its own destination are the
//! delivered (absorbing) states.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::TabularMdp;

pub const TAXI_SIZE: usize = 3;
pub const DEPOTS: [(usize, usize); 2] = [(0, 0), (TAXI_SIZE - 1, TAXI_SIZE - 1)];
pub const IN_TAXI: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaxiAction {
    South,
    North,
    West,
    East,
    Pickup,
    Drop,
}

impl TaxiAction {
    pub const ALL: [TaxiAction; 6] = [
        TaxiAction::South,
        TaxiAction::North,
        TaxiAction::West,
        TaxiAction::East,
        TaxiAction::Pickup,
        TaxiAction::Drop,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaxiRewards {
    pub step: f64,
    pub delivery: f64,
    pub illegal: f64,
}

impl Default for TaxiRewards {
    fn default() -> Self {
        Self { step: -1.0, delivery: 20.0, illegal: -10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TaxiState {
    pub row: usize,
    pub col: usize,
    pub passenger: usize,
    pub destination: usize,
}

impl TaxiState {
    pub fn index(self) -> usize {
        ((self.row * TAXI_SIZE + self.col) * 3 + self.passenger) * 2 + self.destination
    }

    pub fn from_index(idx: usize) -> Self {
        let destination = idx % 2;
        let passenger = (idx / 2) % 3;
        let cell = idx / 6;
        Self { row: cell / TAXI_SIZE, col: cell % TAXI_SIZE, passenger, destination }
    }

    pub fn delivered(self) -> bool {
        self.passenger == self.destination
    }
}

pub const TAXI_STATES: usize = TAXI_SIZE * TAXI_SIZE * 3 * 2;

/// Deterministic successor and reward of a non-delivered state.
pub fn taxi_step(state: TaxiState, action: TaxiAction, rewards: &TaxiRewards) -> (TaxiState, f64) {
    let mut next = state;
    let last = TAXI_SIZE - 1;
    let at_depot = DEPOTS.iter().position(|&d| d == (state.row, state.col));
    match action {
        TaxiAction::South => next.row = (state.row + 1).min(last),
        TaxiAction::North => next.row = state.row.saturating_sub(1),
        TaxiAction::West => next.col = state.col.saturating_sub(1),
        TaxiAction::East => next.col = (state.col + 1).min(last),
        TaxiAction::Pickup => {
            if at_depot == Some(state.passenger) {
                next.passenger = IN_TAXI;
            } else {
                return (state, rewards.illegal);
            }
        }
        TaxiAction::Drop => match (state.passenger, at_depot) {
            (IN_TAXI, Some(depot)) => {
                next.passenger = depot;
                if depot == state.destination {
                    return (next, rewards.delivery);
                }
            }
            _ => return (state, rewards.illegal),
        },
    }
    (next, rewards.step)
}

pub fn build_taxi(discount: f64) -> Result<TabularMdp<f64>> {
    build_taxi_with(&TaxiRewards::default(), discount)
}

pub fn build_taxi_with(rewards: &TaxiRewards, discount: f64) -> Result<TabularMdp<f64>> {
    let na = TaxiAction::ALL.len();
    let mut transitions = Vec::with_capacity(TAXI_STATES * na);
    let mut reward = Vec::with_capacity(TAXI_STATES * na);
    let mut terminal = vec![false; TAXI_STATES];
    for idx in 0..TAXI_STATES {
        let state = TaxiState::from_index(idx);
        terminal[idx] = state.delivered();
        for action in TaxiAction::ALL {
            if state.delivered() {
                transitions.push(vec![(idx, 1.0)]);
                reward.push(0.0);
            } else {
                let (next, r) = taxi_step(state, action, rewards);
                transitions.push(vec![(next.index(), 1.0)]);
                reward.push(r);
            }
        }
    }
    // Episodes start with the passenger waiting at the depot that is not
    // its destination, taxi anywhere.
    let starts: Vec<bool> = (0..TAXI_STATES)
        .map(|i| {
            let s = TaxiState::from_index(i);
            s.passenger != IN_TAXI && !s.delivered()
        })
        .collect();
    let count = starts.iter().filter(|&&b| b).count() as f64;
    let initial = starts.iter().map(|&b| if b { 1.0 / count } else { 0.0 }).collect();
    TabularMdp::new(TAXI_STATES, na, transitions, reward, discount, terminal, initial)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions() {
        let mdp = build_taxi(0.95).unwrap();
        assert_eq!(mdp.num_states(), 54);
        assert_eq!(mdp.num_actions(), 6);
        assert_eq!(mdp.terminal_mask().iter().filter(|&&t| t).count(), 18);
    }

    #[test]
    fn index_round_trip() {
        for i in 0..TAXI_STATES {
            assert_eq!(TaxiState::from_index(i).index(), i);
        }
    }

    #[test]
    fn delivery_is_terminal() {
        let mdp = build_taxi(0.95).unwrap();
        let s = TaxiState { row: 2, col: 2, passenger: IN_TAXI, destination: 1 };
        let drop = TaxiAction::Drop as usize;
        let row = mdp.row(s.index(), drop);
        assert_eq!(row.len(), 1);
        let next = row[0].0;
        assert!(mdp.is_terminal(next));
        assert_eq!(mdp.reward(s.index(), drop), 20.0);

        // dropping at the wrong depot leaves the passenger there
        let s = TaxiState { row: 0, col: 0, passenger: IN_TAXI, destination: 1 };
        let next = TaxiState::from_index(mdp.row(s.index(), drop)[0].0);
        assert_eq!(next.passenger, 0);
        assert!(!mdp.is_terminal(next.index()));

        let s = TaxiState { row: 1, col: 1, passenger: 0, destination: 1 };
        assert_eq!(mdp.reward(s.index(), TaxiAction::Pickup as usize), -10.0);
        assert_eq!(mdp.row(s.index(), TaxiAction::Pickup as usize)[0].0, s.index());
    }
}
