//! Tape-machine model of data collection.
//!
//! Each cell `(h, s, a)` owns a tape of i.i.d. next states drawn from
//! `P[h](. | s, a)` and a tape of realized rewards; the initial state has its
//! own tape. A logger never sees randomness other than what it reads off a
//! tape (plus its own action draws), and the frontier of a cell counts how
//! many entries have been consumed. Tape entry `k` of a cell is the `k`-th
//! draw of that cell's counter-based stream, so tapes are filled lazily and
//! their contents do not depend on the order in which cells are visited.

use alloc::vec::Vec;
use core::fmt;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{Policy, Step, TabularMdp, Trajectory};
use crate::rng::{sample_index, stream, unit_f64, StreamKey};

const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TapeKind {
    Initial,
    Transition,
    Reward,
}

impl fmt::Display for TapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TapeKind::Initial => "initial-state",
            TapeKind::Transition => "transition",
            TapeKind::Reward => "reward",
        })
    }
}

#[derive(Clone)]
struct Tape<T> {
    key: StreamKey,
    rng: Option<ChaCha8Rng>,
    entries: Vec<T>,
    frontier: usize,
}

impl<T> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("materialized", &self.entries.len()).field("frontier", &self.frontier).finish()
    }
}

impl<T: Copy> Tape<T> {
    fn new(key: StreamKey) -> Self {
        Tape { key, rng: None, entries: Vec::new(), frontier: 0 }
    }

    fn fill(&mut self, seed: u64, upto: usize, mut decode: impl FnMut(u64) -> T) {
        if self.entries.len() >= upto {
            return;
        }
        let key = self.key;
        let rng = self.rng.get_or_insert_with(|| stream(seed, key));
        while self.entries.len() < upto {
            self.entries.push(decode(rng.next_u64()));
        }
    }

    fn next(&mut self, seed: u64, max_len: usize, decode: impl FnMut(u64) -> T) -> Option<T> {
        if self.frontier >= max_len {
            return None;
        }
        if self.frontier >= self.entries.len() {
            let upto = (self.frontier + CHUNK).min(max_len);
            self.fill(seed, upto, decode);
        }
        let value = self.entries[self.frontier];
        self.frontier += 1;
        Some(value)
    }
}

/// Pre-sampled tapes for one logging run, plus their frontier.
#[derive(Debug, Clone)]
pub struct TapeSet<'m> {
    mdp: &'m TabularMdp,
    seed: u64,
    max_len: usize,
    initial: Tape<usize>,
    transitions: Vec<Tape<usize>>,
    rewards: Vec<Tape<f64>>,
}

impl<'m> TapeSet<'m> {
    /// Tapes of capacity `max_len` for every cell, all frontiers at zero.
    pub fn new(mdp: &'m TabularMdp, max_len: usize, seed: u64) -> Self {
        let shape = mdp.shape();
        let mut transitions = Vec::with_capacity(shape.transition_cells());
        let mut rewards = Vec::with_capacity(shape.cells());
        for h in 0..shape.horizon {
            for s in 0..shape.states {
                for a in 0..shape.actions {
                    if h + 1 < shape.horizon {
                        transitions.push(Tape::new(StreamKey::transition(h, s, a)));
                    }
                    rewards.push(Tape::new(StreamKey::reward(h, s, a)));
                }
            }
        }
        TapeSet { mdp, seed, max_len, initial: Tape::new(StreamKey::initial()), transitions, rewards }
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn mdp(&self) -> &'m TabularMdp {
        self.mdp
    }

    pub fn read_initial(&mut self) -> Result<usize> {
        let d1 = self.mdp.initial();
        self.initial.next(self.seed, self.max_len, |x| sample_index(d1, unit_f64(x))).ok_or(Error::TapeExhausted {
            tape: TapeKind::Initial,
            h: 0,
            s: 0,
            a: 0,
        })
    }

    /// Reads the next successor of `(h, s, a)` and advances its frontier.
    pub fn read_transition(&mut self, h: usize, s: usize, a: usize) -> Result<usize> {
        let row = self.mdp.transition(h, s, a);
        let cell = self.mdp.shape().cell(h, s, a);
        self.transitions[cell]
            .next(self.seed, self.max_len, |x| sample_index(row, unit_f64(x)))
            .ok_or(Error::TapeExhausted { tape: TapeKind::Transition, h, s, a })
    }

    /// Reads the next realized reward of `(h, s, a)`.
    pub fn read_reward(&mut self, h: usize, s: usize, a: usize) -> Result<f64> {
        let mean = self.mdp.reward(h, s, a);
        let noise = self.mdp.reward_noise();
        let cell = self.mdp.shape().cell(h, s, a);
        let tape = &mut self.rewards[cell];
        let value = if noise.is_random() {
            tape.next(self.seed, self.max_len, |x| noise.realize(mean, unit_f64(x)))
        } else if tape.frontier < self.max_len {
            // Point mass: nothing to draw.
            tape.frontier += 1;
            Some(mean)
        } else {
            None
        };
        value.ok_or(Error::TapeExhausted { tape: TapeKind::Reward, h, s, a })
    }

    /// Rolls out `pi`, reading states and rewards off the tapes. Only the
    /// action choices consume `action_rng`, one draw per step.
    pub fn rollout<R: RngCore + ?Sized>(&mut self, pi: &Policy, action_rng: &mut R) -> Result<Trajectory> {
        let horizon = self.mdp.horizon();
        let mut steps = Vec::with_capacity(horizon);
        let mut s = self.read_initial()?;
        for h in 0..horizon {
            let a = pi.sample_action(h, s, unit_f64(action_rng.next_u64()));
            let reward = self.read_reward(h, s, a)?;
            let next_state = if h + 1 < horizon { Some(self.read_transition(h, s, a)?) } else { None };
            steps.push(Step { state: s, action: a, reward, next_state });
            if let Some(sp) = next_state {
                s = sp;
            }
        }
        Ok(Trajectory { steps })
    }

    /// Consumed entries of the transition tape of `(h, s, a)`.
    pub fn frontier(&self, h: usize, s: usize, a: usize) -> usize {
        self.transitions[self.mdp.shape().cell(h, s, a)].frontier
    }

    pub fn reward_frontier(&self, h: usize, s: usize, a: usize) -> usize {
        self.rewards[self.mdp.shape().cell(h, s, a)].frontier
    }

    pub fn initial_frontier(&self) -> usize {
        self.initial.frontier
    }

    /// Transition frontier laid out `[h][s][a]` for `h < H - 1`.
    pub fn transition_frontier(&self) -> Vec<usize> {
        self.transitions.iter().map(|t| t.frontier).collect()
    }

    /// Materializes the full transition tape of `(h, s, a)` and returns it.
    pub fn transition_tape(&mut self, h: usize, s: usize, a: usize) -> &[usize] {
        let row = self.mdp.transition(h, s, a);
        let cell = self.mdp.shape().cell(h, s, a);
        let tape = &mut self.transitions[cell];
        tape.fill(self.seed, self.max_len, |x| sample_index(row, unit_f64(x)));
        &tape.entries
    }

    /// Materializes the full initial-state tape.
    pub fn initial_tape(&mut self) -> &[usize] {
        let d1 = self.mdp.initial();
        self.initial.fill(self.seed, self.max_len, |x| sample_index(d1, unit_f64(x)));
        &self.initial.entries
    }
}
