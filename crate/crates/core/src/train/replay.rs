use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

use crate::agent::Percept;
use crate::sim::ActionSpec;

#[derive(Clone, Debug)]
pub struct Transition {
    pub obs: Arc<Percept>,
    pub action: ActionSpec,
    pub reward: f64,
    pub next: Arc<Percept>,
    pub done: bool,
    pub episode_id: u64,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("cannot sample from an empty replay buffer")]
pub struct EmptyBuffer;

/// FIFO ring of transitions. With `whole_episodes`, eviction removes the
/// oldest episode in full so stored episodes are never partial.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    whole_episodes: bool,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, whole_episodes: bool) -> Self {
        Self {
            capacity,
            whole_episodes,
            items: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn push_episode(&mut self, episode: &[Transition]) {
        let episode = if episode.len() > self.capacity {
            &episode[episode.len() - self.capacity..]
        } else {
            episode
        };
        if self.whole_episodes {
            while self.items.len() + episode.len() > self.capacity {
                let id = self.items[0].episode_id;
                while self.items.front().is_some_and(|t| t.episode_id == id) {
                    self.items.pop_front();
                }
            }
        } else {
            let over = (self.items.len() + episode.len()).saturating_sub(self.capacity);
            self.items.drain(..over);
        }
        self.items.extend(episode.iter().cloned());
    }
}

/// Regular buffer plus the self-imitation buffer of successful episodes.
#[derive(Clone, Debug)]
pub struct Buffers {
    pub regular: ReplayBuffer,
    pub sil: ReplayBuffer,
    /// Probability that a batch slot is drawn from the SIL buffer.
    pub sil_fraction: f64,
}

impl Buffers {
    pub fn new(regular: usize, sil: usize, sil_fraction: f64) -> Self {
        Self {
            regular: ReplayBuffer::new(regular, false),
            sil: ReplayBuffer::new(sil, true),
            sil_fraction,
        }
    }

    pub fn push(&mut self, episode: &[Transition], succeeded: bool) {
        self.regular.push_episode(episode);
        self.finish_episode(episode, succeeded);
    }

    /// Online variant of [`Buffers::push`]: transitions enter the regular
    /// buffer as they happen, and the finished episode goes to SIL if it
    /// succeeded.
    pub fn push_step(&mut self, t: Transition) {
        self.regular.push_episode(std::slice::from_ref(&t));
    }

    pub fn finish_episode(&mut self, episode: &[Transition], succeeded: bool) {
        if succeeded {
            self.sil.push_episode(episode);
        }
    }

    /// Draws each slot from SIL with probability `sil_fraction` (when SIL
    /// holds anything), otherwise from the regular buffer.
    pub fn sample_mixed(
        &self,
        batch: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<&Transition>, EmptyBuffer> {
        if self.regular.is_empty() {
            return Err(EmptyBuffer);
        }
        Ok((0..batch)
            .map(|_| {
                let from_sil = !self.sil.is_empty() && rng.gen::<f64>() < self.sil_fraction;
                let buf = if from_sil { &self.sil } else { &self.regular };
                buf.get(rng.gen_range(0..buf.len()))
            })
            .collect())
    }
}
