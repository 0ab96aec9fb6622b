use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};

/// Bounded FIFO store of whole episodes.
///
/// Whole episodes are kept (rather than flat transitions) because pivot
/// search and reward redistribution need each trajectory end to end.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<E> {
    capacity: usize,
    episodes: VecDeque<E>,
}

impl<E> ReplayBuffer<E> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Appends an episode, evicting the oldest one at capacity.
    pub fn insert(&mut self, episode: E) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    /// Draws `batch_size` distinct episodes uniformly at random.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&E>> {
        if batch_size > self.episodes.len() || self.episodes.is_empty() {
            return Err(Error::InsufficientEpisodes {
                requested: batch_size,
                available: self.episodes.len(),
            });
        }
        let picks = rand::seq::index::sample(rng, self.episodes.len(), batch_size);
        Ok(picks.into_iter().map(|i| &self.episodes[i]).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &E> {
        self.episodes.iter()
    }

    pub fn newest(&self) -> Option<&E> {
        self.episodes.back()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn evicts_oldest_at_capacity() {
        let mut buf = ReplayBuffer::new(5000);
        for i in 0..5001 {
            buf.insert(i);
        }
        assert_eq!(buf.len(), 5000);
        assert_eq!(*buf.iter().next().unwrap(), 1);
        assert_eq!(*buf.newest().unwrap(), 5000);
    }

    #[test]
    fn exhaustive_sample_returns_everything() {
        let mut buf = ReplayBuffer::new(100);
        for i in 0..32 {
            buf.insert(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut got: Vec<i32> = buf
            .sample(32, &mut rng)
            .unwrap()
            .into_iter()
            .copied()
            .collect();
        got.sort();
        assert_eq!(got, (0..32).collect::<Vec<_>>());
    }

    #[test]
    fn undersized_buffer_rejects_sample() {
        let mut buf = ReplayBuffer::new(100);
        for i in 0..10 {
            buf.insert(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            buf.sample(32, &mut rng),
            Err(Error::InsufficientEpisodes {
                requested: 32,
                available: 10
            })
        ));
        let empty: ReplayBuffer<i32> = ReplayBuffer::new(4);
        assert!(empty.sample(0, &mut rng).is_err());
    }

    #[test]
    fn sampling_is_roughly_uniform() {
        let mut buf = ReplayBuffer::new(10);
        for i in 0..10usize {
            buf.insert(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hits = [0usize; 10];
        for _ in 0..20_000 {
            for &e in buf.sample(3, &mut rng).unwrap() {
                hits[e] += 1;
            }
        }
        // expected 6000 per slot
        for h in hits {
            assert!((5600..6400).contains(&h), "{hits:?}");
        }
    }
}
