//! The append-only interaction history.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub round: usize,
    pub user: usize,
    pub arm: usize,
    pub reward: u8,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LogError {
    #[error("round {got} precedes the last logged round {last}")]
    RoundOrder { last: usize, got: usize },
    #[error("observation ({user}, {arm}) outside a {n_users}x{n_arms} environment")]
    OutOfBounds {
        user: usize,
        arm: usize,
        n_users: usize,
        n_arms: usize,
    },
    #[error("reward must be 0 or 1, got {0}")]
    Reward(u8),
}

/// Observations with non-decreasing rounds and in-range indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationLog {
    n_users: usize,
    n_arms: usize,
    records: Vec<Observation>,
}

impl ObservationLog {
    pub fn new(n_users: usize, n_arms: usize) -> Self {
        Self {
            n_users,
            n_arms,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, obs: Observation) -> Result<(), LogError> {
        if obs.user >= self.n_users || obs.arm >= self.n_arms {
            return Err(LogError::OutOfBounds {
                user: obs.user,
                arm: obs.arm,
                n_users: self.n_users,
                n_arms: self.n_arms,
            });
        }
        if obs.reward > 1 {
            return Err(LogError::Reward(obs.reward));
        }
        if let Some(last) = self.records.last() {
            if obs.round < last.round {
                return Err(LogError::RoundOrder {
                    last: last.round,
                    got: obs.round,
                });
            }
        }
        self.records.push(obs);
        Ok(())
    }

    pub fn records(&self) -> &[Observation] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    /// Records involving `user`, in log order.
    pub fn for_user(&self, user: usize) -> impl Iterator<Item = &Observation> {
        self.records.iter().filter(move |o| o.user == user)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(round: usize, user: usize, arm: usize, reward: u8) -> Observation {
        Observation {
            round,
            user,
            arm,
            reward,
        }
    }

    #[test]
    fn rejects_out_of_order_and_out_of_range() {
        let mut log = ObservationLog::new(3, 2);
        log.push(obs(1, 0, 1, 1)).unwrap();
        log.push(obs(1, 2, 0, 0)).unwrap();
        assert_eq!(
            log.push(obs(0, 1, 1, 1)),
            Err(LogError::RoundOrder { last: 1, got: 0 })
        );
        assert!(matches!(log.push(obs(2, 3, 0, 1)), Err(LogError::OutOfBounds { .. })));
        assert!(matches!(log.push(obs(2, 0, 2, 1)), Err(LogError::OutOfBounds { .. })));
        assert_eq!(log.push(obs(2, 0, 0, 2)), Err(LogError::Reward(2)));
        assert_eq!(log.len(), 2);
        assert_eq!(log.for_user(2).count(), 1);
    }
}
