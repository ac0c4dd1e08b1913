//! Node-granular leases taken before a join commits.
//!
//! A lease records the joiner holding it, its expiry in virtual
//! milliseconds and the node epoch the joiner planned against. A lease is
//! granted only while the target is unlocked (or its lease has expired) and
//! the target's epoch still equals the planned one.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::node::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lease {
    pub holder: NodeId,
    pub expires_at: u64,
    pub epoch: u64,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum Refusal {
    #[error("locked by {holder} until {until}")]
    Locked { holder: NodeId, until: u64 },
    #[error("epoch moved from {planned} to {current}")]
    Stale { planned: u64, current: u64 },
}

#[derive(Debug, Clone, Default)]
pub struct Reservations {
    leases: BTreeMap<NodeId, Lease>,
}

impl Reservations {
    pub fn new() -> Self {
        Self::default()
    }

    /// Grants or refuses a lease on `target` for `holder`.
    ///
    /// Re-reserving a node already leased to the same holder refreshes it.
    pub fn try_reserve(
        &mut self,
        target: NodeId,
        holder: NodeId,
        now: u64,
        lease_ms: u64,
        planned_epoch: u64,
        current_epoch: u64,
    ) -> Result<Lease, Refusal> {
        if let Some(l) = self.leases.get(&target) {
            if l.holder != holder && l.expires_at > now {
                return Err(Refusal::Locked {
                    holder: l.holder,
                    until: l.expires_at,
                });
            }
        }
        if planned_epoch != current_epoch {
            return Err(Refusal::Stale {
                planned: planned_epoch,
                current: current_epoch,
            });
        }
        let lease = Lease {
            holder,
            expires_at: now.saturating_add(lease_ms),
            epoch: planned_epoch,
        };
        self.leases.insert(target, lease);
        Ok(lease)
    }

    /// Installs a lease without checks; test and tooling helper.
    pub fn force(&mut self, target: NodeId, holder: NodeId, expires_at: u64) {
        self.leases.insert(
            target,
            Lease {
                holder,
                expires_at,
                epoch: 0,
            },
        );
    }

    pub fn holds(&self, target: NodeId, holder: NodeId, now: u64) -> bool {
        self.leases
            .get(&target)
            .is_some_and(|l| l.holder == holder && l.expires_at > now)
    }

    pub fn lease(&self, target: NodeId) -> Option<&Lease> {
        self.leases.get(&target)
    }

    /// Releases `target` if `holder` owns the lease. Returns whether it did.
    pub fn release(&mut self, target: NodeId, holder: NodeId) -> bool {
        match self.leases.get(&target) {
            Some(l) if l.holder == holder => {
                self.leases.remove(&target);
                true
            }
            _ => false,
        }
    }

    /// Releases every lease held by `holder`, returning the freed targets.
    pub fn release_all(&mut self, holder: NodeId) -> Vec<NodeId> {
        let freed: Vec<NodeId> = self
            .leases
            .iter()
            .filter(|(_, l)| l.holder == holder)
            .map(|(n, _)| *n)
            .collect();
        for n in &freed {
            self.leases.remove(n);
        }
        freed
    }

    /// Drops leases that expired at or before `now`.
    pub fn expire(&mut self, now: u64) -> Vec<(NodeId, Lease)> {
        let gone: Vec<(NodeId, Lease)> = self
            .leases
            .iter()
            .filter(|(_, l)| l.expires_at <= now)
            .map(|(n, l)| (*n, *l))
            .collect();
        for (n, _) in &gone {
            self.leases.remove(n);
        }
        gone
    }

    pub fn is_empty(&self) -> bool {
        self.leases.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: NodeId = NodeId(1);
    const B: NodeId = NodeId(2);
    const T: NodeId = NodeId(9);

    #[test]
    fn exclusive_until_expiry() {
        let mut r = Reservations::new();
        r.try_reserve(T, A, 0, 100, 3, 3).unwrap();
        assert_eq!(
            r.try_reserve(T, B, 50, 100, 3, 3),
            Err(Refusal::Locked {
                holder: A,
                until: 100
            })
        );
        assert!(r.try_reserve(T, B, 100, 100, 3, 3).is_ok());
        assert!(r.holds(T, B, 150));
        assert!(!r.holds(T, A, 150));
    }

    #[test]
    fn stale_epoch_is_refused() {
        let mut r = Reservations::new();
        assert_eq!(
            r.try_reserve(T, A, 0, 100, 2, 3),
            Err(Refusal::Stale {
                planned: 2,
                current: 3
            })
        );
        assert!(r.is_empty());
    }

    #[test]
    fn release_only_by_holder() {
        let mut r = Reservations::new();
        r.try_reserve(T, A, 0, 100, 0, 0).unwrap();
        assert!(!r.release(T, B));
        assert!(r.release(T, A));
        r.try_reserve(T, A, 0, 100, 0, 0).unwrap();
        r.try_reserve(B, A, 0, 100, 0, 0).unwrap();
        assert_eq!(r.release_all(A), [B, T]);
        assert!(r.is_empty());
    }

    #[test]
    fn expiry_sweep() {
        let mut r = Reservations::new();
        r.try_reserve(T, A, 0, 10, 0, 0).unwrap();
        r.try_reserve(B, A, 0, 20, 0, 0).unwrap();
        assert_eq!(r.expire(10).len(), 1);
        assert!(r.lease(B).is_some());
    }
}
