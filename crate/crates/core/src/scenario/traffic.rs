//! Slot-level uplink activity of sub-networks.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

use super::config::TrafficModel;

/// Activity of one sub-network during one TX cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleSchedule {
    /// SA pair mapped to each slot, if any.
    pub slot_owner: Vec<Option<usize>>,
    /// Transmission indicator χ of the slot owner.
    pub active: Vec<bool>,
}

impl CycleSchedule {
    /// Slot in which SA pair `sa` is scheduled this cycle.
    pub fn slot_of(&self, sa: usize) -> Option<usize> {
        self.slot_owner.iter().position(|&o| o == Some(sa))
    }

    /// SA pair transmitting in `slot`, after the χ draw.
    pub fn transmitter(&self, slot: usize) -> Option<usize> {
        if self.active[slot] {
            self.slot_owner[slot]
        } else {
            None
        }
    }
}

/// Draw the slot schedule of one sub-network.
///
/// `offset` rotates the round-robin order so that non-synchronized
/// sub-networks do not schedule the same SA index in the same slot.
pub fn sample_cycle<R: Rng + ?Sized>(
    model: &TrafficModel,
    n_sa: usize,
    n_slots: usize,
    offset: usize,
    rng: &mut R,
) -> CycleSchedule {
    let mut slot_owner = vec![None; n_slots];
    match *model {
        TrafficModel::BernoulliIsochronous { .. } => {
            for (slot, owner) in slot_owner.iter_mut().enumerate() {
                *owner = Some((slot + offset) % n_sa);
            }
        }
        TrafficModel::PushPull {
            lambda,
            reserved_slots,
            ..
        } => {
            for (slot, owner) in slot_owner.iter_mut().enumerate().take(reserved_slots) {
                *owner = Some(slot);
            }
            let push_sas: Vec<usize> = (reserved_slots..n_sa).collect();
            if !push_sas.is_empty() && lambda > 0.0 {
                let arrivals = Poisson::new(lambda)
                    .map(|p| p.sample(rng) as usize)
                    .unwrap_or(0);
                let mut pending = vec![false; push_sas.len()];
                for _ in 0..arrivals {
                    pending[rng.random_range(0..push_sas.len())] = true;
                }
                let mut contenders: Vec<usize> = push_sas
                    .iter()
                    .zip(&pending)
                    .filter(|(_, &p)| p)
                    .map(|(&sa, _)| sa)
                    .collect();
                contenders.shuffle(rng);
                for (owner, sa) in slot_owner[reserved_slots..].iter_mut().zip(contenders) {
                    *owner = Some(sa);
                }
            }
        }
    }
    let eta = model.eta();
    let active = slot_owner
        .iter()
        .map(|o| o.is_some() && (eta >= 1.0 || rng.random::<f64>() < eta))
        .collect();
    CycleSchedule { slot_owner, active }
}

/// Slot in which SA pair `sa` measures interference this cycle: its
/// scheduled slot, or else a fixed home slot.
pub fn measurement_slot(
    model: &TrafficModel,
    schedule: &CycleSchedule,
    sa: usize,
    n_slots: usize,
) -> usize {
    if let Some(s) = schedule.slot_of(sa) {
        return s;
    }
    match *model {
        TrafficModel::BernoulliIsochronous { .. } => sa % n_slots,
        TrafficModel::PushPull { reserved_slots, .. } => {
            let push_slots = n_slots - reserved_slots;
            if push_slots == 0 {
                sa % n_slots
            } else {
                reserved_slots + (sa - reserved_slots.min(sa)) % push_slots
            }
        }
    }
}

/// Transmission indicators χ_c for the given interfering schedules in `slot`.
pub fn sample_traffic<R: Rng + ?Sized>(
    model: &TrafficModel,
    n_sa: usize,
    n_slots: usize,
    slot: usize,
    offsets: &[usize],
    rng: &mut R,
) -> Vec<bool> {
    assert!(slot < n_slots, "slot {slot} out of range");
    offsets
        .iter()
        .map(|&off| {
            sample_cycle(model, n_sa, n_slots, off, rng)
                .transmitter(slot)
                .is_some()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn certain_transmission_is_always_active() {
        let model = TrafficModel::BernoulliIsochronous { eta: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for slot in 0..4 {
            let chi = sample_traffic(&model, 4, 4, slot, &[0, 1, 2, 3], &mut rng);
            assert!(chi.iter().all(|&c| c));
        }
    }

    #[test]
    fn activity_rate_matches_eta() {
        let model = TrafficModel::BernoulliIsochronous { eta: 0.9 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| sample_cycle(&model, 4, 4, 0, &mut rng).active[0])
            .count();
        let rate = hits as f64 / n as f64;
        let sd = (0.9 * 0.1 / n as f64).sqrt();
        assert!((rate - 0.9).abs() < 3.0 * sd, "{rate}");
    }

    #[test]
    fn pull_slots_map_to_pull_pairs() {
        let model = TrafficModel::PushPull {
            eta: 1.0,
            lambda: 5.0,
            reserved_slots: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut push_owners = std::collections::BTreeSet::new();
        for _ in 0..1000 {
            let s = sample_cycle(&model, 6, 4, 0, &mut rng);
            assert_eq!(s.slot_owner[0], Some(0));
            assert_eq!(s.slot_owner[1], Some(1));
            for o in s.slot_owner[2..].iter().flatten() {
                assert!((2..6).contains(o));
                push_owners.insert(*o);
            }
            if let (Some(a), Some(b)) = (s.slot_owner[2], s.slot_owner[3]) {
                assert_ne!(a, b);
            }
        }
        assert_eq!(push_owners.len(), 4);
    }

    #[test]
    fn round_robin_covers_every_pair() {
        let model = TrafficModel::BernoulliIsochronous { eta: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = sample_cycle(&model, 4, 4, 3, &mut rng);
        let mut owners: Vec<usize> = s.slot_owner.iter().flatten().copied().collect();
        owners.sort();
        assert_eq!(owners, vec![0, 1, 2, 3]);
        for sa in 0..4 {
            assert_eq!(measurement_slot(&model, &s, sa, 4), (sa + 1) % 4);
        }
    }
}
