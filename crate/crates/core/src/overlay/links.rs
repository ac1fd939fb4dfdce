//! Neighbor discovery and link-quality estimation from beacon reception.
//!
//! Each peer gets an exponentially weighted moving average of beacon
//! reception: a received beacon counts as a hit, and gaps in the beacon
//! sequence number count as misses (capped, so a long outage does not
//! poison the estimate forever). A peer silent for more than `k_loss`
//! beacon periods is marked lost; when it is heard again the estimator
//! restarts from scratch, which lets links recover quickly after a
//! partition heals.

use std::collections::BTreeMap;

use crate::NodeId;

#[derive(Clone, Debug)]
pub(super) struct PeerEstimate {
    pub rate: f64,
    pub last_heard: f64,
    pub last_seq: u64,
    /// Beacons actually received since (re)discovery.
    pub heard: u64,
    pub lost: bool,
}

#[derive(Clone, Debug)]
pub(super) struct LinkTable {
    peers: BTreeMap<NodeId, PeerEstimate>,
    alpha: f64,
    beacon_period: f64,
    k_loss: u32,
    min_rate: f64,
    min_heard: u64,
}

impl LinkTable {
    pub fn new(alpha: f64, beacon_period: f64, k_loss: u32, min_rate: f64, min_heard: u64) -> Self {
        LinkTable { peers: BTreeMap::new(), alpha, beacon_period, k_loss, min_rate, min_heard }
    }

    /// Process one received beacon from `peer` carrying sequence `seq`.
    pub fn on_beacon(&mut self, peer: NodeId, seq: u64, now: f64) {
        let alpha = self.alpha;
        let k_loss = self.k_loss as u64;
        match self.peers.get_mut(&peer) {
            Some(est) if !est.lost => {
                // Count the sequence gap as misses, capped at the loss
                // horizon: anything longer would have marked the peer lost.
                let gap = seq.saturating_sub(est.last_seq + 1).min(k_loss);
                for _ in 0..gap {
                    est.rate *= 1.0 - alpha;
                }
                est.rate = (1.0 - alpha) * est.rate + alpha;
                est.last_heard = now;
                est.last_seq = seq;
                est.heard += 1;
            }
            entry => {
                // New peer, or a lost one coming back: fresh estimator.
                let est = PeerEstimate {
                    rate: self.alpha,
                    last_heard: now,
                    last_seq: seq,
                    heard: 1,
                    lost: false,
                };
                match entry {
                    Some(e) => *e = est,
                    None => {
                        self.peers.insert(peer, est);
                    }
                }
            }
        }
    }

    /// Mark peers lost after prolonged silence. Returns the peers that just
    /// transitioned to lost.
    pub fn tick(&mut self, now: f64) -> Vec<NodeId> {
        let horizon = self.k_loss as f64 * self.beacon_period;
        let mut newly_lost = Vec::new();
        for (&id, est) in self.peers.iter_mut() {
            if !est.lost && now - est.last_heard > horizon {
                est.lost = true;
                newly_lost.push(id);
            }
        }
        newly_lost
    }

    pub fn rate(&self, peer: NodeId) -> f64 {
        match self.peers.get(&peer) {
            Some(est) if !est.lost => est.rate,
            _ => 0.0,
        }
    }

    pub fn is_lost(&self, peer: NodeId) -> bool {
        self.peers.get(&peer).is_none_or(|e| e.lost)
    }

    /// A peer we have heard enough of, recently enough, to lean on.
    pub fn is_candidate(&self, peer: NodeId) -> bool {
        match self.peers.get(&peer) {
            Some(est) => !est.lost && est.rate >= self.min_rate && est.heard >= self.min_heard,
            None => false,
        }
    }

    /// Current candidates, ascending by id.
    #[cfg(test)]
    pub fn candidates(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.peers
            .iter()
            .filter(|(_, e)| !e.lost && e.rate >= self.min_rate && e.heard >= self.min_heard)
            .map(|(&id, _)| id)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn table() -> LinkTable {
        LinkTable::new(0.1, 1.0, 5, 0.2, 3)
    }

    #[test]
    fn steady_reception_drives_rate_toward_one() {
        let mut t = table();
        let p = NodeId(1);
        let mut prev = 0.0;
        for k in 0..200 {
            t.on_beacon(p, k, k as f64);
            assert!(t.rate(p) > prev, "rate must climb monotonically");
            prev = t.rate(p);
        }
        assert!(t.rate(p) > 0.99);
        assert!(t.is_candidate(p));
    }

    #[test]
    fn sequence_gaps_drive_rate_toward_zero() {
        let mut t = table();
        let p = NodeId(1);
        for k in 0..50 {
            t.on_beacon(p, k, k as f64);
        }
        let high = t.rate(p);
        // Hear only every fifth beacon from now on; four misses per hit.
        let mut now = 50.0;
        let mut seq = 50;
        for _ in 0..60 {
            seq += 5;
            now += 5.0;
            t.on_beacon(p, seq, now);
        }
        assert!(t.rate(p) < high);
        assert!((t.rate(p) - 0.2).abs() < 0.15, "rate {} should hover near 1/5", t.rate(p));
    }

    #[test]
    fn bernoulli_stream_estimates_its_rate() {
        let mut t = table();
        let p = NodeId(3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 0..500u64 {
            if rng.random_bool(0.7) {
                t.on_beacon(p, k, k as f64);
            }
        }
        assert!((t.rate(p) - 0.7).abs() <= 0.05, "estimate {}", t.rate(p));
    }

    #[test]
    fn silence_marks_lost_and_revival_restarts() {
        let mut t = table();
        let p = NodeId(2);
        for k in 0..20 {
            t.on_beacon(p, k, k as f64);
        }
        assert!(t.is_candidate(p));
        assert!(t.tick(22.0).is_empty(), "within the horizon");
        let lost = t.tick(25.1);
        assert_eq!(lost, vec![p]);
        assert!(t.is_lost(p));
        assert_eq!(t.rate(p), 0.0);
        assert!(!t.is_candidate(p));

        // Back after a long partition: sequence jumped by hundreds, but the
        // estimator restarts instead of charging the gap.
        t.on_beacon(p, 400, 400.0);
        assert!(!t.is_lost(p));
        assert!(t.rate(p) > 0.0);
        assert!(!t.is_candidate(p), "one beacon is not enough to trust");
        t.on_beacon(p, 401, 401.0);
        t.on_beacon(p, 402, 402.0);
        assert!(t.is_candidate(p), "rate {} after three hits", t.rate(p));
    }

    #[test]
    fn unknown_peers_are_nothing() {
        let t = table();
        assert_eq!(t.rate(NodeId(9)), 0.0);
        assert!(t.is_lost(NodeId(9)));
        assert!(!t.is_candidate(NodeId(9)));
        assert_eq!(t.candidates().count(), 0);
    }
}
