use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::registry::DeploymentId;
use crate::topology::BlacklistEntry;

/// State of the periodic promoter.
///
/// Each tick resets the flag, flips a fair coin, and on heads picks a
/// uniformly random blacklist entry to promote. The caller spaces ticks
/// `frequency` apart; with an empty blacklist the promoter idles.
#[derive(Debug, Clone)]
pub struct PromoterState {
    pub frequency: f64,
    pub flag: bool,
    pub pending: Option<DeploymentId>,
    rng: ChaCha8Rng,
}

impl PromoterState {
    pub fn new(frequency: f64, seed: u64) -> Self {
        Self {
            frequency,
            flag: false,
            pending: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn promoter_tick(&mut self, blacklist: &[BlacklistEntry]) -> Option<DeploymentId> {
        self.flag = false;
        self.pending = None;
        self.flag = self.rng.gen_bool(0.5);
        if self.flag && !blacklist.is_empty() {
            let line = self.rng.gen_range(0..blacklist.len());
            self.pending = Some(blacklist[line].deployment.clone());
        }
        self.pending.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::SimTime;

    fn entry(alias: &str) -> BlacklistEntry {
        BlacklistEntry {
            deployment: DeploymentId::new("S", "i", alias),
            since: SimTime::ZERO,
        }
    }

    #[test]
    fn empty_blacklist_never_promotes() {
        let mut p = PromoterState::new(1.0, 7);
        for _ in 0..100 {
            assert_eq!(p.promoter_tick(&[]), None);
        }
    }

    #[test]
    fn single_entry_is_the_pick() {
        let mut p = PromoterState::new(1.0, 3);
        let list = [entry("d2")];
        let got = (0..64).find_map(|_| p.promoter_tick(&list));
        assert_eq!(got, Some(list[0].deployment.clone()));
        assert!(p.flag);
    }

    #[test]
    fn tails_clears_flag_and_pending() {
        let mut p = PromoterState::new(1.0, 11);
        let list = [entry("d")];
        let mut saw_tails = false;
        for _ in 0..64 {
            let r = p.promoter_tick(&list);
            assert_eq!(r.is_some(), p.flag);
            saw_tails |= !p.flag;
        }
        assert!(saw_tails);
    }
}
