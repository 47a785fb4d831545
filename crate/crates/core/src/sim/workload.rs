use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::composition::CompositionRequest;
use crate::firm::{Arrival, ClientId, Workload};
use crate::time::SimTime;

fn pick<'a>(rng: &mut ChaCha8Rng, requests: &'a [CompositionRequest]) -> &'a CompositionRequest {
    &requests[rng.gen_range(0..requests.len())]
}

/// Open-loop arrivals with exponential inter-arrival gaps.
pub struct PoissonWorkload {
    arrivals: Vec<Arrival>,
}

impl PoissonWorkload {
    pub fn new(
        count: usize,
        rate: f64,
        clients: u32,
        requests: &[CompositionRequest],
        arrival_rng: &mut ChaCha8Rng,
        client_rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut t = 0.0;
        let arrivals = (0..count)
            .map(|_| {
                let u: f64 = arrival_rng.gen();
                t += -(1.0 - u).ln() / rate;
                Arrival {
                    time: SimTime(t),
                    client: client_rng.gen_range(0..clients),
                    request: pick(client_rng, requests).clone(),
                }
            })
            .collect();
        Self { arrivals }
    }
}

impl Workload for PoissonWorkload {
    fn initial(&mut self) -> Vec<Arrival> {
        std::mem::take(&mut self.arrivals)
    }

    fn on_finished(&mut self, _client: ClientId, _now: SimTime) -> Option<Arrival> {
        None
    }
}

/// A fixed client population, each reissuing as soon as its previous
/// request finishes, until `count` requests have been issued.
pub struct ClosedWorkload {
    remaining: usize,
    clients: u32,
    requests: Vec<CompositionRequest>,
    rng: ChaCha8Rng,
}

impl ClosedWorkload {
    pub fn new(count: usize, clients: u32, requests: Vec<CompositionRequest>, seed: u64) -> Self {
        Self {
            remaining: count,
            clients,
            requests,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn next(&mut self, client: ClientId, now: SimTime) -> Option<Arrival> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(Arrival {
            time: now,
            client,
            request: pick(&mut self.rng, &self.requests).clone(),
        })
    }
}

impl Workload for ClosedWorkload {
    fn initial(&mut self) -> Vec<Arrival> {
        (0..self.clients)
            .map_while(|c| self.next(c, SimTime::ZERO))
            .collect()
    }

    fn on_finished(&mut self, client: ClientId, now: SimTime) -> Option<Arrival> {
        self.next(client, now)
    }
}
