//! Federated rounds: sampling, local training, aggregation, distribution.

mod aggregate;
mod client;
mod config;
mod server;

pub use aggregate::{
    compute_diff_measure, fedavg_aggregate, normalize_layerwise, personalized_aggregate,
    weight_stats, Contribution, WeightStats,
};
pub use client::{local_train, TrainStats};
pub use config::{FlConfig, Method, Participation};
pub use server::{client_rng, server_rng, ClientState, RoundOutcome, RoundState, Simulation};

use rand::Rng;

/// Indices of the clients taking part in a round, ascending.
///
/// The join ratio is drawn first when it is a range; then
/// `max(1, round(rho * n))` distinct clients are chosen uniformly.
pub fn sample_clients(n: usize, rho: &Participation, rng: &mut impl Rng) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let r = rho.draw(rng);
    let m = ((r * n as f64).round() as usize).clamp(1, n);
    let mut picked = rand::seq::index::sample(rng, n, m).into_vec();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn participation_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_clients(10, &Participation::Fixed(1.0), &mut rng), (0..10).collect::<Vec<_>>());
        assert_eq!(sample_clients(10, &Participation::Fixed(0.1), &mut rng).len(), 1);
        assert_eq!(sample_clients(10, &Participation::Fixed(0.01), &mut rng).len(), 1);
        for _ in 0..100 {
            let s = sample_clients(10, &Participation::Range([0.1, 1.0]), &mut rng);
            assert!((1..=10).contains(&s.len()));
            assert!(s.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
