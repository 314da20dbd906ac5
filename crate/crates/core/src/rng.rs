//! Counter-based seeding: replication `r` of a run with master seed `s`
//! draws from ChaCha8 keyed by `s` on stream `r`, so results do not depend
//! on how replications are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type ReplicationRng = ChaCha8Rng;

/// Generator for replication `rep` under `master`.
pub fn replication_rng(master: u64, rep: u64) -> ReplicationRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(rep);
    rng
}

/// Uniform draw on [0, 1).
#[inline]
pub fn uniform(rng: &mut impl Rng) -> f64 {
    rng.gen::<f64>()
}

/// Runs `reps` independent replications in parallel and returns their
/// results in replication order.
pub fn replicate<T, F>(reps: usize, master: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut ReplicationRng) -> T + Sync,
{
    (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replication_rng(master, r);
            f(r, &mut rng)
        })
        .collect()
}
