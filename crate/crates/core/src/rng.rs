//! Seeded random streams.
//!
//! Every replicate draws from its own ChaCha stream keyed by
//! `(master_seed, replicate)`, so results do not depend on how replicates
//! are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type SimRng = ChaCha8Rng;

/// Stream `replicate` of the generator seeded with `master_seed`.
pub fn stream(master_seed: u64, replicate: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate);
    rng
}

/// Runs `f` once per replicate on its own stream and returns the results in
/// replicate order. `workers` sizes a dedicated thread pool; `None` uses the
/// global one.
pub fn run_replicates<T, F>(replicates: u64, master_seed: u64, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &mut SimRng) -> Result<T> + Sync + Send,
{
    run_replicates_on(replicates, workers, |i| f(i, &mut stream(master_seed, i)))
}

/// Replicates per block in [`fold_replicates`]. Fixed so that block
/// boundaries, and hence floating-point merge order, never depend on the
/// number of workers.
pub const FOLD_BLOCK: u64 = 256;

/// Folds replicates into per-block accumulators, in parallel across blocks,
/// then merges the blocks in replicate order.
pub fn fold_replicates<A, I, F, M>(
    replicates: u64,
    master_seed: u64,
    workers: Option<usize>,
    init: I,
    fold: F,
    merge: M,
) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, u64, &mut SimRng) -> Result<()> + Sync + Send,
    M: Fn(&mut A, A),
{
    let blocks = replicates.div_ceil(FOLD_BLOCK);
    let parts = run_replicates_on(blocks, workers, |b| {
        let mut acc = init();
        let end = ((b + 1) * FOLD_BLOCK).min(replicates);
        for i in b * FOLD_BLOCK..end {
            fold(&mut acc, i, &mut stream(master_seed, i))?;
        }
        Ok(acc)
    })?;
    let mut total = init();
    for part in parts {
        merge(&mut total, part);
    }
    Ok(total)
}

fn run_replicates_on<T, F>(count: u64, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let job = || (0..count).into_par_iter().map(&f).collect::<Result<Vec<T>>>();
    match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::ResourceLimit(format!("thread pool: {e}")))?
            .install(job),
        None => job(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn draws(seed: u64, rep: u64) -> Vec<u64> {
        let mut rng = stream(seed, rep);
        (0..4).map(|_| rng.random()).collect()
    }

    #[test]
    fn streams_replay_and_differ() {
        assert_eq!(draws(7, 3), draws(7, 3));
        assert_ne!(draws(7, 3), draws(7, 4));
        assert_ne!(draws(7, 3), draws(8, 3));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let f = |_, rng: &mut SimRng| Ok(rng.random::<u64>());
        let one = run_replicates(64, 5, Some(1), f).unwrap();
        let four = run_replicates(64, 5, Some(4), f).unwrap();
        assert_eq!(one, four);
        assert_eq!(one[10], draws(5, 10)[0]);
    }

    #[test]
    fn folding_is_schedule_independent() {
        let run = |workers| {
            fold_replicates(
                1000,
                9,
                Some(workers),
                Vec::new,
                |acc: &mut Vec<u64>, i, rng| {
                    acc.push(i ^ rng.random::<u64>());
                    Ok(())
                },
                |acc, part| acc.extend(part),
            )
            .unwrap()
        };
        let one = run(1);
        assert_eq!(one.len(), 1000);
        assert_eq!(one, run(3));
        assert_eq!(one[700], 700 ^ draws(9, 700)[0]);
    }
}
