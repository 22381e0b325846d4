//! Prints size and match statistics of a generated world.
//!
//! `cargo run --release --example world_stats [config.toml]`

use carpool::config::Config;
use carpool::sim::{PreparedWorld, World};

fn main() -> carpool::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(p) => Config::load(p.as_ref())?,
        None => Config::default(),
    };
    let t = std::time::Instant::now();
    let world = World::generate(&cfg.world(), cfg.seed)?;
    let prepared = PreparedWorld::new(&world, &cfg.features())?;
    let mut counts = prepared.candidate_counts();
    counts.sort_unstable();
    let n = counts.len().max(1);
    println!("users: {}", world.population.len());
    println!("trips: {}", world.store.len());
    println!(
        "queries: {} over {} users",
        world.queries.len(),
        prepared.n_users()
    );
    if !counts.is_empty() {
        println!(
            "candidates per query: min {} median {} max {} mean {:.1}",
            counts[0],
            counts[n / 2],
            counts[n - 1],
            counts.iter().sum::<usize>() as f64 / n as f64
        );
    }
    println!("elapsed: {:.2?}", t.elapsed());
    Ok(())
}
