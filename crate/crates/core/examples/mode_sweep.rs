//! Final accuracy, fidelity and discovery for random / ours / ours++ over a
//! range of seeds.
//!
//! cargo run --release -p explore-core --example mode_sweep -- configs/sim_pets.cfg 15 10 [key=value ...]

use std::time::Instant;

use explore_core::engine::{Engine, EngineConfig, Mode, SimEnvironment, StaticDescriptors};
use explore_core::simulator::make_world;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let path = args
        .first()
        .map(String::as_str)
        .unwrap_or("configs/sim_pets.cfg");
    let iterations: u32 = args.get(1).map_or(Ok(15), |s| s.parse())?;
    let seeds: u64 = args.get(2).map_or(Ok(10), |s| s.parse())?;
    let mut text = std::fs::read_to_string(path)?;
    for kv in args.iter().skip(3) {
        text.push_str(kv);
        text.push('\n');
    }
    let start = Instant::now();
    let (mut ordered, mut disc_r, mut disc_o) = (0, 0.0, 0.0);
    for seed in 0..seeds {
        let mut row = Vec::new();
        for mode in [Mode::Random, Mode::Ours, Mode::OursPlusPlus] {
            let mut cfg = EngineConfig::parse(&text)?;
            cfg.seed = seed;
            cfg.mode = mode;
            let env = SimEnvironment::new(make_world(&cfg.world_spec().unwrap())?);
            let d = StaticDescriptors::for_source(cfg.descriptors);
            let mut e = Engine::new(cfg, &env, &d)?;
            let hist = e.run(iterations)?;
            let last = hist.last().unwrap();
            let disc = e.state().discovered_at.unwrap_or(e.state().queries_total);
            row.push((
                last.accuracy.unwrap(),
                last.fidelity,
                disc,
                last.clusters_discovered,
            ));
        }
        let ok = row[0].0 <= row[1].0 && row[1].0 <= row[2].0;
        ordered += ok as u32;
        disc_r += row[0].2 as f64;
        disc_o += row[1].2 as f64;
        println!(
            "seed {seed}: acc {:.3} {:.3} {:.3}  phi {:.3} {:.3} {:.3}  disc {} {} {}  clusters {:?} {:?} {:?} {}",
            row[0].0, row[1].0, row[2].0, row[0].1, row[1].1, row[2].1, row[0].2, row[1].2, row[2].2,
            row[0].3, row[1].3, row[2].3, if ok { "ok" } else { "MISS" }
        );
    }
    println!(
        "ordered {ordered}/{seeds}; mean discovery random {:.1} ours {:.1} ratio {:.3}; {:.1}s",
        disc_r / seeds as f64,
        disc_o / seeds as f64,
        disc_o / disc_r,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
