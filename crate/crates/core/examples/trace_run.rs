//! Metrics CSV for one run.
//!
//! cargo run --release -p explore-core --example trace_run -- configs/sim_pets.cfg 15 [key=value ...]

use explore_core::engine::{metrics_csv, Engine, EngineConfig, SimEnvironment, StaticDescriptors};
use explore_core::simulator::make_world;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut text = std::fs::read_to_string(&args[0])?;
    let iterations: u32 = args[1].parse()?;
    for kv in &args[2..] {
        text.push_str(kv);
        text.push('\n');
    }
    let cfg = EngineConfig::parse(&text)?;
    let env = SimEnvironment::new(make_world(&cfg.world_spec().unwrap())?);
    let d = StaticDescriptors::for_source(cfg.descriptors);
    let mut e = Engine::new(cfg, &env, &d)?;
    println!("threshold {:?}", e.discovery_threshold());
    print!("{}", metrics_csv(&e.run(iterations)?));
    Ok(())
}
