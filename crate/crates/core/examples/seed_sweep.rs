//! Runs every mode of a scenario over several seeds and request counts and
//! prints one line per (count, seed).
//!
//! ```text
//! cargo run --release --example seed_sweep -- fixtures/scenarios/desk.toml 50,200,800 10
//! ```

use std::path::PathBuf;

use firm::sim::{self, Scenario, MODES};
use rayon::prelude::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().ok_or("usage: seed_sweep SCENARIO [COUNTS] [SEEDS]")?);
    let counts: Vec<usize> = args
        .next()
        .unwrap_or_else(|| "50,200,800".into())
        .split(',')
        .map(str::parse)
        .collect::<Result<_, _>>()?;
    let seeds: u64 = args.next().map_or(Ok(10), |s| s.parse())?;
    let template = Scenario::load(&path)?;
    for &count in &counts {
        let lines: Vec<String> = (1..=seeds)
            .into_par_iter()
            .map(|seed| {
                let mut line = format!("{count:>5} {seed:>3}");
                for mode in MODES {
                    let mut s = template.clone();
                    s.requests = count;
                    s.seed = seed;
                    s.mode = mode.to_string();
                    let out = sim::run(&s).expect("run");
                    line += &format!(
                        " | {mode:>8} {:>8.1} {:>6.1} {:>6}",
                        out.summary.mean_completion.unwrap_or(f64::NAN),
                        out.summary.deviation.unwrap_or(f64::NAN),
                        out.summary.inter_rack_hops
                    );
                }
                line
            })
            .collect();
        for l in lines {
            println!("{l}");
        }
    }
    Ok(())
}
