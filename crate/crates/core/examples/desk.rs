//! Run the desk-scale comparison for a list of seeds.
//!
//! cargo run --release --example desk -- 1,2,3

use std::time::Instant;

use robustpose_core::desk::{run_desk_seed, DeskConfig};

fn main() -> robustpose_core::Result<()> {
    let seeds: Vec<u64> = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "1".into())
        .split(',')
        .map(|s| s.trim().parse().expect("seed list like 1,2,3"))
        .collect();
    let cfg = DeskConfig::default();
    for seed in seeds {
        let t = Instant::now();
        let r = run_desk_seed(&cfg, seed)?;
        println!(
            "seed {seed}: std mpc {:.2} clean {:.1} | adv mpc {:.2} clean {:.1} | nokd mpc {:.2} clean {:.1} | {:.0}s",
            r.standard_mpc(),
            r.standard.clean_score,
            r.advmix_mpc(),
            r.advmix.clean_score,
            robustpose_core::eval::mpc(&r.advmix_no_kd),
            r.advmix_no_kd.clean_score,
            t.elapsed().as_secs_f64()
        );
        let rows: Vec<String> = r
            .standard
            .row_means()
            .iter()
            .zip(r.advmix.row_means())
            .map(|((k, a), (_, b))| format!("{}:{a:.0}/{b:.0}", k.name()))
            .collect();
        println!("  {}", rows.join(" "));
    }
    Ok(())
}
