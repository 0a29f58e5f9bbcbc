//! Trains the three offline methods on a synthetic corpus and compares them
//! with the baselines on held-out shifts.
//!
//! `cargo run --release -p sortflow --example compare_methods -- [seed]`

use std::time::Instant;

use sortflow::agents::{GreedyBottleneck, NoReallocation, Policy};
use sortflow::corpus::{generate_corpus, CorpusSpec};
use sortflow::eval::evaluate;
use sortflow::learn::{train_bc, train_bcft, train_offline_ac, TrainConfig};

fn main() -> sortflow::Result<()> {
    let t0 = Instant::now();
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let train = generate_corpus(&CorpusSpec::default(), 300, seed)?;
    let eval_spec = CorpusSpec {
        prefix: "eval".into(),
        ..Default::default()
    };
    let eval = generate_corpus(&eval_spec, 100, seed)?;
    let cfg = TrainConfig::default();
    let bc = train_bc(&train, &cfg, seed)?;
    let ft = train_bcft(&train, &cfg, seed)?;
    let ac = train_offline_ac(&train, &cfg, seed)?;
    let greedy = GreedyBottleneck::default();
    let policies: Vec<(String, &dyn Policy)> = vec![
        ("offline_ac".into(), &ac.policy),
        ("bc_ft".into(), &ft.policy),
        ("bc".into(), &bc.policy),
        ("no_reallocation".into(), &NoReallocation),
        ("greedy_bottleneck".into(), &greedy),
    ];
    let report = evaluate(&eval, &policies, 1000, seed)?;
    println!("{}", report.table());
    eprintln!("done in {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
