//! Overfits the toy model on the bundled corpus, then samples from it.
//!
//! ```text
//! cargo run --release --example overfit_toy -- data/toy.cfg 0.99
//! ```

use std::path::Path;
use std::time::Instant;

use molcvt::cli::{continue_training, fresh_checkpoint, ingest, training_rows, RunConfig, Split};
use molcvt::generation::{generate, ConditionSource, GenerationConfig};
use molcvt::training::{epoch_log_line, evaluate};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg_path = args.first().map_or("data/toy.cfg", String::as_str);
    let target: f64 = args.get(1).map_or(0.99, |s| s.parse().expect("accuracy target"));
    let cfg = RunConfig::load(Path::new(cfg_path)).expect("config");
    let data = ingest(cfg.train_path.as_deref().expect("train_path"), Split::Train).expect("dataset");
    let rows = training_rows(&data.rows).expect("tokenizable rows");
    let mut ck = fresh_checkpoint(cfg.model, &cfg.train, &data.rows, &cfg.source).expect("checkpoint");
    let started = Instant::now();
    continue_training(&mut ck, &rows, &cfg.train, cfg.train.epochs, |ck, stats| {
        let acc = evaluate(&rows, &ck.model, cfg.train.batch_size)?.accuracy;
        println!(
            "{} eval_acc={acc:.4} t={:.0}s",
            epoch_log_line(stats),
            started.elapsed().as_secs_f64()
        );
        Ok(acc < target)
    })
    .expect("training");
    let gen_cfg = GenerationConfig {
        count: 200,
        seed: 7,
        ..GenerationConfig::default()
    };
    let report = generate(
        &ck.model,
        &ConditionSource::Histogram(&ck.histogram),
        &ck.lengths,
        &gen_cfg,
    )
    .expect("generation");
    println!(
        "epochs {} validity {:.3} total {:.0}s",
        ck.epoch,
        report.valid_fraction(),
        started.elapsed().as_secs_f64()
    );
    for m in report.molecules.iter().take(15) {
        println!("  {} {}", if m.valid { "ok " } else { "BAD" }, m.smiles);
    }
    ck.save(&cfg.checkpoint_path).expect("save");
}
