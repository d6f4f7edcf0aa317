//! Trains a small model for a few epochs and prints its encoder
//! self-attention for one molecule as text heatmaps.
//!
//! ```text
//! cargo run --release --example attention_map -- "CC(=O)Nc1ccccc1"
//! ```

use molcvt::cli::{attention_dump, continue_training, fresh_checkpoint, ingest, training_rows, Split};
use molcvt::model::ModelConfig;
use molcvt::training::TrainConfig;

fn main() {
    let smiles = std::env::args().nth(1).unwrap_or_else(|| "CC(=O)Nc1ccccc1".into());
    let data = ingest("data/train.csv".as_ref(), Split::Train).expect("bundled corpus");
    let rows = training_rows(&data.rows).unwrap();
    let model = ModelConfig {
        d_model: 16,
        heads: 2,
        blocks: 2,
        d_ff: 32,
        latent_dim: 4,
        max_len: 80,
        dropout: 0.0,
    };
    let train = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let mut ck = fresh_checkpoint(model, &train, &data.rows, "").unwrap();
    continue_training(&mut ck, &rows, &train, train.epochs, |_, _| Ok(true)).unwrap();

    let dump = attention_dump(&ck.model, &smiles, None, None, None).expect("tokenizable SMILES");
    print!("{}", dump.heatmap());
    let strongest = dump
        .entries
        .iter()
        .filter(|e| e.query_index != e.key_index)
        .max_by(|a, b| a.weight.total_cmp(&b.weight))
        .unwrap();
    println!(
        "strongest off-diagonal weight: layer {} head {} {} -> {} ({:.3})",
        strongest.layer, strongest.head, strongest.query_token, strongest.key_token, strongest.weight
    );
}
