//! Turns a one-SMILES-per-line file into a `smiles,prop1,prop2,prop3`
//! dataset using the graph-count proxy properties.
//!
//! ```text
//! cargo run --example annotate_corpus -- data/train.smi data/train.csv
//! ```

use std::collections::BTreeSet;
use std::env;

use molcvt::chem::{canonical_key, parse};
use molcvt::metrics::proxy_properties;

fn main() {
    let args: Vec<String> = env::args().skip(1).collect();
    let [input, output] = args.as_slice() else {
        eprintln!("usage: annotate_corpus <input.smi> <output.csv>");
        std::process::exit(2);
    };
    let text = std::fs::read_to_string(input).expect("readable input");
    let mut seen = BTreeSet::new();
    let mut w = csv::Writer::from_path(output).expect("writable output");
    w.write_record(["smiles", "prop1", "prop2", "prop3"]).unwrap();
    let (mut kept, mut dropped) = (0, 0);
    for smiles in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let fresh = parse(smiles).map(|g| seen.insert(canonical_key(&g)));
        match (fresh, proxy_properties(smiles)) {
            (Ok(true), Some(p)) => {
                let [a, b, c] = p.0;
                w.write_record([smiles, &format!("{a:.6}"), &format!("{b:.1}"), &format!("{c:.6}")])
                    .unwrap();
                kept += 1;
            }
            (Ok(false), _) => {
                eprintln!("duplicate: {smiles}");
                dropped += 1;
            }
            _ => {
                eprintln!("invalid: {smiles}");
                dropped += 1;
            }
        }
    }
    w.flush().unwrap();
    println!("{kept} rows written, {dropped} dropped");
}
