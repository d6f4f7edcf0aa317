//! Tokenizes, validates and canonicalizes SMILES given on the command line.
//!
//! ```text
//! cargo run --example smiles_check -- CCO "c1ccccc1C(=O)O" C1CC
//! ```

use molcvt::chem::{canonical_key, detokenize, parse, scaffold, tokenize, validate, Verdict};

fn main() {
    let mut inputs: Vec<String> = std::env::args().skip(1).collect();
    if inputs.is_empty() {
        inputs = ["OC(=O)c1ccccc1", "c1ccccc1C(=O)O", "CC(C)(C)C(", "C1CC"]
            .map(String::from)
            .to_vec();
    }
    for smiles in &inputs {
        println!("{smiles}");
        match tokenize(smiles) {
            Ok(seq) => {
                let tokens: Vec<&str> = seq.tokens().iter().map(|t| t.as_str()).collect();
                println!("  tokens    {} {:?}", seq.len(), tokens);
                assert_eq!(&detokenize(&seq), smiles);
            }
            Err(e) => println!("  tokens    rejected: {e}"),
        }
        match validate(smiles) {
            Verdict::Valid => {
                let g = parse(smiles).expect("valid input parses");
                println!(
                    "  valid     {} heavy atoms, {} rings",
                    g.heavy_atom_count(),
                    g.ring_count()
                );
                println!("  canonical {}", canonical_key(&g));
                println!("  scaffold  {}", canonical_key(&scaffold(&g)));
            }
            Verdict::Invalid(e) => println!("  invalid   {e}"),
        }
    }
}
