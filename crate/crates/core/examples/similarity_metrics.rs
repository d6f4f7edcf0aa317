//! Fingerprint similarity and the set-level metric suite on the bundled
//! corpus: the test split is scored as if it were generated output.
//!
//! ```text
//! cargo run --release --example similarity_metrics
//! ```

use molcvt::chem::{fingerprint, parse, tanimoto, DEFAULT_NBITS, DEFAULT_RADIUS};
use molcvt::cli::read_smiles_column;
use molcvt::metrics::{evaluate, Fragmenter, MoleculeSet, Provenance, References, RingLinkerCut};

fn main() {
    let pair = ["c1ccccc1CCO", "c1ccccc1CCN"];
    let fps: Vec<_> = pair
        .iter()
        .map(|s| fingerprint(&parse(s).unwrap(), DEFAULT_RADIUS, DEFAULT_NBITS))
        .collect();
    println!(
        "tanimoto({}, {}) = {:.3}",
        pair[0],
        pair[1],
        tanimoto(&fps[0], &fps[1]).unwrap()
    );
    println!(
        "fragments of {}: {:?}",
        pair[0],
        RingLinkerCut.fragments(&parse(pair[0]).unwrap())
    );

    let load = |name: &str| read_smiles_column(std::path::Path::new("data").join(name).as_path()).expect("corpus file");
    let test = load("test.csv");
    let train = MoleculeSet::from_smiles(&load("train.csv"), Provenance::Train);
    let sf = MoleculeSet::from_smiles(&load("test_scaffolds.csv"), Provenance::TestScaffold);
    let report = evaluate(
        &test,
        &References {
            train: Some(&train),
            test: None,
            test_scaffolds: Some(&sf),
        },
    );
    print!("{}", report.to_table());
}
