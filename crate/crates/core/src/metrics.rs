//! Distribution metrics for generated molecule sets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SVD};
use rayon::prelude::*;
use thiserror::Error;

use crate::chem::{
    canonical_key, fingerprint, parse, scaffold, tanimoto, Element, Fingerprint, MolGraph, DEFAULT_NBITS,
    DEFAULT_RADIUS,
};
use crate::cvae::{ConditionSet, NUM_CONDITIONS};
use crate::generation::GenerationReport;

/// Width of the folded fingerprint features used for the Fréchet proxy.
pub const FEATURE_DIMS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("empty set: {0}")]
    EmptySet(&'static str),
    #[error("only {found} valid molecules, {needed} needed")]
    InsufficientValid { needed: usize, found: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("covariance is not positive semidefinite (eigenvalue {0})")]
    NonPsd(f64),
    #[error("no valid rows")]
    NoValidRows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Generated,
    Train,
    Test,
    TestScaffold,
}

#[derive(Debug, Clone)]
pub struct Molecule {
    pub smiles: String,
    pub graph: MolGraph,
    pub key: String,
    pub fingerprint: Fingerprint,
}

impl Molecule {
    pub fn new(smiles: &str, radius: usize, nbits: usize) -> Option<Self> {
        let graph = parse(smiles).ok()?;
        Some(Molecule {
            smiles: smiles.to_string(),
            key: canonical_key(&graph),
            fingerprint: fingerprint(&graph, radius, nbits),
            graph,
        })
    }
}

/// The valid molecules of a list of SMILES, in input order, plus the count
/// of rejected strings.
#[derive(Debug, Clone)]
pub struct MoleculeSet {
    pub provenance: Provenance,
    pub molecules: Vec<Molecule>,
    pub invalid: usize,
}

impl MoleculeSet {
    pub fn from_smiles<S: AsRef<str> + Sync>(smiles: &[S], provenance: Provenance) -> Self {
        Self::with_fingerprint(smiles, provenance, DEFAULT_RADIUS, DEFAULT_NBITS)
    }

    pub fn with_fingerprint<S: AsRef<str> + Sync>(
        smiles: &[S],
        provenance: Provenance,
        radius: usize,
        nbits: usize,
    ) -> Self {
        let parsed: Vec<Option<Molecule>> = smiles
            .par_iter()
            .map(|s| Molecule::new(s.as_ref(), radius, nbits))
            .collect();
        let invalid = parsed.iter().filter(|m| m.is_none()).count();
        MoleculeSet {
            provenance,
            molecules: parsed.into_iter().flatten().collect(),
            invalid,
        }
    }

    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    pub fn keys(&self) -> BTreeSet<&str> {
        self.molecules.iter().map(|m| m.key.as_str()).collect()
    }

    fn require(&self, what: &'static str) -> Result<(), MetricError> {
        if self.is_empty() {
            Err(MetricError::EmptySet(what))
        } else {
            Ok(())
        }
    }
}

fn sim(a: &Fingerprint, b: &Fingerprint) -> f64 {
    tanimoto(a, b).expect("fingerprints share one width within a run")
}

/// Fraction of strings that parse into valid molecules.
pub fn validity_score<S: AsRef<str> + Sync>(smiles: &[S]) -> Result<f64, MetricError> {
    if smiles.is_empty() {
        return Err(MetricError::EmptySet("validity"));
    }
    let valid = smiles.par_iter().filter(|s| parse(s.as_ref()).is_ok()).count();
    Ok(valid as f64 / smiles.len() as f64)
}

/// Distinct canonical keys among the first `k` valid molecules, over `k`.
pub fn unique_at_k(gen: &MoleculeSet, k: usize) -> Result<f64, MetricError> {
    if k == 0 || gen.len() < k {
        return Err(MetricError::InsufficientValid {
            needed: k.max(1),
            found: gen.len(),
        });
    }
    let distinct: BTreeSet<&str> = gen.molecules[..k].iter().map(|m| m.key.as_str()).collect();
    Ok(distinct.len() as f64 / k as f64)
}

/// Fraction of distinct generated keys absent from the training keys.
pub fn novelty(gen: &MoleculeSet, train: &MoleculeSet) -> Result<f64, MetricError> {
    gen.require("generated")?;
    train.require("train")?;
    let seen = train.keys();
    let distinct = gen.keys();
    let novel = distinct.iter().filter(|k| !seen.contains(*k)).count();
    Ok(novel as f64 / distinct.len() as f64)
}

/// `1 - mean Tanimoto` over all ordered pairs, self-pairs included.
pub fn internal_diversity(gen: &MoleculeSet) -> Result<f64, MetricError> {
    gen.require("generated")?;
    let rows: Vec<f64> = gen
        .molecules
        .par_iter()
        .map(|a| gen.molecules.iter().map(|b| sim(&a.fingerprint, &b.fingerprint)).sum())
        .collect();
    let n = gen.len() as f64;
    Ok(1.0 - rows.iter().sum::<f64>() / (n * n))
}

/// Mean over generated molecules of the best Tanimoto to the reference.
pub fn snn(gen: &MoleculeSet, reference: &MoleculeSet) -> Result<f64, MetricError> {
    gen.require("generated")?;
    reference.require("reference")?;
    let best: Vec<f64> = gen
        .molecules
        .par_iter()
        .map(|a| {
            reference
                .molecules
                .iter()
                .map(|b| sim(&a.fingerprint, &b.fingerprint))
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(best.iter().sum::<f64>() / gen.len() as f64)
}

/// Mean and covariance of a feature cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianSummary {
    /// Sample mean and unbiased covariance (zero for a single row).
    pub fn fit(features: &[Vec<f64>]) -> Result<Self, MetricError> {
        let first = features.first().ok_or(MetricError::EmptySet("features"))?;
        let d = first.len();
        if let Some(bad) = features.iter().find(|f| f.len() != d) {
            return Err(MetricError::DimensionMismatch(d, bad.len()));
        }
        let n = features.len();
        let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
        let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
        let mut cov = DMatrix::zeros(d, d);
        if n > 1 {
            let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
            cov = centred.transpose() * &centred / (n - 1) as f64;
        }
        Ok(GaussianSummary { mean, cov })
    }
}

/// Square root of a symmetric positive semidefinite matrix. Works from the
/// SVD (eigenvalue `i` is `s_i` times the sign of `u_i · v_i`) because
/// `SymmetricEigen` in nalgebra 0.35 returns NaN on some rank-one inputs.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricError> {
    let sym = (m + m.transpose()) * 0.5;
    let svd = SVD::new(sym, true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let s = svd.singular_values;
    if let Some(bad) = s.iter().find(|x| !x.is_finite()) {
        return Err(MetricError::NonPsd(*bad));
    }
    let scale = s.max().max(1.0);
    for i in 0..s.len() {
        if s[i] > 1e-9 * scale && u.column(i).dot(&v_t.row(i).transpose()) < 0.0 {
            return Err(MetricError::NonPsd(-s[i]));
        }
    }
    Ok(&u * DMatrix::from_diagonal(&s.map(f64::sqrt)) * u.transpose())
}

/// `‖μ_g − μ_r‖² + Tr(Σ_g + Σ_r − 2 (Σ_g Σ_r)^½)`, with the trace of the
/// square root taken from the symmetric product `Σ_g^½ Σ_r Σ_g^½`.
pub fn frechet_distance(g: &GaussianSummary, r: &GaussianSummary) -> Result<f64, MetricError> {
    let d = g.mean.len();
    for other in [r.mean.len(), g.cov.nrows(), g.cov.ncols(), r.cov.nrows(), r.cov.ncols()] {
        if other != d {
            return Err(MetricError::DimensionMismatch(d, other));
        }
    }
    let root_g = psd_sqrt(&g.cov)?;
    psd_sqrt(&r.cov)?;
    if g == r {
        return Ok(0.0);
    }
    let inner = &root_g * &r.cov * &root_g;
    let cross = psd_sqrt(&inner)?.trace();
    let diff = &g.mean - &r.mean;
    Ok((diff.dot(&diff) + g.cov.trace() + r.cov.trace() - 2.0 * cross).max(0.0))
}

/// Fréchet distance between folded-fingerprint feature clouds; a stand-in
/// for a learned-embedding FCD.
pub fn fcd_proxy(gen: &MoleculeSet, reference: &MoleculeSet) -> Result<f64, MetricError> {
    gen.require("generated")?;
    reference.require("reference")?;
    let features = |s: &MoleculeSet| -> Vec<Vec<f64>> {
        s.molecules
            .iter()
            .map(|m| m.fingerprint.folded_counts(FEATURE_DIMS))
            .collect()
    };
    frechet_distance(
        &GaussianSummary::fit(&features(gen))?,
        &GaussianSummary::fit(&features(reference))?,
    )
}

/// Splits a molecule into keyed fragments.
pub trait Fragmenter: Sync {
    fn fragments(&self, g: &MolGraph) -> Vec<String>;
}

/// Cuts every acyclic single bond joining a ring atom to a non-ring atom
/// and keys each piece canonically. Not a BRICS decomposition.
#[derive(Debug, Clone, Copy, Default)]
pub struct RingLinkerCut;

impl Fragmenter for RingLinkerCut {
    fn fragments(&self, g: &MolGraph) -> Vec<String> {
        let ring_atom = g.ring_atoms();
        let ring_bond = g.ring_bonds();
        let cut: Vec<bool> = g
            .bonds()
            .iter()
            .enumerate()
            .map(|(i, b)| {
                !ring_bond[i] && b.order == crate::chem::BondOrder::Single && ring_atom[b.a] != ring_atom[b.b]
            })
            .collect();
        let pieces = g.without_bonds(&cut);
        pieces
            .components()
            .into_iter()
            .map(|atoms| {
                let mut keep = vec![false; g.atom_count()];
                atoms.iter().for_each(|&a| keep[a] = true);
                canonical_key(&pieces.subgraph(&keep))
            })
            .collect()
    }
}

fn cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let dot = a
        .iter()
        .filter_map(|(k, x)| b.get(k).map(|y| x * y))
        .fold(0.0, |s, v| s + v);
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

fn frequencies<F: Fn(&Molecule) -> Vec<String> + Send + Sync>(s: &MoleculeSet, keys: F) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for list in s.molecules.par_iter().map(keys).collect::<Vec<_>>() {
        for k in list {
            *out.entry(k).or_insert(0.0) += 1.0;
        }
    }
    out
}

/// Cosine similarity of fragment frequency vectors.
pub fn frag_similarity(
    gen: &MoleculeSet,
    reference: &MoleculeSet,
    fragmenter: &dyn Fragmenter,
) -> Result<f64, MetricError> {
    gen.require("generated")?;
    reference.require("reference")?;
    let f = |m: &Molecule| fragmenter.fragments(&m.graph);
    Ok(cosine(&frequencies(gen, f), &frequencies(reference, f)))
}

/// Canonical key of the Bemis-Murcko scaffold; empty for acyclic molecules.
pub fn scaffold_key(g: &MolGraph) -> String {
    canonical_key(&scaffold(g))
}

/// Cosine similarity of scaffold frequency vectors. Acyclic molecules have
/// no scaffold and do not contribute.
pub fn scaf_similarity(gen: &MoleculeSet, reference: &MoleculeSet) -> Result<f64, MetricError> {
    gen.require("generated")?;
    reference.require("reference")?;
    let f = |m: &Molecule| {
        let key = scaffold_key(&m.graph);
        if key.is_empty() {
            vec![]
        } else {
            vec![key]
        }
    };
    Ok(cosine(&frequencies(gen, f), &frequencies(reference, f)))
}

/// Maps a molecule to the three conditioning properties.
pub trait PropertyOracle: Sync {
    fn properties(&self, g: &MolGraph) -> [f64; NUM_CONDITIONS];
}

/// Graph-count proxies for the three conditioning properties:
/// `(C - hetero) / heavy`, `20 (N + O)` and `rings / (1 + heavy)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProxyOracle;

impl PropertyOracle for ProxyOracle {
    fn properties(&self, g: &MolGraph) -> [f64; NUM_CONDITIONS] {
        let heavy = g.heavy_atom_count() as f64;
        let carbon = g.count_element(Element::C) as f64;
        let hetero = heavy - carbon;
        let n_o = (g.count_element(Element::N) + g.count_element(Element::O)) as f64;
        let p1 = if heavy > 0.0 { (carbon - hetero) / heavy } else { 0.0 };
        [p1, 20.0 * n_o, g.ring_count() as f64 / (1.0 + heavy)]
    }
}

/// Proxy properties of a SMILES string, if it parses.
pub fn proxy_properties(smiles: &str) -> Option<ConditionSet> {
    parse(smiles).ok().map(|g| ConditionSet(ProxyOracle.properties(&g)))
}

/// Per-property mean absolute error between requested and realized
/// properties over the valid rows of a report.
pub fn property_agreement(
    report: &GenerationReport,
    oracle: &dyn PropertyOracle,
) -> Result<[f64; NUM_CONDITIONS], MetricError> {
    let errors: Vec<[f64; NUM_CONDITIONS]> = report
        .molecules
        .par_iter()
        .filter_map(|m| {
            let g = parse(&m.smiles).ok()?;
            let realized = oracle.properties(&g);
            Some(std::array::from_fn(|k| (realized[k] - m.conditions.0[k]).abs()))
        })
        .collect();
    if errors.is_empty() {
        return Err(MetricError::NoValidRows);
    }
    let n = errors.len() as f64;
    Ok(std::array::from_fn(|k| errors.iter().map(|e| e[k]).sum::<f64>() / n))
}

/// One line of a metrics report; `value` holds the failure text when the
/// metric could not be computed.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub value: Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    fn push(&mut self, name: impl Into<String>, value: Result<f64, MetricError>) {
        self.rows.push(MetricRow {
            name: name.into(),
            value: value.map_err(|e| e.to_string()),
        });
    }

    pub fn get(&self, name: &str) -> Option<&Result<f64, String>> {
        self.rows.iter().find(|r| r.name == name).map(|r| &r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "value"]).expect("in-memory write");
        for r in &self.rows {
            let v = match &r.value {
                Ok(x) => format!("{x:.6}"),
                Err(e) => format!("error: {e}"),
            };
            w.write_record([r.name.as_str(), v.as_str()]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>10}", "metric", "value");
        let _ = writeln!(out, "{}", "-".repeat(width + 12));
        for r in &self.rows {
            match &r.value {
                Ok(x) => {
                    let _ = writeln!(out, "{:<width$}  {:>10.4}", r.name, x);
                }
                Err(e) => {
                    let _ = writeln!(out, "{:<width$}  {:>10}  ({e})", r.name, "n/a");
                }
            }
        }
        out
    }
}

/// Reference sets for an evaluation run. Missing sets skip their rows.
#[derive(Debug, Clone, Copy, Default)]
pub struct References<'a> {
    pub train: Option<&'a MoleculeSet>,
    pub test: Option<&'a MoleculeSet>,
    pub test_scaffolds: Option<&'a MoleculeSet>,
}

/// The full suite in the usual benchmark row order. Individual failures are
/// recorded in their row and do not stop the run.
pub fn evaluate<S: AsRef<str> + Sync>(generated: &[S], refs: &References<'_>) -> MetricsReport {
    let gen = MoleculeSet::from_smiles(generated, Provenance::Generated);
    let mut report = MetricsReport::default();
    report.push("validity", validity_score(generated));
    report.push("unique@1k", unique_at_k(&gen, 1000));
    report.push("unique@10k", unique_at_k(&gen, 10_000));
    report.push("IntDiv", internal_diversity(&gen));
    if let Some(train) = refs.train {
        report.push("novelty", novelty(&gen, train));
    }
    for (label, set) in [("Test", refs.test), ("TestSF", refs.test_scaffolds)] {
        if let Some(r) = set {
            report.push(format!("SNN/{label}"), snn(&gen, r));
            report.push(format!("FCD/{label} (proxy)"), fcd_proxy(&gen, r));
            report.push(
                format!("Frag/{label} (proxy)"),
                frag_similarity(&gen, r, &RingLinkerCut),
            );
            report.push(format!("Scaf/{label}"), scaf_similarity(&gen, r));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(smiles: &[&str]) -> MoleculeSet {
        MoleculeSet::from_smiles(smiles, Provenance::Generated)
    }

    #[test]
    fn validity_examples() {
        assert_eq!(validity_score(&["CCO", "c1ccccc1"]).unwrap(), 1.0);
        assert_eq!(validity_score(&["CCO", "C1CC"]).unwrap(), 0.5);
        assert!(validity_score::<&str>(&[]).is_err());
    }

    #[test]
    fn uniqueness_uses_canonical_keys() {
        assert_eq!(unique_at_k(&set(&["CCO", "OCC"]), 2).unwrap(), 0.5);
        assert_eq!(unique_at_k(&set(&["CCO", "CCN", "CCC"]), 3).unwrap(), 1.0);
        assert_eq!(unique_at_k(&set(&["CCO"; 4]), 4).unwrap(), 0.25);
        assert_eq!(
            unique_at_k(&set(&["CCO", "C1CC"]), 2),
            Err(MetricError::InsufficientValid { needed: 2, found: 1 })
        );
    }

    #[test]
    fn novelty_examples() {
        let train = set(&["CCN"]);
        assert_eq!(novelty(&set(&["CCO", "CCC"]), &train).unwrap(), 1.0);
        assert_eq!(novelty(&set(&["NCC"]), &train).unwrap(), 0.0);
        assert_eq!(novelty(&set(&["CCO", "CCN"]), &train).unwrap(), 0.5);
    }

    #[test]
    fn diversity_and_snn_edge_cases() {
        assert_eq!(internal_diversity(&set(&["CCO", "OCC"])).unwrap(), 0.0);
        assert_eq!(internal_diversity(&set(&["c1ccccc1"])).unwrap(), 0.0);
        let g = set(&["CCO", "c1ccccc1"]);
        assert_eq!(snn(&g, &set(&["c1ccccc1", "OCC", "CCCl"])).unwrap(), 1.0);
        let a = set(&["CCO"]);
        let b = set(&["CCN"]);
        let t = tanimoto(&a.molecules[0].fingerprint, &b.molecules[0].fingerprint).unwrap();
        assert_eq!(snn(&a, &b).unwrap(), t);
    }

    #[test]
    fn frechet_closed_forms() {
        let one = |m: f64, v: f64| GaussianSummary {
            mean: DVector::from_element(1, m),
            cov: DMatrix::from_element(1, 1, v),
        };
        assert!((frechet_distance(&one(0.0, 2.0), &one(1.0, 2.0)).unwrap() - 1.0).abs() < 1e-12);
        let g = GaussianSummary {
            mean: DVector::from_vec(vec![1.0, 0.0, 2.0]),
            cov: DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 0.25])),
        };
        let r = GaussianSummary {
            mean: DVector::from_vec(vec![0.0, 0.5, 2.0]),
            cov: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 9.0, 0.25])),
        };
        let expected = 1.0 + 0.25 + (2.0f64 - 1.0).powi(2) + (1.0f64 - 3.0).powi(2);
        assert!((frechet_distance(&g, &r).unwrap() - expected).abs() < 1e-9);
        assert!(frechet_distance(&g, &g).unwrap() < 1e-9);
        let bad = GaussianSummary {
            mean: DVector::zeros(2),
            cov: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])),
        };
        assert!(matches!(frechet_distance(&bad, &bad), Err(MetricError::NonPsd(_))));
        assert!(matches!(
            frechet_distance(&g, &one(0.0, 1.0)),
            Err(MetricError::DimensionMismatch(..))
        ));
    }

    #[test]
    fn fragments_cut_ring_linker_bonds() {
        let g = parse("CCc1ccccc1").unwrap();
        let mut frags = RingLinkerCut.fragments(&g);
        frags.sort();
        let mut expected = vec![
            canonical_key(&parse("CC").unwrap()),
            canonical_key(&parse("c1ccccc1").unwrap()),
        ];
        expected.sort();
        assert_eq!(frags, expected);
        assert_eq!(RingLinkerCut.fragments(&parse("CCO").unwrap()).len(), 1);
    }

    #[test]
    fn frag_and_scaffold_cosines() {
        let a = set(&["CCc1ccccc1", "OCC"]);
        assert!((frag_similarity(&a, &a, &RingLinkerCut).unwrap() - 1.0).abs() < 1e-12);
        assert!((scaf_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let benz = set(&["Cc1ccccc1", "c1ccccc1O"]);
        let hex = set(&["CC1CCCCC1", "OC1CCCCC1"]);
        assert_eq!(scaf_similarity(&benz, &hex).unwrap(), 0.0);
        assert_eq!(
            frag_similarity(&set(&["CCO"]), &set(&["CCN"]), &RingLinkerCut).unwrap(),
            0.0
        );
    }

    #[test]
    fn proxy_oracle_counts() {
        let p = ProxyOracle.properties(&parse("c1ccccc1O").unwrap());
        assert!((p[0] - 5.0 / 7.0).abs() < 1e-12);
        assert_eq!(p[1], 20.0);
        assert!((p[2] - 1.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn property_agreement_examples() {
        use crate::generation::GeneratedMolecule;
        let row = |smiles: &str, c: [f64; 3]| GeneratedMolecule {
            smiles: smiles.into(),
            conditions: ConditionSet(c),
            latent_len: 3,
            token_count: 3,
            valid: true,
            log_prob: 0.0,
        };
        let exact = proxy_properties("CCO").unwrap().0;
        let report = GenerationReport {
            molecules: vec![row("CCO", exact), row("C1CC", [0.0; 3])],
        };
        assert_eq!(property_agreement(&report, &ProxyOracle).unwrap(), [0.0; 3]);
        let shifted = GenerationReport {
            molecules: vec![row("CCO", [exact[0] + 1.0, exact[1] - 2.0, exact[2] + 3.0])],
        };
        let mae = property_agreement(&shifted, &ProxyOracle).unwrap();
        for (m, e) in mae.iter().zip([1.0, 2.0, 3.0]) {
            assert!((m - e).abs() < 1e-12);
        }
        let empty = GenerationReport {
            molecules: vec![row("C1CC", [0.0; 3])],
        };
        assert_eq!(property_agreement(&empty, &ProxyOracle), Err(MetricError::NoValidRows));
    }

    #[test]
    fn report_formats() {
        let refs = set(&["CCO", "c1ccccc1", "CCN"]);
        let r = evaluate(
            &["CCO", "c1ccccc1", "CCN"],
            &References {
                train: Some(&refs),
                test: Some(&refs),
                test_scaffolds: None,
            },
        );
        assert_eq!(r.get("validity"), Some(&Ok(1.0)));
        assert_eq!(r.get("novelty"), Some(&Ok(0.0)));
        assert_eq!(r.get("SNN/Test"), Some(&Ok(1.0)));
        assert!(r.get("unique@1k").unwrap().is_err());
        assert!(r.to_table().contains("FCD/Test (proxy)"));
        assert!(r.to_csv().starts_with("metric,value\nvalidity,1.000000\n"));
    }
}
