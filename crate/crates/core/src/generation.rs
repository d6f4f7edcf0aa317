//! Sampling conditions, lengths and latents, and decoding molecules with
//! beam search.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::chem::{detokenize, validate, Token, TokenSeq, Vocabulary, MAX_TOKENS};
use crate::cvae::{ConditionSet, NUM_CONDITIONS};
use crate::model::{Model, ModelError};
use crate::tensor::{Tape, Tensor};
use crate::transformer::Graph;

/// Bins per property axis.
pub const HISTOGRAM_BINS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("no hypothesis: decoder produced no finite log-probabilities")]
    NoHypothesis,
    #[error("invalid generation setting: {0}")]
    InvalidSetting(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Sparse joint histogram of the three conditioning properties.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyHistogram {
    pub min: [f64; NUM_CONDITIONS],
    pub max: [f64; NUM_CONDITIONS],
    pub bins: usize,
    pub cells: BTreeMap<[u32; NUM_CONDITIONS], u64>,
}

impl PropertyHistogram {
    /// Bins `rows` into `HISTOGRAM_BINS` bins per axis spanning the observed
    /// range.
    pub fn build(rows: &[ConditionSet]) -> Result<Self, GenError> {
        Self::build_with_bins(rows, HISTOGRAM_BINS)
    }

    pub fn build_with_bins(rows: &[ConditionSet], bins: usize) -> Result<Self, GenError> {
        if rows.is_empty() {
            return Err(GenError::EmptyDataset);
        }
        if bins == 0 {
            return Err(GenError::InvalidSetting("histogram needs at least one bin".into()));
        }
        let mut min = [f64::INFINITY; NUM_CONDITIONS];
        let mut max = [f64::NEG_INFINITY; NUM_CONDITIONS];
        for r in rows {
            for k in 0..NUM_CONDITIONS {
                min[k] = min[k].min(r.0[k]);
                max[k] = max[k].max(r.0[k]);
            }
        }
        let mut hist = PropertyHistogram {
            min,
            max,
            bins,
            cells: BTreeMap::new(),
        };
        for r in rows {
            *hist.cells.entry(hist.cell_of(r)).or_insert(0) += 1;
        }
        Ok(hist)
    }

    pub fn total(&self) -> u64 {
        self.cells.values().sum()
    }

    pub fn width(&self, axis: usize) -> f64 {
        (self.max[axis] - self.min[axis]) / self.bins as f64
    }

    /// Cell index of a point; values outside the range clamp to the edge
    /// bins.
    pub fn cell_of(&self, c: &ConditionSet) -> [u32; NUM_CONDITIONS] {
        std::array::from_fn(|k| {
            let w = self.width(k);
            if w > 0.0 {
                ((c.0[k] - self.min[k]) / w).floor().clamp(0.0, (self.bins - 1) as f64) as u32
            } else {
                0
            }
        })
    }

    /// Closed bounds `[lo, hi]` of a cell along each axis.
    pub fn cell_bounds(&self, cell: &[u32; NUM_CONDITIONS]) -> [(f64, f64); NUM_CONDITIONS] {
        std::array::from_fn(|k| {
            let w = self.width(k);
            let lo = self.min[k] + cell[k] as f64 * w;
            (lo, lo + w)
        })
    }

    pub fn sampler(&self) -> Result<CellSampler<'_>, GenError> {
        let mut cumulative = Vec::with_capacity(self.cells.len());
        let mut acc = 0u64;
        for (cell, &count) in &self.cells {
            acc += count;
            cumulative.push((acc, *cell));
        }
        if acc == 0 {
            return Err(GenError::EmptyDataset);
        }
        Ok(CellSampler { hist: self, cumulative })
    }
}

/// Draws cells in proportion to their counts, then a uniform point inside
/// the chosen cell.
#[derive(Debug, Clone)]
pub struct CellSampler<'h> {
    hist: &'h PropertyHistogram,
    cumulative: Vec<(u64, [u32; NUM_CONDITIONS])>,
}

impl CellSampler<'_> {
    pub fn sample_with_cell<R: Rng + ?Sized>(&self, rng: &mut R) -> ([u32; NUM_CONDITIONS], ConditionSet) {
        let total = self.cumulative.last().map_or(1, |c| c.0);
        let u = rng.random_range(0..total);
        let idx = self.cumulative.partition_point(|&(acc, _)| acc <= u);
        let cell = self.cumulative[idx].1;
        let bounds = self.hist.cell_bounds(&cell);
        let values = std::array::from_fn(|k| {
            let (lo, hi) = bounds[k];
            let centre = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            if half > 0.0 {
                (centre + rng.random_range(-half..half)).clamp(lo, hi)
            } else {
                centre
            }
        });
        (cell, ConditionSet(values))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ConditionSet {
        self.sample_with_cell(rng).1
    }
}

/// Mean and population standard deviation of training token counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthStats {
    pub mean: f64,
    pub std: f64,
}

impl LengthStats {
    pub fn fit(lengths: &[usize]) -> Result<Self, GenError> {
        if lengths.is_empty() {
            return Err(GenError::EmptyDataset);
        }
        let n = lengths.len() as f64;
        let mean = lengths.iter().map(|&l| l as f64).sum::<f64>() / n;
        let var = lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
        Ok(LengthStats { mean, std: var.sqrt() })
    }

    /// `round(N(mean, std))` clamped to `[1, MAX_TOKENS]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let x = match Normal::new(self.mean, self.std) {
            Ok(n) if self.std > 0.0 => n.sample(rng),
            _ => self.mean,
        };
        x.round().clamp(1.0, MAX_TOKENS as f64) as usize
    }
}

/// Standard-normal latent `[len, dim]`.
pub fn sample_latent<R: Rng + ?Sized>(len: usize, dim: usize, rng: &mut R) -> Tensor {
    let data = (0..len * dim).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(&[len, dim], data).expect("shape matches data")
}

/// A decoded sequence. `tokens` excludes `<sos>` and includes `<eos>` when
/// the hypothesis finished.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Log-probability per generated token.
    pub fn score(&self) -> f64 {
        self.log_prob / self.tokens.len().max(1) as f64
    }
}

fn clean(row: &[f64]) -> Result<Vec<f64>, GenError> {
    if !row.iter().any(|x| x.is_finite()) {
        return Err(GenError::NoHypothesis);
    }
    Ok(row
        .iter()
        .map(|&x| if x.is_finite() { x } else { f64::NEG_INFINITY })
        .collect())
}

fn better(a: &Hypothesis, b: &Hypothesis) -> bool {
    a.score() > b.score()
}

/// Beam search over a decode step that maps prefixes (each starting with
/// `sos`) to log-probabilities over the vocabulary.
///
/// At most `max_len` tokens are generated, `<eos>` included. Each step keeps
/// the top `width` expansions by cumulative log-probability; those ending in
/// `<eos>` are set aside as finished, so the live beam shrinks until it is
/// empty or `max_len` is reached. The result is the finished (or
/// length-capped) hypothesis with the highest per-token log-probability.
pub fn beam_search<F>(width: usize, max_len: usize, sos: usize, eos: usize, mut step: F) -> Result<Hypothesis, GenError>
where
    F: FnMut(&[Vec<usize>]) -> Result<Vec<Vec<f64>>, GenError>,
{
    if width == 0 || max_len == 0 {
        return Err(GenError::InvalidSetting(
            "beam width and max length must be positive".into(),
        ));
    }
    let mut live: Vec<(Vec<usize>, f64)> = vec![(vec![sos], 0.0)];
    let mut best: Option<Hypothesis> = None;
    let offer = |h: Hypothesis, best: &mut Option<Hypothesis>| {
        if best.as_ref().is_none_or(|b| better(&h, b)) {
            *best = Some(h);
        }
    };
    for depth in 1..=max_len {
        if live.is_empty() {
            break;
        }
        let prefixes: Vec<Vec<usize>> = live.iter().map(|(p, _)| p.clone()).collect();
        let rows = step(&prefixes)?;
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            for (tok, &lp) in clean(row)?.iter().enumerate() {
                if lp.is_finite() {
                    candidates.push((live[i].1 + lp, i, tok));
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then((a.1, a.2).cmp(&(b.1, b.2)))
        });
        let mut next = Vec::with_capacity(width);
        for &(lp, i, tok) in candidates.iter().take(width) {
            let mut tokens = live[i].0[1..].to_vec();
            tokens.push(tok);
            if tok == eos {
                offer(
                    Hypothesis {
                        tokens,
                        log_prob: lp,
                        finished: true,
                    },
                    &mut best,
                );
            } else if depth == max_len {
                offer(
                    Hypothesis {
                        tokens,
                        log_prob: lp,
                        finished: false,
                    },
                    &mut best,
                );
            } else {
                let mut prefix = live[i].0.clone();
                prefix.push(tok);
                next.push((prefix, lp));
            }
        }
        live = next;
    }
    best.ok_or(GenError::NoHypothesis)
}

/// Arg-max decoding with the same termination rules as [`beam_search`].
pub fn greedy_decode<F>(max_len: usize, sos: usize, eos: usize, mut step: F) -> Result<Hypothesis, GenError>
where
    F: FnMut(&[Vec<usize>]) -> Result<Vec<Vec<f64>>, GenError>,
{
    let mut prefix = vec![sos];
    let mut log_prob = 0.0;
    for _ in 0..max_len {
        let row = clean(&step(std::slice::from_ref(&prefix))?[0])?;
        let (tok, lp) =
            row.iter().copied().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, x)| if x > acc.1 { (i, x) } else { acc },
            );
        log_prob += lp;
        prefix.push(tok);
        if tok == eos {
            return Ok(Hypothesis {
                tokens: prefix[1..].to_vec(),
                log_prob,
                finished: true,
            });
        }
    }
    Ok(Hypothesis {
        tokens: prefix[1..].to_vec(),
        log_prob,
        finished: false,
    })
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// Conditional decode step of a trained model for one molecule: returns
/// next-token log-probabilities for every prefix. `<sos>`, `<pad>` and
/// `<unknown>` are never proposed.
pub struct ModelDecoder<'m> {
    model: &'m Model,
    z: Tensor,
    conditions: ConditionSet,
    banned: Vec<usize>,
}

impl<'m> ModelDecoder<'m> {
    /// `z` is `[latent_len, latent_dim]`.
    pub fn new(model: &'m Model, z: Tensor, conditions: ConditionSet) -> Result<Self, GenError> {
        let shape = z.shape().to_vec();
        if shape.len() != 2 {
            return Err(GenError::InvalidSetting(format!(
                "latent must be rank 2, got {shape:?}"
            )));
        }
        let z = z.reshape(&[1, shape[0], shape[1]]).map_err(ModelError::from)?;
        let vocab = model.decoder_vocab();
        let banned = [Token::Sos, Token::Pad, Token::Unknown]
            .iter()
            .filter_map(|&t| vocab.index_of(t))
            .collect();
        Ok(ModelDecoder {
            model,
            z,
            conditions,
            banned,
        })
    }

    pub fn step(&self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>, GenError> {
        let k = prefixes.len();
        let len = prefixes.first().map_or(0, Vec::len);
        if k == 0 || prefixes.iter().any(|p| p.len() != len) {
            return Err(GenError::InvalidSetting("prefixes must share one length".into()));
        }
        let tape = Tape::new();
        let g = Graph::eval(&tape, &self.model.store);
        let z = tape.constant(self.z.clone());
        let memory = self.model.memory(&g, z, &[self.conditions])?;
        let memory = if k == 1 {
            memory
        } else {
            tape.concat(&vec![memory; k], 0).map_err(ModelError::from)?
        };
        let ids: Vec<usize> = prefixes.iter().flatten().copied().collect();
        let logits = self.model.decode(&g, memory, None, &ids, len)?.value();
        let v = logits.shape()[2];
        Ok((0..k)
            .map(|b| {
                let start = (b * len + len - 1) * v;
                let mut row = log_softmax(&logits.data()[start..start + v]);
                for &t in &self.banned {
                    row[t] = f64::NEG_INFINITY;
                }
                row
            })
            .collect())
    }
}

/// Where generation takes its conditions from.
#[derive(Debug, Clone)]
pub enum ConditionSource<'a> {
    /// Joint histogram of the training properties.
    Histogram(&'a PropertyHistogram),
    /// Explicit targets, reused cyclically.
    Fixed(&'a [ConditionSet]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationConfig {
    pub count: usize,
    pub beam_width: usize,
    pub seed: u64,
    /// Longest SMILES emitted, in tokens (the `<eos>` is extra).
    pub max_tokens: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            count: 100,
            beam_width: 4,
            seed: 0,
            max_tokens: MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedMolecule {
    pub smiles: String,
    pub conditions: ConditionSet,
    pub latent_len: usize,
    pub token_count: usize,
    pub valid: bool,
    pub log_prob: f64,
}

/// Generated molecules in request order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenerationReport {
    pub molecules: Vec<GeneratedMolecule>,
}

impl GenerationReport {
    pub fn smiles(&self) -> Vec<String> {
        self.molecules.iter().map(|m| m.smiles.clone()).collect()
    }

    pub fn valid_fraction(&self) -> f64 {
        if self.molecules.is_empty() {
            return 0.0;
        }
        self.molecules.iter().filter(|m| m.valid).count() as f64 / self.molecules.len() as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "smiles",
            "cond1",
            "cond2",
            "cond3",
            "latent_len",
            "token_count",
            "valid",
        ])?;
        for m in &self.molecules {
            w.write_record([
                m.smiles.clone(),
                m.conditions.0[0].to_string(),
                m.conditions.0[1].to_string(),
                m.conditions.0[2].to_string(),
                m.latent_len.to_string(),
                m.token_count.to_string(),
                m.valid.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Random stream for molecule `index` of a run seeded with `seed`.
pub fn molecule_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Decodes one molecule from explicit conditions and latent.
pub fn decode_molecule(
    model: &Model,
    conditions: ConditionSet,
    z: Tensor,
    beam_width: usize,
    max_tokens: usize,
) -> Result<GeneratedMolecule, GenError> {
    let latent_len = z.shape()[0];
    let vocab = Vocabulary::decoder();
    let sos = vocab.encode(Token::Sos);
    let eos = vocab.encode(Token::Eos);
    let decoder = ModelDecoder::new(model, z, conditions)?;
    // After `max_tokens` body tokens only `<eos>` may follow.
    let hyp = beam_search(beam_width, max_tokens + 1, sos, eos, |p| {
        let mut rows = decoder.step(p)?;
        if p[0].len() > max_tokens {
            for row in &mut rows {
                for (t, x) in row.iter_mut().enumerate() {
                    if t != eos {
                        *x = f64::NEG_INFINITY;
                    }
                }
            }
        }
        Ok(rows)
    })?;
    let body: Vec<usize> = hyp.tokens.iter().copied().filter(|&t| t != eos).collect();
    let smiles = detokenize(&TokenSeq::from_ids(&vocab, &body));
    let valid = validate(&smiles).is_valid();
    Ok(GeneratedMolecule {
        smiles,
        conditions,
        latent_len,
        token_count: body.len(),
        valid,
        log_prob: hyp.log_prob,
    })
}

/// Samples conditions, latent length and latent for each molecule from its
/// own random stream and decodes the molecules in parallel. Output is
/// independent of the thread count.
pub fn generate(
    model: &Model,
    source: &ConditionSource<'_>,
    lengths: &LengthStats,
    cfg: &GenerationConfig,
) -> Result<GenerationReport, GenError> {
    if cfg.beam_width == 0 {
        return Err(GenError::InvalidSetting("beam width must be positive".into()));
    }
    let sampler = match source {
        ConditionSource::Histogram(h) => Some(h.sampler()?),
        ConditionSource::Fixed([]) => {
            return Err(GenError::InvalidSetting("no target conditions given".into()));
        }
        ConditionSource::Fixed(_) => None,
    };
    let latent_dim = model.config.latent_dim;
    let molecules = (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = molecule_rng(cfg.seed, i);
            let conditions = match (source, &sampler) {
                (_, Some(s)) => s.sample(&mut rng),
                (ConditionSource::Fixed(list), None) => list[i % list.len()],
                (ConditionSource::Histogram(_), None) => unreachable!("sampler built for histograms"),
            };
            let latent_len = lengths.sample(&mut rng);
            let z = sample_latent(latent_len, latent_dim, &mut rng);
            decode_molecule(model, conditions, z, cfg.beam_width, cfg.max_tokens)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GenerationReport { molecules })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn table_decoder(vocab: usize, seed: u64) -> impl FnMut(&[Vec<usize>]) -> Result<Vec<Vec<f64>>, GenError> {
        move |prefixes: &[Vec<usize>]| {
            Ok(prefixes
                .iter()
                .map(|p| {
                    let mut h = seed;
                    for &t in p {
                        h = h.wrapping_mul(0x100000001b3).wrapping_add(t as u64 + 1);
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(h);
                    let logits: Vec<f64> = (0..vocab).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
                    log_softmax(&logits)
                })
                .collect())
        }
    }

    #[test]
    fn histogram_bins_and_bounds() {
        let rows: Vec<ConditionSet> = (0..=10)
            .map(|i| ConditionSet([i as f64, 0.0, 2.0 * i as f64]))
            .collect();
        let h = PropertyHistogram::build_with_bins(&rows, 5).unwrap();
        assert_eq!(h.total(), 11);
        assert_eq!(h.cell_of(&rows[10]), [4, 0, 4]);
        assert_eq!(h.cell_of(&rows[0]), [0, 0, 0]);
        let b = h.cell_bounds(&[1, 0, 1]);
        assert_eq!(b[0], (2.0, 4.0));
        assert_eq!(b[1], (0.0, 0.0));
        assert!(PropertyHistogram::build(&[]).is_err());
    }

    #[test]
    fn histogram_samples_stay_in_cells() {
        let rows: Vec<ConditionSet> = (0..50)
            .map(|i| ConditionSet([i as f64 * 0.37, (i % 7) as f64, -(i as f64)]))
            .collect();
        let h = PropertyHistogram::build(&rows).unwrap();
        let s = h.sampler().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let (cell, c) = s.sample_with_cell(&mut rng);
            assert!(h.cells.contains_key(&cell));
            for (k, (lo, hi)) in h.cell_bounds(&cell).iter().enumerate() {
                assert!(*lo <= c.0[k] && c.0[k] <= *hi);
            }
        }
    }

    #[test]
    fn length_sampling_is_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let wide = LengthStats { mean: 40.0, std: 100.0 };
        for _ in 0..1000 {
            let l = wide.sample(&mut rng);
            assert!((1..=MAX_TOKENS).contains(&l));
        }
        let fixed = LengthStats::fit(&[7, 7, 7]).unwrap();
        assert_eq!(fixed.sample(&mut rng), 7);
    }

    #[test]
    fn latent_has_requested_shape() {
        let z = sample_latent(5, 3, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(z.shape(), &[5, 3]);
    }

    #[test]
    fn beam_finds_planted_sequence() {
        // Token 0 is <sos>, 1 is <eos>; the best path is 2, 3, 4, <eos>.
        let planted = [2usize, 3, 4, 1];
        let step = |prefixes: &[Vec<usize>]| -> Result<Vec<Vec<f64>>, GenError> {
            Ok(prefixes
                .iter()
                .map(|p| {
                    let depth = p.len() - 1;
                    let on_path = depth < planted.len() && p[1..] == planted[..depth];
                    let mut row = [0.05f64; 6];
                    row[0] = 1e-9;
                    if on_path {
                        row[planted[depth]] = 0.75;
                    } else {
                        row[1] = 0.75;
                    }
                    let s: f64 = row.iter().sum();
                    row.iter().map(|x| (x / s).ln()).collect()
                })
                .collect())
        };
        let h = beam_search(4, 6, 0, 1, step).unwrap();
        assert_eq!(h.tokens, planted);
        assert!(h.finished);
    }

    #[test]
    fn beam_respects_max_length() {
        for seed in 0..20 {
            let h = beam_search(3, 5, 0, 1, table_decoder(6, seed)).unwrap();
            assert!(h.tokens.len() <= 5);
            assert_eq!(h.finished, h.tokens.last() == Some(&1));
            if !h.finished {
                assert_eq!(h.tokens.len(), 5);
            }
        }
    }

    #[test]
    fn width_one_is_greedy() {
        for seed in 0..50 {
            let beam = beam_search(1, 12, 0, 1, table_decoder(6, seed)).unwrap();
            let greedy = greedy_decode(12, 0, 1, table_decoder(6, seed)).unwrap();
            assert_eq!(beam, greedy);
        }
    }

    #[test]
    fn non_finite_rows_yield_no_hypothesis() {
        let step = |p: &[Vec<usize>]| Ok(vec![vec![f64::NAN; 4]; p.len()]);
        assert_eq!(beam_search(2, 4, 0, 1, step), Err(GenError::NoHypothesis));
    }

    #[test]
    fn generation_is_deterministic_and_thread_independent() {
        let mut cfg = ModelConfig::toy();
        cfg.d_model = 16;
        cfg.d_ff = 32;
        cfg.latent_dim = 4;
        let model = Model::new(cfg, 1).unwrap();
        let rows = [ConditionSet([0.1, 2.0, 0.3]), ConditionSet([0.2, 1.0, 0.1])];
        let hist = PropertyHistogram::build(&rows).unwrap();
        let lengths = LengthStats { mean: 6.0, std: 2.0 };
        let gcfg = GenerationConfig {
            count: 6,
            beam_width: 2,
            seed: 5,
            max_tokens: 10,
        };
        let a = generate(&model, &ConditionSource::Histogram(&hist), &lengths, &gcfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool
            .install(|| generate(&model, &ConditionSource::Histogram(&hist), &lengths, &gcfg))
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.molecules.len(), 6);
        for m in &a.molecules {
            assert!(m.token_count <= 10);
            assert!(!m.smiles.contains('<'));
        }
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("smiles,cond1,cond2,cond3,latent_len,token_count,valid\n"));
        assert_eq!(text.lines().count(), 7);
    }
}
