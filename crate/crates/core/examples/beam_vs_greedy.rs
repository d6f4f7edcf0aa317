//! Beam search against greedy decoding on a fixed random next-token
//! table, plus the exhaustive optimum for short horizons.
//!
//! ```text
//! cargo run --example beam_vs_greedy -- 12
//! ```

use molcvt::generation::{beam_search, greedy_decode, GenError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: usize = 6;
const EOS: usize = 5;
const SOS: usize = 6;

fn log_probs(seed: u64, prefix: &[usize]) -> Vec<f64> {
    let h = prefix
        .iter()
        .fold(seed, |h, &t| h.wrapping_mul(1_000_003).wrapping_add(t as u64 + 1));
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    let logits: Vec<f64> = (0..VOCAB).map(|_| rng.random_range(-3.0..3.0)).collect();
    let lse = logits.iter().map(|x| x.exp()).sum::<f64>().ln();
    logits.iter().map(|x| x - lse).collect()
}

fn table(seed: u64) -> impl FnMut(&[Vec<usize>]) -> Result<Vec<Vec<f64>>, GenError> {
    move |prefixes: &[Vec<usize>]| Ok(prefixes.iter().map(|p| log_probs(seed, p)).collect())
}

/// Highest per-token log-probability over every sequence that ends in
/// `EOS` within `max_len` tokens or reaches `max_len` without it.
fn best(seed: u64, prefix: &mut Vec<usize>, max_len: usize, sum: f64) -> f64 {
    let lp = log_probs(seed, prefix);
    let n = prefix.len() as f64;
    let mut top = (sum + lp[EOS]) / n;
    for t in (0..VOCAB).filter(|&t| t != EOS) {
        let s = sum + lp[t];
        top = top.max(if prefix.len() == max_len {
            s / n
        } else {
            prefix.push(t);
            let deeper = best(seed, prefix, max_len, s);
            prefix.pop();
            deeper
        });
    }
    top
}

fn main() {
    let seeds: u64 = std::env::args().nth(1).map_or(8, |s| s.parse().expect("seed count"));
    println!("seed  greedy   beam2    beam4    beam8    optimum(max_len 4)");
    for seed in 0..seeds {
        let g = greedy_decode(4, SOS, EOS, table(seed)).unwrap();
        let beams: Vec<f64> = [2, 4, 8]
            .iter()
            .map(|&w| beam_search(w, 4, SOS, EOS, table(seed)).unwrap().score())
            .collect();
        let opt = best(seed, &mut vec![SOS], 4, 0.0);
        println!(
            "{seed:>4}  {:>7.3}  {:>7.3}  {:>7.3}  {:>7.3}  {opt:>7.3}",
            g.score(),
            beams[0],
            beams[1],
            beams[2]
        );
    }
}
