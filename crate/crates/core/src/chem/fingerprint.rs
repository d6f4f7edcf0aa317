//! Circular (Morgan-style) fingerprints and Tanimoto similarity.

use super::graph::MolGraph;
use super::ChemError;

pub const DEFAULT_RADIUS: usize = 2;
pub const DEFAULT_NBITS: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    words: Vec<u64>,
    nbits: usize,
    radius: usize,
}

impl Fingerprint {
    pub fn empty(nbits: usize, radius: usize) -> Self {
        Fingerprint {
            words: vec![0; nbits.div_ceil(64)],
            nbits,
            radius,
        }
    }

    /// Builds a fingerprint with the given bits set (positions taken mod `nbits`).
    pub fn from_bits(nbits: usize, bits: impl IntoIterator<Item = usize>) -> Self {
        let mut fp = Fingerprint::empty(nbits, 0);
        for b in bits {
            fp.set(b);
        }
        fp
    }

    pub fn set(&mut self, pos: usize) {
        let pos = pos % self.nbits;
        self.words[pos / 64] |= 1u64 << (pos % 64);
    }

    pub fn get(&self, pos: usize) -> bool {
        pos < self.nbits && (self.words[pos / 64] >> (pos % 64)) & 1 == 1
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nbits).filter(|&i| self.get(i))
    }

    /// Counts of set bits folded into `dims` buckets (bit `i` lands in `i % dims`).
    pub fn folded_counts(&self, dims: usize) -> Vec<f64> {
        let mut out = vec![0.0; dims];
        for i in self.ones() {
            out[i % dims] += 1.0;
        }
        out
    }
}

// splitmix64 finalizer
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn combine(h: u64, v: u64) -> u64 {
    mix(h ^ mix(v))
}

/// Hashes every atom's circular environment up to `radius` bonds and sets
/// one bit per environment.
pub fn fingerprint(g: &MolGraph, radius: usize, nbits: usize) -> Fingerprint {
    assert!(nbits.is_power_of_two(), "fingerprint width must be a power of two");
    let mut fp = Fingerprint::empty(nbits, radius);
    let n = g.atom_count();
    if n == 0 {
        return fp;
    }
    let ring_atoms = g.ring_atoms();
    let mut ids: Vec<u64> = (0..n)
        .map(|i| {
            let a = g.atom(i);
            let mut h = mix(a.element.atomic_number() as u64);
            h = combine(h, a.aromatic as u64);
            h = combine(h, g.degree(i) as u64);
            h = combine(h, a.total_h() as u64);
            combine(h, ring_atoms[i] as u64)
        })
        .collect();
    for &id in &ids {
        fp.set((id % nbits as u64) as usize);
    }
    for _ in 0..radius {
        let next: Vec<u64> = (0..n)
            .map(|i| {
                let mut around: Vec<(u8, u64)> = g
                    .neighbors(i)
                    .iter()
                    .map(|&(w, b)| (g.bonds()[b].order.code(), ids[w]))
                    .collect();
                around.sort_unstable();
                around.into_iter().fold(combine(ids[i], 0xa5a5), |h, (order, id)| {
                    combine(combine(h, order as u64), id)
                })
            })
            .collect();
        ids = next;
        for &id in &ids {
            fp.set((id % nbits as u64) as usize);
        }
    }
    fp
}

/// |a ∧ b| / |a ∨ b|; zero when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, ChemError> {
    if a.nbits != b.nbits {
        return Err(ChemError::WidthMismatch(a.nbits, b.nbits));
    }
    let (mut both, mut either) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        both += (x & y).count_ones();
        either += (x | y).count_ones();
    }
    if either == 0 {
        return Ok(0.0);
    }
    Ok(both as f64 / either as f64)
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn deterministic() {
        let a = fingerprint(&parse("CC(=O)Oc1ccccc1C(=O)O").unwrap(), 2, 1024);
        let b = fingerprint(&parse("CC(=O)Oc1ccccc1C(=O)O").unwrap(), 2, 1024);
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_atoms_at_radius_zero() {
        let c = fingerprint(&parse("C").unwrap(), 0, 1024);
        let n = fingerprint(&parse("N").unwrap(), 0, 1024);
        assert_eq!(c.count_ones(), 1);
        assert_eq!(n.count_ones(), 1);
        assert!(c.ones().all(|b| !n.get(b)));
    }

    #[test]
    fn ethanol_environments() {
        // three atoms, three radii: at least the three radius-0 classes differ
        let fp = fingerprint(&parse("CCO").unwrap(), 2, 1024);
        assert!(fp.count_ones() >= 3, "{}", fp.count_ones());
    }

    #[test]
    fn tanimoto_values() {
        let a = Fingerprint::from_bits(64, [1, 2, 3]);
        let b = Fingerprint::from_bits(64, [2, 3, 4]);
        assert_eq!(tanimoto(&a, &b).unwrap(), 0.5);
        assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        assert_eq!(tanimoto(&a, &Fingerprint::empty(64, 0)).unwrap(), 0.0);
        assert_eq!(
            tanimoto(&Fingerprint::empty(64, 0), &Fingerprint::empty(64, 0)).unwrap(),
            0.0
        );
        assert_eq!(
            tanimoto(&a, &Fingerprint::empty(128, 0)),
            Err(ChemError::WidthMismatch(64, 128))
        );
    }

    proptest! {
        #[test]
        fn tanimoto_symmetric_and_bounded(
            xs in proptest::collection::vec(0usize..256, 0..40),
            ys in proptest::collection::vec(0usize..256, 0..40),
        ) {
            let a = Fingerprint::from_bits(256, xs);
            let b = Fingerprint::from_bits(256, ys);
            let ab = tanimoto(&a, &b).unwrap();
            prop_assert_eq!(ab, tanimoto(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
