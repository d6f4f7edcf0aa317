//! Canonical keys via iterative neighborhood refinement.
//!
//! Atoms start from an invariant class (element, aromatic flag, degree,
//! hydrogens) and are repeatedly re-ranked by their own class plus the
//! sorted classes of their neighbors. Ties that survive refinement are broken
//! by individualizing each member of the first tied class in turn; the key
//! is the smallest SMILES text emitted over all resulting atom orders.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::graph::{BondOrder, Element, MolGraph};

/// Cap on explored tie-breaking leaves. Beyond it only the first candidate of
/// each tied class is followed, which keeps keys deterministic.
const LEAF_BUDGET: usize = 4096;

/// Canonical SMILES-like key. Equal for isomorphic graphs.
pub fn canonical_key(g: &MolGraph) -> String {
    if g.is_empty() {
        return String::new();
    }
    search(g).1
}

/// Canonical rank of every atom (0 = first in the canonical traversal).
pub fn canonical_order(g: &MolGraph) -> Vec<usize> {
    if g.is_empty() {
        return Vec::new();
    }
    search(g).0
}

fn search(g: &MolGraph) -> (Vec<usize>, String) {
    let initial = dense_rank(
        &(0..g.atom_count())
            .map(|i| {
                let a = g.atom(i);
                (
                    a.element.atomic_number(),
                    a.aromatic,
                    g.degree(i),
                    a.explicit_h,
                    a.implicit_h,
                )
            })
            .collect::<Vec<_>>(),
    );
    let mut best: Option<(Vec<usize>, String)> = None;
    let mut leaves = 0;
    explore(g, refine(g, initial), &mut best, &mut leaves);
    best.expect("search visits at least one leaf")
}

fn explore(g: &MolGraph, ranks: Vec<usize>, best: &mut Option<(Vec<usize>, String)>, leaves: &mut usize) {
    let n = ranks.len();
    let classes = ranks.iter().max().map_or(0, |m| m + 1);
    if classes == n {
        *leaves += 1;
        let text = emit(g, &ranks);
        if best.as_ref().is_none_or(|(_, b)| text < *b) {
            *best = Some((ranks, text));
        }
        return;
    }
    let mut sizes = vec![0usize; classes];
    for &r in &ranks {
        sizes[r] += 1;
    }
    let target = (0..classes)
        .find(|&c| sizes[c] > 1)
        .expect("incomplete ranking has a tied class");
    let members: Vec<usize> = (0..n).filter(|&i| ranks[i] == target).collect();
    for (k, &chosen) in members.iter().enumerate() {
        if k > 0 && *leaves >= LEAF_BUDGET {
            break;
        }
        let split: Vec<(usize, u8)> = ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| (r, u8::from(r == target && i != chosen)))
            .collect();
        explore(g, refine(g, dense_rank(&split)), best, leaves);
    }
}

fn dense_rank<T: Ord + Clone>(keys: &[T]) -> Vec<usize> {
    let mut sorted: Vec<&T> = keys.iter().collect();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(&k).expect("key present"))
        .collect()
}

fn refine(g: &MolGraph, mut ranks: Vec<usize>) -> Vec<usize> {
    let mut classes = ranks.iter().max().map_or(0, |m| m + 1);
    loop {
        let signatures: Vec<(usize, Vec<(usize, u8)>)> = (0..ranks.len())
            .map(|i| {
                let mut around: Vec<(usize, u8)> = g
                    .neighbors(i)
                    .iter()
                    .map(|&(w, b)| (ranks[w], g.bonds()[b].order.code()))
                    .collect();
                around.sort_unstable();
                (ranks[i], around)
            })
            .collect();
        let next = dense_rank(&signatures);
        let next_classes = next.iter().max().map_or(0, |m| m + 1);
        ranks = next;
        if next_classes == classes {
            return ranks;
        }
        classes = next_classes;
    }
}

fn atom_text(g: &MolGraph, i: usize) -> String {
    let atom = g.atom(i);
    if atom.element == Element::H {
        return "[H]".to_string();
    }
    let symbol = if atom.aromatic {
        atom.element.symbol().to_ascii_lowercase()
    } else {
        atom.element.symbol().to_string()
    };
    if atom.bracket || atom.explicit_h > 0 {
        let mut s = format!("[{symbol}");
        match atom.explicit_h {
            0 => {}
            1 => s.push('H'),
            h => {
                let _ = write!(s, "H{h}");
            }
        }
        s.push(']');
        s
    } else {
        symbol
    }
}

fn bond_text(g: &MolGraph, bond: usize) -> &'static str {
    let b = g.bonds()[bond];
    match b.order {
        BondOrder::Single if g.atom(b.a).aromatic && g.atom(b.b).aromatic => "-",
        BondOrder::Single | BondOrder::Aromatic => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
    }
}

/// Writes SMILES following `ranks`: traversal starts at the lowest ranked
/// atom of each component and visits neighbors in rank order.
fn emit(g: &MolGraph, ranks: &[usize]) -> String {
    let n = g.atom_count();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| ranks[i]);

    let mut sorted_neighbors: Vec<Vec<(usize, usize)>> = (0..n).map(|i| g.neighbors(i).to_vec()).collect();
    for list in &mut sorted_neighbors {
        list.sort_by_key(|&(w, _)| ranks[w]);
    }

    // classify edges with a DFS
    let mut visited = vec![false; n];
    let mut tree_children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut closures: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut bond_seen = vec![false; g.bond_count()];
    let mut roots = Vec::new();
    for &root in &order {
        if visited[root] {
            continue;
        }
        roots.push(root);
        classify(
            root,
            &sorted_neighbors,
            &mut visited,
            &mut bond_seen,
            &mut tree_children,
            &mut closures,
        );
    }
    for list in &mut closures {
        list.sort_by_key(|&(w, _)| ranks[w]);
    }

    let mut out = String::new();
    let mut digits: BTreeMap<usize, usize> = BTreeMap::new();
    let mut free: Vec<bool> = vec![true; 100];
    for (k, &root) in roots.iter().enumerate() {
        if k > 0 {
            out.push('.');
        }
        write_atom(g, root, &tree_children, &closures, &mut digits, &mut free, &mut out);
    }
    out
}

fn classify(
    v: usize,
    neighbors: &[Vec<(usize, usize)>],
    visited: &mut [bool],
    bond_seen: &mut [bool],
    children: &mut [Vec<(usize, usize)>],
    closures: &mut [Vec<(usize, usize)>],
) {
    visited[v] = true;
    for &(w, b) in &neighbors[v] {
        if bond_seen[b] {
            continue;
        }
        bond_seen[b] = true;
        if visited[w] {
            closures[v].push((w, b));
            closures[w].push((v, b));
        } else {
            children[v].push((w, b));
            classify(w, neighbors, visited, bond_seen, children, closures);
        }
    }
}

fn write_atom(
    g: &MolGraph,
    v: usize,
    children: &[Vec<(usize, usize)>],
    closures: &[Vec<(usize, usize)>],
    digits: &mut BTreeMap<usize, usize>,
    free: &mut [bool],
    out: &mut String,
) {
    out.push_str(&atom_text(g, v));
    let mut released = Vec::new();
    for &(_, b) in &closures[v] {
        match digits.remove(&b) {
            Some(d) => {
                push_digit(out, d);
                released.push(d);
            }
            None => {
                let d = (1..free.len()).find(|&d| free[d]).unwrap_or(99);
                free[d] = false;
                digits.insert(b, d);
                out.push_str(bond_text(g, b));
                push_digit(out, d);
            }
        }
    }
    for d in released {
        free[d] = true;
    }
    let kids = &children[v];
    for (k, &(w, b)) in kids.iter().enumerate() {
        let last = k + 1 == kids.len();
        if !last {
            out.push('(');
        }
        out.push_str(bond_text(g, b));
        write_atom(g, w, children, closures, digits, free, out);
        if !last {
            out.push(')');
        }
    }
}

fn push_digit(out: &mut String, d: usize) {
    if d < 10 {
        out.push(char::from(b'0' + d as u8));
    } else {
        let _ = write!(out, "%{d:02}");
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    fn key(s: &str) -> String {
        canonical_key(&parse(s).unwrap())
    }

    #[test]
    fn same_molecule_two_writings() {
        assert_eq!(key("OCC"), key("CCO"));
        assert_eq!(key("C(C)O"), key("CCO"));
        assert_ne!(key("CCO"), key("CCN"));
    }

    #[test]
    fn aromatic_rotations_agree() {
        assert_eq!(key("c1ccccc1C"), key("Cc1ccccc1"));
        assert_eq!(key("c1ccncc1"), key("n1ccccc1"));
        assert_eq!(key("Oc1ccc(CC)cc1"), key("CCc1ccc(O)cc1"));
        assert_ne!(key("Oc1ccccc1C"), key("Oc1ccc(C)cc1"));
    }

    #[test]
    fn key_reparses_to_same_key() {
        for s in ["CC(=O)Nc1ccc(O)cc1", "C1CC2CCC1C2", "c1ccc2[nH]ccc2c1", "O=C1CCCN1"] {
            let k = key(s);
            assert_eq!(key(&k), k, "{s} -> {k}");
        }
    }

    #[test]
    fn bond_order_matters() {
        assert_ne!(key("C=CC"), key("CCC"));
        assert_ne!(key("C1CC1"), key("CCC"));
    }

    #[test]
    fn order_is_a_permutation() {
        let g = parse("CC(C)(C)c1ccccc1").unwrap();
        let mut order = canonical_order(&g);
        order.sort_unstable();
        assert_eq!(order, (0..g.atom_count()).collect::<Vec<_>>());
    }
}
