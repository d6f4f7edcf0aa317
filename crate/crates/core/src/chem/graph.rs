//! Molecular graph produced by the parser.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    H,
    C,
    N,
    O,
    F,
    S,
    Cl,
    Br,
}

impl Element {
    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Br => "Br",
        }
    }

    pub fn atomic_number(self) -> u8 {
        match self {
            Element::H => 1,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::F => 9,
            Element::S => 16,
            Element::Cl => 17,
            Element::Br => 35,
        }
    }

    /// Allowed total valences, ascending.
    pub fn valences(self) -> &'static [u8] {
        match self {
            Element::C => &[4],
            Element::N => &[3],
            Element::O => &[2],
            Element::S => &[2, 4, 6],
            Element::H | Element::F | Element::Cl | Element::Br => &[1],
        }
    }

    pub fn max_valence(self) -> u8 {
        *self.valences().last().expect("non-empty valence table")
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to the sigma/explicit valence count. Aromatic bonds count
    /// one; the pi contribution is handled per atom.
    pub fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    /// Hydrogens written inside brackets (`[nH]`).
    pub explicit_h: u8,
    /// Hydrogens implied by the valence model.
    pub implicit_h: u8,
    /// Bracket atoms never receive implicit hydrogens.
    pub bracket: bool,
}

impl Atom {
    pub fn new(element: Element, aromatic: bool) -> Self {
        Atom {
            element,
            aromatic,
            explicit_h: 0,
            implicit_h: 0,
            bracket: false,
        }
    }

    pub fn total_h(&self) -> u8 {
        self.explicit_h + self.implicit_h
    }

    pub fn is_heavy(&self) -> bool {
        self.element != Element::H
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MolGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    /// Atom pairs joined through ring-closure digits.
    ring_closures: Vec<(usize, usize)>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

/// Outcome of the per-atom valence check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Valence {
    Ok { implicit_h: u8 },
    Exceeded,
}

impl MolGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_atom(&mut self, atom: Atom) -> usize {
        self.atoms.push(atom);
        self.adjacency.push(Vec::new());
        self.atoms.len() - 1
    }

    /// Adds a bond. Returns `None` for self-bonds and duplicates.
    pub fn add_bond(&mut self, a: usize, b: usize, order: BondOrder) -> Option<usize> {
        if a == b || self.bond_between(a, b).is_some() {
            return None;
        }
        let id = self.bonds.len();
        self.bonds.push(Bond { a, b, order });
        self.adjacency[a].push((b, id));
        self.adjacency[b].push((a, id));
        Some(id)
    }

    pub(crate) fn mark_ring_closure(&mut self, a: usize, b: usize) {
        self.ring_closures.push((a, b));
    }

    pub(crate) fn set_bond_order(&mut self, bond: usize, order: BondOrder) {
        self.bonds[bond].order = order;
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn ring_closures(&self) -> &[(usize, usize)] {
        &self.ring_closures
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `(neighbor, bond index)` pairs of atom `i`.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency.get(a)?.iter().find(|&&(n, _)| n == b).map(|&(_, id)| id)
    }

    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.is_heavy()).count()
    }

    pub fn count_element(&self, element: Element) -> usize {
        self.atoms.iter().filter(|a| a.element == element).count()
    }

    /// Number of connected components.
    pub fn component_count(&self) -> usize {
        let n = self.atoms.len();
        let mut seen = vec![false; n];
        let mut count = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(v) = stack.pop() {
                for &(w, _) in &self.adjacency[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }

    /// Cyclomatic number: independent rings.
    pub fn ring_count(&self) -> usize {
        (self.bonds.len() + self.component_count()).saturating_sub(self.atoms.len())
    }

    /// Flags bonds that lie on at least one cycle (non-bridges).
    pub fn ring_bonds(&self) -> Vec<bool> {
        let n = self.atoms.len();
        let mut is_ring = vec![true; self.bonds.len()];
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut timer = 0;
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            // iterative Tarjan bridge search: (vertex, parent bond, next neighbor slot)
            let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            while let Some(&(v, parent_bond, slot)) = stack.last() {
                if slot < self.adjacency[v].len() {
                    let (w, bond) = self.adjacency[v][slot];
                    if let Some(top) = stack.last_mut() {
                        top.2 += 1;
                    }
                    if bond == parent_bond {
                        continue;
                    }
                    if disc[w] == usize::MAX {
                        disc[w] = timer;
                        low[w] = timer;
                        timer += 1;
                        stack.push((w, bond, 0));
                    } else {
                        low[v] = low[v].min(disc[w]);
                    }
                } else {
                    stack.pop();
                    if let Some(&(p, _, _)) = stack.last() {
                        low[p] = low[p].min(low[v]);
                        if low[v] > disc[p] {
                            is_ring[parent_bond] = false;
                        }
                    }
                }
            }
        }
        is_ring
    }

    /// Flags atoms that lie on at least one cycle.
    pub fn ring_atoms(&self) -> Vec<bool> {
        let ring_bonds = self.ring_bonds();
        let mut atoms = vec![false; self.atoms.len()];
        for (bond, &ring) in self.bonds.iter().zip(&ring_bonds) {
            if ring {
                atoms[bond.a] = true;
                atoms[bond.b] = true;
            }
        }
        atoms
    }

    /// Checks atom `i` against its element's valence table and returns the
    /// number of implicit hydrogens it would carry.
    ///
    /// Aromatic bonds count one toward the explicit valence. An aromatic
    /// carbon additionally reserves one unit for its ring pi bond unless it
    /// already carries an exocyclic multiple bond; aromatic nitrogen, oxygen
    /// and sulfur may instead donate a lone pair and reserve nothing.
    pub(crate) fn valence_of(&self, i: usize) -> Valence {
        let atom = &self.atoms[i];
        let mut explicit: u32 = atom.explicit_h as u32;
        let mut exo_multiple = false;
        for &(_, b) in &self.adjacency[i] {
            let order = self.bonds[b].order;
            explicit += order.valence() as u32;
            if matches!(order, BondOrder::Double | BondOrder::Triple) {
                exo_multiple = true;
            }
        }
        if atom.aromatic {
            let (limit, fills_h) = match atom.element {
                Element::C => (if exo_multiple { 4 } else { 3 }, true),
                Element::N => (3, false),
                Element::O => (2, false),
                Element::S => (if exo_multiple { 4 } else { 2 }, false),
                _ => (0, false),
            };
            if explicit > limit {
                return Valence::Exceeded;
            }
            let implicit_h = if fills_h && !atom.bracket {
                (limit - explicit) as u8
            } else {
                0
            };
            return Valence::Ok { implicit_h };
        }
        let valences = atom.element.valences();
        match valences.iter().find(|&&v| v as u32 >= explicit) {
            Some(&v) if !atom.bracket => Valence::Ok {
                implicit_h: (v as u32 - explicit) as u8,
            },
            Some(_) => Valence::Ok { implicit_h: 0 },
            None => Valence::Exceeded,
        }
    }

    pub(crate) fn set_implicit_h(&mut self, i: usize, h: u8) {
        self.atoms[i].implicit_h = h;
    }

    /// Recomputes implicit hydrogens for every atom, saturating at zero where
    /// the valence model is violated. Used after structural edits.
    pub fn refill_hydrogens(&mut self) {
        for i in 0..self.atoms.len() {
            let h = match self.valence_of(i) {
                Valence::Ok { implicit_h } => implicit_h,
                Valence::Exceeded => 0,
            };
            self.atoms[i].implicit_h = h;
        }
    }

    /// Induced subgraph over `keep` (atom flags). Atom order is preserved and
    /// hydrogens are refilled.
    pub fn subgraph(&self, keep: &[bool]) -> MolGraph {
        let mut map = vec![usize::MAX; self.atoms.len()];
        let mut out = MolGraph::new();
        for (i, atom) in self.atoms.iter().enumerate() {
            if keep[i] {
                map[i] = out.add_atom(*atom);
            }
        }
        for bond in &self.bonds {
            if keep[bond.a] && keep[bond.b] {
                out.add_bond(map[bond.a], map[bond.b], bond.order);
            }
        }
        for &(a, b) in &self.ring_closures {
            if keep[a] && keep[b] {
                out.ring_closures.push((map[a], map[b]));
            }
        }
        out.refill_hydrogens();
        out
    }

    /// Same graph with the given bonds removed; hydrogens are refilled.
    pub fn without_bonds(&self, removed: &[bool]) -> MolGraph {
        let mut out = MolGraph::new();
        for atom in &self.atoms {
            out.add_atom(*atom);
        }
        for (id, bond) in self.bonds.iter().enumerate() {
            if !removed[id] {
                out.add_bond(bond.a, bond.b, bond.order);
            }
        }
        out.refill_hydrogens();
        out
    }

    /// Atom sets of the connected components, each in ascending order.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.atoms.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut members = vec![start];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(v) = stack.pop() {
                for &(w, _) in &self.adjacency[v] {
                    if !seen[w] {
                        seen[w] = true;
                        members.push(w);
                        stack.push(w);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }
}
