//! SMILES grammar: token stream to [`MolGraph`].
//!
//! Grammar accepted (atom-level subset, no charges or stereo):
//!
//! ```text
//! chain   := atom tail*
//! tail    := bond? ringdigit          (only before any branch on this atom)
//!          | '(' bond? chain ')'
//!          | bond? atom
//! ```

use super::graph::{Atom, BondOrder, Element, MolGraph, Valence};
use super::token::{tokenize, Token, TokenSeq};
use super::ChemError;

/// Parses SMILES text into a molecular graph with hydrogens filled.
pub fn parse(text: &str) -> Result<MolGraph, ChemError> {
    parse_tokens(&tokenize(text)?)
}

/// Validity verdict for a SMILES string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Valid,
    Invalid(ChemError),
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::Valid)
    }
}

/// Tokenizes and parses `text`, folding every failure into a verdict.
pub fn validate(text: &str) -> Verdict {
    match parse(text) {
        Ok(_) => Verdict::Valid,
        Err(e) => Verdict::Invalid(e),
    }
}

fn atom_for(token: Token) -> Option<Atom> {
    let (element, aromatic) = match token {
        Token::C => (Element::C, false),
        Token::AromC => (Element::C, true),
        Token::O => (Element::O, false),
        Token::AromO => (Element::O, true),
        Token::N => (Element::N, false),
        Token::AromN => (Element::N, true),
        Token::F => (Element::F, false),
        Token::S => (Element::S, false),
        Token::AromS => (Element::S, true),
        Token::Cl => (Element::Cl, false),
        Token::Br => (Element::Br, false),
        Token::AromNH => {
            let mut atom = Atom::new(Element::N, true);
            atom.explicit_h = 1;
            atom.bracket = true;
            return Some(atom);
        }
        Token::H => {
            let mut atom = Atom::new(Element::H, false);
            atom.bracket = true;
            return Some(atom);
        }
        _ => return None,
    };
    Some(Atom::new(element, aromatic))
}

fn bond_for(token: Token) -> Option<BondOrder> {
    match token {
        Token::Single => Some(BondOrder::Single),
        Token::Double => Some(BondOrder::Double),
        Token::Triple => Some(BondOrder::Triple),
        _ => None,
    }
}

struct OpenRing {
    atom: usize,
    bond: Option<BondOrder>,
}

fn implicit_order(g: &MolGraph, a: usize, b: usize) -> BondOrder {
    if g.atom(a).aromatic && g.atom(b).aromatic {
        BondOrder::Aromatic
    } else {
        BondOrder::Single
    }
}

/// Parses an already tokenized string.
pub fn parse_tokens(seq: &TokenSeq) -> Result<MolGraph, ChemError> {
    let tokens = seq.tokens();
    if tokens.is_empty() {
        return Err(ChemError::EmptyInput);
    }
    let mut g = MolGraph::new();
    let mut current: Option<usize> = None;
    let mut pending: Option<BondOrder> = None;
    let mut branches: Vec<usize> = Vec::new();
    // true right after '(' until the branch's first atom
    let mut branch_open = false;
    // true once a branch has been closed on `current`
    let mut branched = false;
    let mut rings: [Option<OpenRing>; 7] = Default::default();
    // bonds written without a symbol between aromatic atoms; demoted to
    // single if they turn out not to be ring bonds
    let mut implicit_aromatic: Vec<usize> = Vec::new();

    for (pos, &token) in tokens.iter().enumerate() {
        if let Some(atom) = atom_for(token) {
            let id = g.add_atom(atom);
            if let Some(prev) = current {
                let order = pending.take().unwrap_or_else(|| implicit_order(&g, prev, id));
                let bond = g
                    .add_bond(prev, id, order)
                    .expect("fresh atom cannot already be bonded");
                if order == BondOrder::Aromatic {
                    implicit_aromatic.push(bond);
                }
            } else if pending.is_some() {
                return Err(ChemError::BondWithoutAtom(pos));
            }
            current = Some(id);
            branch_open = false;
            branched = false;
            continue;
        }
        if let Some(order) = bond_for(token) {
            if current.is_none() || pending.is_some() {
                return Err(ChemError::BondWithoutAtom(pos));
            }
            pending = Some(order);
            continue;
        }
        match token {
            Token::Ring(digit) => {
                let atom = match current {
                    Some(a) if !branch_open && !branched => a,
                    _ => return Err(ChemError::MisplacedRingDigit(pos)),
                };
                let slot = &mut rings[digit as usize];
                match slot.take() {
                    None => {
                        *slot = Some(OpenRing {
                            atom,
                            bond: pending.take(),
                        });
                    }
                    Some(open) => {
                        let order = match (open.bond, pending.take()) {
                            (Some(a), Some(b)) if a != b => return Err(ChemError::RingBondConflict(digit)),
                            (Some(a), _) | (None, Some(a)) => a,
                            (None, None) => implicit_order(&g, open.atom, atom),
                        };
                        if open.atom == atom {
                            return Err(ChemError::SelfBond(pos));
                        }
                        g.add_bond(open.atom, atom, order)
                            .ok_or(ChemError::DuplicateBond(pos))?;
                        g.mark_ring_closure(open.atom, atom);
                    }
                }
            }
            Token::Open => {
                let atom = match current {
                    Some(a) if !branch_open => a,
                    _ => return Err(ChemError::UnmatchedParenthesis(pos)),
                };
                if pending.is_some() {
                    return Err(ChemError::BondWithoutAtom(pos));
                }
                branches.push(atom);
                branch_open = true;
            }
            Token::Close => {
                if pending.is_some() {
                    return Err(ChemError::BondWithoutAtom(pos));
                }
                if branch_open {
                    return Err(ChemError::EmptyBranch(pos));
                }
                let atom = branches.pop().ok_or(ChemError::UnmatchedParenthesis(pos))?;
                current = Some(atom);
                branched = true;
            }
            other => return Err(ChemError::UnexpectedToken(pos, other.as_str().to_string())),
        }
    }

    if pending.is_some() {
        return Err(ChemError::BondWithoutAtom(tokens.len()));
    }
    if !branches.is_empty() {
        return Err(ChemError::UnmatchedParenthesis(tokens.len()));
    }
    if let Some(digit) = (1..rings.len()).find(|&d| rings[d].is_some()) {
        return Err(ChemError::UnclosedRing(digit as u8));
    }

    let ring_bonds = g.ring_bonds();
    for bond in implicit_aromatic {
        if !ring_bonds[bond] {
            g.set_bond_order(bond, BondOrder::Single);
        }
    }
    let ring_atoms = g.ring_atoms();
    for (i, &in_ring) in ring_atoms.iter().enumerate() {
        if g.atom(i).aromatic && !in_ring {
            return Err(ChemError::AromaticOutsideRing(i));
        }
        match g.valence_of(i) {
            Valence::Ok { implicit_h } => g.set_implicit_h(i, implicit_h),
            Valence::Exceeded => return Err(ChemError::ValenceExceeded(i)),
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ethane() {
        let g = parse("CC").unwrap();
        assert_eq!(g.atom_count(), 2);
        assert_eq!(g.bond_count(), 1);
        assert_eq!(g.bonds()[0].order, BondOrder::Single);
    }

    #[test]
    fn cyclopropane() {
        let g = parse("C1CC1").unwrap();
        assert_eq!(g.atom_count(), 3);
        assert_eq!(g.bond_count(), 3);
        assert_eq!(g.ring_count(), 1);
        assert!(g.atoms().iter().all(|a| a.implicit_h == 2));
    }

    #[test]
    fn unclosed_ring() {
        assert_eq!(parse("C1CC"), Err(ChemError::UnclosedRing(1)));
    }

    #[test]
    fn verdicts() {
        assert!(validate("CCO").is_valid());
        assert_eq!(
            validate("C(C)(C)(C)(C)C"),
            Verdict::Invalid(ChemError::ValenceExceeded(0))
        );
        assert!(matches!(
            validate("C("),
            Verdict::Invalid(ChemError::UnmatchedParenthesis(_))
        ));
        assert!(matches!(validate("C%"), Verdict::Invalid(ChemError::UnknownToken(1))));
    }

    #[test]
    fn grammar_errors() {
        assert!(matches!(parse("=C"), Err(ChemError::BondWithoutAtom(0))));
        assert!(matches!(parse("C="), Err(ChemError::BondWithoutAtom(2))));
        assert!(matches!(parse("C==C"), Err(ChemError::BondWithoutAtom(2))));
        assert!(matches!(parse("C()"), Err(ChemError::EmptyBranch(2))));
        assert!(matches!(parse("(C)"), Err(ChemError::UnmatchedParenthesis(0))));
        assert!(matches!(parse("C)"), Err(ChemError::UnmatchedParenthesis(1))));
        assert!(matches!(parse("C11"), Err(ChemError::SelfBond(2))));
        assert!(matches!(parse("C1C1"), Err(ChemError::DuplicateBond(3))));
        assert!(matches!(parse("C=1CC#1"), Err(ChemError::RingBondConflict(1))));
        assert!(matches!(parse("C(C)1CC1"), Err(ChemError::MisplacedRingDigit(4))));
        assert!(matches!(parse("1CC"), Err(ChemError::MisplacedRingDigit(0))));
    }

    #[test]
    fn ring_bond_order_from_either_side() {
        for s in ["C=1CCC1", "C1CCC=1", "C=1CCC=1"] {
            let g = parse(s).unwrap();
            let closing = g.bond_between(0, 3).unwrap();
            assert_eq!(g.bonds()[closing].order, BondOrder::Double, "{s}");
        }
    }

    #[test]
    fn aromatic_rings() {
        let benzene = parse("c1ccccc1").unwrap();
        assert!(benzene.bonds().iter().all(|b| b.order == BondOrder::Aromatic));
        assert!(benzene.atoms().iter().all(|a| a.implicit_h == 1));

        let pyridine = parse("c1ccncc1").unwrap();
        assert_eq!(pyridine.atom(3).implicit_h, 0);

        let pyrrole = parse("c1cc[nH]c1").unwrap();
        assert_eq!(pyrrole.atom(3).total_h(), 1);

        assert!(parse("c1ccoc1").is_ok(), "furan");
        assert!(parse("c1ccsc1").is_ok(), "thiophene");
        assert!(parse("Cn1ccnc1").is_ok(), "N-methylimidazole");
        assert!(parse("O=c1cccc[nH]1").is_ok(), "pyridone");
        assert!(parse("c1ccc2ccccc2c1").is_ok(), "naphthalene");
    }

    #[test]
    fn biaryl_link_is_single() {
        let g = parse("c1ccccc1c1ccccc1").unwrap();
        let link = g.bond_between(5, 6).unwrap();
        assert_eq!(g.bonds()[link].order, BondOrder::Single);
        assert_eq!(g.atom(5).implicit_h, 0);
    }

    #[test]
    fn aromatic_atoms_need_rings() {
        assert_eq!(parse("cc"), Err(ChemError::AromaticOutsideRing(0)));
        assert!(parse("Cc1ccccc1").is_ok());
    }

    #[test]
    fn aromatic_valence() {
        // aromatic oxygen cannot take a substituent
        assert!(matches!(parse("Co1cccc1"), Err(ChemError::ValenceExceeded(1))));
        // fully substituted aromatic carbon cannot take another
        assert!(parse("c1ccc2c(c1)cccc2C").is_ok());
        assert!(parse("CC1(C)c2ccccc2C1").is_ok());
    }

    #[test]
    fn sulfur_valences() {
        assert_eq!(parse("CS(C)=O").unwrap().atom(1).implicit_h, 0);
        assert_eq!(parse("CS(=O)(=O)C").unwrap().atom(1).implicit_h, 0);
        assert_eq!(parse("CS").unwrap().atom(1).implicit_h, 1);
        assert_eq!(parse("CS(C)C").unwrap().atom(1).implicit_h, 1);
    }

    #[test]
    fn explicit_hydrogen_atom() {
        let g = parse("[H]C").unwrap();
        assert_eq!(g.atom(0).element, Element::H);
        assert_eq!(g.atom(1).implicit_h, 3);
        assert!(matches!(parse("C[H]C"), Err(ChemError::ValenceExceeded(1))));
    }

    #[test]
    fn halogens_and_triple_bonds() {
        assert!(parse("FC(F)(F)Cl").is_ok());
        assert!(parse("C#N").is_ok());
        assert!(matches!(parse("C#O"), Err(ChemError::ValenceExceeded(1))));
        assert!(matches!(parse("ClCl(C)"), Err(ChemError::ValenceExceeded(1))));
        assert!(parse("BrC=CBr").is_ok());
    }
}
