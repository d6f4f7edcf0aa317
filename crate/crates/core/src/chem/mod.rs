//! SMILES tokenization, parsing, validity, canonical keys, fingerprints and
//! scaffolds.

mod canon;
mod fingerprint;
mod graph;
mod parse;
mod scaffold;
mod token;

pub use canon::{canonical_key, canonical_order};
pub use fingerprint::{fingerprint, tanimoto, Fingerprint, DEFAULT_NBITS, DEFAULT_RADIUS};
pub use graph::{Atom, Bond, BondOrder, Element, MolGraph};
pub use parse::{parse, parse_tokens, validate, Verdict};
pub use scaffold::scaffold;
pub use token::{detokenize, tokenize, Token, TokenSeq, Vocabulary, MAX_TOKENS};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChemError {
    #[error("empty SMILES")]
    EmptyInput,
    #[error("unknown token at position {0}")]
    UnknownToken(usize),
    #[error("sequence has {0} tokens, more than the maximum of 80")]
    SequenceTooLong(usize),
    #[error("unexpected token {1:?} at position {0}")]
    UnexpectedToken(usize, String),
    #[error("ring {0} opened but never closed")]
    UnclosedRing(u8),
    #[error("unmatched parenthesis at position {0}")]
    UnmatchedParenthesis(usize),
    #[error("empty branch at position {0}")]
    EmptyBranch(usize),
    #[error("bond symbol without a following atom at position {0}")]
    BondWithoutAtom(usize),
    #[error("ring digit at position {0} does not follow an atom")]
    MisplacedRingDigit(usize),
    #[error("ring {0} closed with a different bond order than it was opened with")]
    RingBondConflict(u8),
    #[error("ring closure at position {0} bonds an atom to itself")]
    SelfBond(usize),
    #[error("ring closure at position {0} duplicates an existing bond")]
    DuplicateBond(usize),
    #[error("aromatic atom {0} is not in a ring")]
    AromaticOutsideRing(usize),
    #[error("atom {0} exceeds its valence")]
    ValenceExceeded(usize),
    #[error("fingerprint widths differ: {0} vs {1}")]
    WidthMismatch(usize, usize),
}
