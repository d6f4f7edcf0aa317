//! Atom-level SMILES tokens and the two model vocabularies.
//!
//! The decoder vocabulary holds 28 entries: four specials, thirteen atom
//! tokens, three bond tokens, two branch tokens and six ring-closure digits.
//! The encoder vocabulary is the same list without `<sos>` and `<eos>`.

use std::fmt;

use super::ChemError;

/// Longest SMILES accepted by the tokenizer, in tokens.
pub const MAX_TOKENS: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Unknown,
    Sos,
    Eos,
    Pad,
    C,
    AromC,
    O,
    AromO,
    N,
    AromN,
    F,
    S,
    AromS,
    Cl,
    Br,
    AromNH,
    H,
    Single,
    Double,
    Triple,
    Open,
    Close,
    Ring(u8),
}

impl Token {
    /// Every token in decoder-vocabulary order.
    pub const ALL: [Token; 28] = [
        Token::Unknown,
        Token::Sos,
        Token::Eos,
        Token::Pad,
        Token::C,
        Token::AromC,
        Token::O,
        Token::AromO,
        Token::N,
        Token::AromN,
        Token::F,
        Token::S,
        Token::AromS,
        Token::Cl,
        Token::Br,
        Token::AromNH,
        Token::H,
        Token::Single,
        Token::Double,
        Token::Triple,
        Token::Open,
        Token::Close,
        Token::Ring(1),
        Token::Ring(2),
        Token::Ring(3),
        Token::Ring(4),
        Token::Ring(5),
        Token::Ring(6),
    ];

    /// Text of the token as it appears in a SMILES string. Specials render
    /// in angle brackets.
    pub fn as_str(self) -> &'static str {
        match self {
            Token::Unknown => "<unknown>",
            Token::Sos => "<sos>",
            Token::Eos => "<eos>",
            Token::Pad => "<pad>",
            Token::C => "C",
            Token::AromC => "c",
            Token::O => "O",
            Token::AromO => "o",
            Token::N => "N",
            Token::AromN => "n",
            Token::F => "F",
            Token::S => "S",
            Token::AromS => "s",
            Token::Cl => "Cl",
            Token::Br => "Br",
            Token::AromNH => "[nH]",
            Token::H => "[H]",
            Token::Single => "-",
            Token::Double => "=",
            Token::Triple => "#",
            Token::Open => "(",
            Token::Close => ")",
            Token::Ring(1) => "1",
            Token::Ring(2) => "2",
            Token::Ring(3) => "3",
            Token::Ring(4) => "4",
            Token::Ring(5) => "5",
            Token::Ring(6) => "6",
            Token::Ring(_) => "<unknown>",
        }
    }

    pub fn is_special(self) -> bool {
        matches!(self, Token::Unknown | Token::Sos | Token::Eos | Token::Pad)
    }

    pub fn is_atom(self) -> bool {
        matches!(
            self,
            Token::C
                | Token::AromC
                | Token::O
                | Token::AromO
                | Token::N
                | Token::AromN
                | Token::F
                | Token::S
                | Token::AromS
                | Token::Cl
                | Token::Br
                | Token::AromNH
                | Token::H
        )
    }

    pub fn is_bond(self) -> bool {
        matches!(self, Token::Single | Token::Double | Token::Triple)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered token list with index lookups in both directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    index: [Option<usize>; 28],
}

fn slot(token: Token) -> usize {
    Token::ALL
        .iter()
        .position(|&t| t == token)
        .expect("every token value appears in Token::ALL")
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<Token>) -> Self {
        let mut index = [None; 28];
        for (i, &t) in tokens.iter().enumerate() {
            index[slot(t)] = Some(i);
        }
        Vocabulary { tokens, index }
    }

    /// The 28-token vocabulary used by the decoder input and output.
    pub fn decoder() -> Self {
        Self::from_tokens(Token::ALL.to_vec())
    }

    /// The 26-token vocabulary used by the encoder (no `<sos>`/`<eos>`).
    pub fn encoder() -> Self {
        Self::from_tokens(
            Token::ALL
                .iter()
                .copied()
                .filter(|t| !matches!(t, Token::Sos | Token::Eos))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn index_of(&self, token: Token) -> Option<usize> {
        self.index[slot(token)]
    }

    pub fn token(&self, index: usize) -> Option<Token> {
        self.tokens.get(index).copied()
    }

    /// Index of `token`, falling back to `<unknown>` for tokens outside
    /// this vocabulary.
    pub fn encode(&self, token: Token) -> usize {
        self.index_of(token)
            .or_else(|| self.index_of(Token::Unknown))
            .unwrap_or(0)
    }

    /// Looks up a token by its rendered text (`"Cl"`, `"<pad>"`, ...).
    pub fn parse_token(&self, text: &str) -> Option<Token> {
        self.tokens.iter().copied().find(|t| t.as_str() == text)
    }
}

/// A tokenized SMILES string, without specials.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq {
    tokens: Vec<Token>,
}

impl TokenSeq {
    pub fn new(tokens: Vec<Token>) -> Self {
        TokenSeq { tokens }
    }

    /// Builds a sequence from vocabulary indices. Out-of-range indices map to
    /// `<unknown>`.
    pub fn from_ids(vocab: &Vocabulary, ids: &[usize]) -> Self {
        TokenSeq {
            tokens: ids.iter().map(|&i| vocab.token(i).unwrap_or(Token::Unknown)).collect(),
        }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Number of non-pad tokens.
    pub fn len(&self) -> usize {
        self.tokens.iter().filter(|&&t| t != Token::Pad).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self, vocab: &Vocabulary) -> Vec<usize> {
        self.tokens.iter().map(|&t| vocab.encode(t)).collect()
    }

    /// Ids right-padded with `<pad>` up to `width`.
    pub fn padded_ids(&self, vocab: &Vocabulary, width: usize) -> Vec<usize> {
        let pad = vocab.encode(Token::Pad);
        let mut ids = self.ids(vocab);
        ids.resize(width.max(ids.len()), pad);
        ids
    }
}

/// Splits SMILES text into atom-level tokens by greedy longest match.
pub fn tokenize(text: &str) -> Result<TokenSeq, ChemError> {
    if text.is_empty() {
        return Err(ChemError::EmptyInput);
    }
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::with_capacity(chars.len());
    let mut pos = 0;
    while pos < chars.len() {
        let (token, width) = match_token(&chars[pos..]).ok_or(ChemError::UnknownToken(pos))?;
        tokens.push(token);
        pos += width;
    }
    if tokens.len() > MAX_TOKENS {
        return Err(ChemError::SequenceTooLong(tokens.len()));
    }
    Ok(TokenSeq { tokens })
}

fn match_token(rest: &[char]) -> Option<(Token, usize)> {
    let starts_with = |s: &str| {
        let n = s.chars().count();
        rest.len() >= n && rest.iter().zip(s.chars()).all(|(&a, b)| a == b)
    };
    if starts_with("[nH]") {
        return Some((Token::AromNH, 4));
    }
    if starts_with("[H]") {
        return Some((Token::H, 3));
    }
    if starts_with("Cl") {
        return Some((Token::Cl, 2));
    }
    if starts_with("Br") {
        return Some((Token::Br, 2));
    }
    let token = match rest[0] {
        'C' => Token::C,
        'c' => Token::AromC,
        'O' => Token::O,
        'o' => Token::AromO,
        'N' => Token::N,
        'n' => Token::AromN,
        'F' => Token::F,
        'S' => Token::S,
        's' => Token::AromS,
        '-' => Token::Single,
        '=' => Token::Double,
        '#' => Token::Triple,
        '(' => Token::Open,
        ')' => Token::Close,
        d @ '1'..='6' => Token::Ring(d as u8 - b'0'),
        _ => return None,
    };
    Some((token, 1))
}

/// Concatenates token text, skipping specials.
pub fn detokenize(seq: &TokenSeq) -> String {
    seq.tokens
        .iter()
        .filter(|t| !t.is_special())
        .map(|t| t.as_str())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vocabulary_sizes() {
        assert_eq!(Vocabulary::decoder().len(), 28);
        assert_eq!(Vocabulary::encoder().len(), 26);
        assert_eq!(Vocabulary::encoder().index_of(Token::Sos), None);
    }

    #[test]
    fn vocabulary_is_bijective() {
        for vocab in [Vocabulary::decoder(), Vocabulary::encoder()] {
            for (i, &t) in vocab.tokens().iter().enumerate() {
                assert_eq!(vocab.index_of(t), Some(i));
                assert_eq!(vocab.token(i), Some(t));
            }
        }
    }

    #[test]
    fn benzene_is_eight_tokens() {
        let seq = tokenize("c1ccccc1").unwrap();
        assert_eq!(seq.len(), 8);
        assert_eq!(seq.tokens()[0], Token::AromC);
        assert_eq!(seq.tokens()[1], Token::Ring(1));
        assert_eq!(seq.tokens()[7], Token::Ring(1));
    }

    #[test]
    fn two_letter_elements_win() {
        let seq = tokenize("Clc1ccccc1").unwrap();
        assert_eq!(seq.len(), 9);
        assert_eq!(seq.tokens()[0], Token::Cl);
        assert_eq!(
            tokenize("BrC[nH]").unwrap().tokens(),
            &[Token::Br, Token::C, Token::AromNH]
        );
    }

    #[test]
    fn unknown_character_reports_position() {
        assert_eq!(tokenize("C%C"), Err(ChemError::UnknownToken(1)));
        assert_eq!(tokenize("C[N]"), Err(ChemError::UnknownToken(1)));
        assert_eq!(tokenize("CC7"), Err(ChemError::UnknownToken(2)));
    }

    #[test]
    fn too_long_is_rejected() {
        assert!(tokenize(&"C".repeat(80)).is_ok());
        assert_eq!(tokenize(&"C".repeat(81)), Err(ChemError::SequenceTooLong(81)));
    }

    #[test]
    fn detokenize_skips_specials() {
        let vocab = Vocabulary::decoder();
        let sos = vocab.encode(Token::Sos);
        let eos = vocab.encode(Token::Eos);
        let pad = vocab.encode(Token::Pad);
        let c = vocab.encode(Token::C);
        assert_eq!(detokenize(&TokenSeq::from_ids(&vocab, &[sos, c, eos])), "C");
        assert_eq!(detokenize(&TokenSeq::from_ids(&vocab, &[pad, pad])), "");
        assert_eq!(detokenize(&tokenize("CCO").unwrap()), "CCO");
    }

    #[test]
    fn padding_is_trailing() {
        let vocab = Vocabulary::decoder();
        let ids = tokenize("CO").unwrap().padded_ids(&vocab, 5);
        let pad = vocab.encode(Token::Pad);
        assert_eq!(&ids[2..], &[pad, pad, pad]);
        assert_eq!(TokenSeq::from_ids(&vocab, &ids).len(), 2);
    }

    proptest! {
        #[test]
        fn round_trip(idx in proptest::collection::vec(4usize..28, 1..60)) {
            let text: String = idx.iter().map(|&i| Token::ALL[i].as_str()).collect();
            let seq = tokenize(&text).unwrap();
            prop_assert_eq!(detokenize(&seq), text);
        }
    }
}
