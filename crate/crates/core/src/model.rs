//! The conditional variational Transformer: a Pre-LN encoder over
//! `conditions ++ tokens`, a per-position Gaussian posterior, and a causal
//! Pre-LN decoder attending to `conditions ++ expanded latent`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chem::{Token, TokenSeq, Vocabulary, MAX_TOKENS};
use crate::cvae::{
    kl_term, reparameterize, ConditionEmbedding, ConditionSet, ConditionStats, CvaeError, LatentExpansion, Posterior,
    NUM_CONDITIONS,
};
use crate::tensor::{AttnMask, ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use crate::transformer::{positional_encoding, pre_ln_block, BlockMode, BlockParams, Graph, LayerNormParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("sequence of {0} tokens exceeds the model maximum of {1}")]
    TooLong(usize, usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Cvae(#[from] CvaeError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub d_ff: usize,
    pub latent_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// Full-size architecture: 6 blocks of width 512 with 8 heads.
    pub fn full() -> Self {
        ModelConfig {
            d_model: 512,
            heads: 8,
            blocks: 6,
            d_ff: 2048,
            latent_dim: 128,
            max_len: MAX_TOKENS,
            dropout: 0.3,
        }
    }

    /// Desk-scale architecture used by the bundled experiments.
    pub fn toy() -> Self {
        ModelConfig {
            d_model: 64,
            heads: 2,
            blocks: 2,
            d_ff: 128,
            latent_dim: 16,
            max_len: MAX_TOKENS,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail("d_model must be a positive multiple of heads");
        }
        if !self.d_model.is_multiple_of(2) {
            return fail("d_model must be even");
        }
        if self.latent_dim == 0 || self.d_ff == 0 {
            return fail("latent_dim and d_ff must be positive");
        }
        if self.max_len == 0 || self.max_len > MAX_TOKENS {
            return fail("max_len must lie in 1..=80");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Parts {
    enc_embed: ParamId,
    dec_embed: ParamId,
    cond_enc: ConditionEmbedding,
    cond_mem: ConditionEmbedding,
    enc_blocks: Vec<BlockParams>,
    enc_ln: LayerNormParams,
    posterior: Posterior,
    expansion: LatentExpansion,
    dec_blocks: Vec<BlockParams>,
    dec_ln: LayerNormParams,
    out_w: ParamId,
    out_b: ParamId,
}

/// Parameters plus the condition statistics they were trained with.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub condition_stats: ConditionStats,
    parts: Parts,
    enc_vocab: Vocabulary,
    dec_vocab: Vocabulary,
}

/// Teacher-forcing inputs for a batch of sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    /// Padded token positions on the encoder side.
    pub enc_len: usize,
    pub enc_ids: Vec<usize>,
    pub lengths: Vec<usize>,
    /// `<sos> ++ tokens`, padded to `enc_len + 1`.
    pub dec_ids: Vec<usize>,
    /// `tokens ++ <eos>`, padded to `enc_len + 1`.
    pub targets: Vec<usize>,
    pub conditions: Vec<ConditionSet>,
}

impl Batch {
    pub fn new(rows: &[(&TokenSeq, ConditionSet)]) -> Result<Self, ModelError> {
        if rows.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let enc = Vocabulary::encoder();
        let dec = Vocabulary::decoder();
        let enc_len = rows.iter().map(|(s, _)| s.len()).max().unwrap_or(0).max(1);
        let dec_len = enc_len + 1;
        let sos = dec.encode(Token::Sos);
        let eos = dec.encode(Token::Eos);
        let dec_pad = dec.encode(Token::Pad);
        let mut batch = Batch {
            size: rows.len(),
            enc_len,
            enc_ids: Vec::with_capacity(rows.len() * enc_len),
            lengths: Vec::with_capacity(rows.len()),
            dec_ids: Vec::with_capacity(rows.len() * dec_len),
            targets: Vec::with_capacity(rows.len() * dec_len),
            conditions: Vec::with_capacity(rows.len()),
        };
        for (seq, c) in rows {
            let tokens: Vec<Token> = seq.tokens().iter().copied().filter(|&t| t != Token::Pad).collect();
            if tokens.len() > MAX_TOKENS {
                return Err(ModelError::TooLong(tokens.len(), MAX_TOKENS));
            }
            let seq = TokenSeq::new(tokens);
            batch.enc_ids.extend(seq.padded_ids(&enc, enc_len));
            batch.lengths.push(seq.len());
            let ids = seq.ids(&dec);
            batch.dec_ids.push(sos);
            batch.dec_ids.extend(&ids);
            batch
                .dec_ids
                .resize(batch.dec_ids.len() + dec_len - 1 - ids.len(), dec_pad);
            batch.targets.extend(&ids);
            batch.targets.push(eos);
            batch
                .targets
                .resize(batch.targets.len() + dec_len - 1 - ids.len(), dec_pad);
            batch.conditions.push(*c);
        }
        Ok(batch)
    }

    pub fn dec_len(&self) -> usize {
        self.enc_len + 1
    }

    /// 1 for real target positions (including `<eos>`), 0 for padding.
    pub fn target_weights(&self) -> Vec<f64> {
        let pad = Vocabulary::decoder().encode(Token::Pad);
        self.targets.iter().map(|&t| if t == pad { 0.0 } else { 1.0 }).collect()
    }

    /// `[batch, enc_len, 1]` weights: 1 on token positions, 0 on padding.
    pub fn position_weights(&self) -> Tensor {
        let data = self
            .lengths
            .iter()
            .flat_map(|&l| (0..self.enc_len).map(move |t| if t < l { 1.0 } else { 0.0 }))
            .collect();
        Tensor::new(&[self.size, self.enc_len, 1], data).expect("one weight per position")
    }

    /// Validity of each memory / encoder key: the condition rows, then the
    /// token positions.
    pub fn key_valid(&self) -> Vec<Vec<bool>> {
        self.lengths
            .iter()
            .map(|&l| {
                let mut v = vec![true; NUM_CONDITIONS];
                v.extend((0..self.enc_len).map(|t| t < l));
                v
            })
            .collect()
    }
}

/// Everything a teacher-forced pass produces.
pub struct Forward<'t> {
    pub logits: Var<'t>,
    pub mu: Var<'t>,
    pub logvar: Var<'t>,
    /// Encoder self-attention weights per block, `[batch, heads, 3+T, 3+T]`.
    pub encoder_weights: Vec<Var<'t>>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc_vocab = Vocabulary::encoder();
        let dec_vocab = Vocabulary::decoder();
        let d = config.d_model;
        let embed_scale = (d as f64).powf(-0.5);
        let enc_embed = store.insert(
            "enc.embed",
            Tensor::randn(&[enc_vocab.len(), d], &mut rng).map(|v| v * embed_scale),
        );
        let dec_embed = store.insert(
            "dec.embed",
            Tensor::randn(&[dec_vocab.len(), d], &mut rng).map(|v| v * embed_scale),
        );
        let cond_enc = ConditionEmbedding::init(&mut store, "enc.cond", d, &mut rng);
        let cond_mem = ConditionEmbedding::init(&mut store, "mem.cond", d, &mut rng);
        let enc_blocks = (0..config.blocks)
            .map(|i| {
                BlockParams::init(
                    &mut store,
                    &format!("enc.{i}"),
                    d,
                    config.d_ff,
                    config.heads,
                    false,
                    &mut rng,
                )
            })
            .collect();
        let enc_ln = LayerNormParams::init(&mut store, "enc.ln", d);
        let posterior = Posterior::init(&mut store, "latent", d, config.latent_dim, &mut rng);
        let expansion = LatentExpansion::init(&mut store, "latent.expand", config.latent_dim, d, &mut rng);
        let dec_blocks = (0..config.blocks)
            .map(|i| {
                BlockParams::init(
                    &mut store,
                    &format!("dec.{i}"),
                    d,
                    config.d_ff,
                    config.heads,
                    true,
                    &mut rng,
                )
            })
            .collect();
        let dec_ln = LayerNormParams::init(&mut store, "dec.ln", d);
        let out_w = store.insert("out.weight", crate::transformer::glorot(d, dec_vocab.len(), &mut rng));
        let out_b = store.insert("out.bias", Tensor::zeros(&[dec_vocab.len()]));
        Ok(Model {
            config,
            store,
            condition_stats: ConditionStats::default(),
            parts: Parts {
                enc_embed,
                dec_embed,
                cond_enc,
                cond_mem,
                enc_blocks,
                enc_ln,
                posterior,
                expansion,
                dec_blocks,
                dec_ln,
                out_w,
                out_b,
            },
            enc_vocab,
            dec_vocab,
        })
    }

    pub fn encoder_vocab(&self) -> &Vocabulary {
        &self.enc_vocab
    }

    pub fn decoder_vocab(&self) -> &Vocabulary {
        &self.dec_vocab
    }

    fn embed_tokens<'t>(
        &self,
        g: &Graph<'t, '_>,
        table: ParamId,
        ids: &[usize],
        batch: usize,
        len: usize,
    ) -> Result<Var<'t>, ModelError> {
        let d = self.config.d_model;
        let rows = g.tape().gather(g.param(table), ids)?;
        let pe = g.tape().constant(positional_encoding(len, d));
        Ok(rows.reshape(&[batch, len, d])?.scale((d as f64).sqrt()).add(pe)?)
    }

    fn condition_input<'t>(&self, g: &Graph<'t, '_>, conds: &[ConditionSet]) -> Var<'t> {
        g.tape().constant(self.condition_stats.batch_tensor(conds))
    }

    /// Encoder stack over `conditions ++ tokens`. Returns the final
    /// normalized states `[batch, 3+T, d]` and per-block attention weights.
    pub fn encode<'t>(&self, g: &Graph<'t, '_>, batch: &Batch) -> Result<(Var<'t>, Vec<Var<'t>>), ModelError> {
        let tokens = self.embed_tokens(g, self.parts.enc_embed, &batch.enc_ids, batch.size, batch.enc_len)?;
        let conds = self
            .parts
            .cond_enc
            .embed(g, self.condition_input(g, &batch.conditions))?;
        let mut x = g.dropout(g.tape().concat(&[conds, tokens], 1)?);
        let mask = AttnMask::keys(NUM_CONDITIONS + batch.enc_len, &batch.key_valid())?;
        let mut weights = Vec::with_capacity(self.parts.enc_blocks.len());
        for block in &self.parts.enc_blocks {
            let out = pre_ln_block(g, x, block, BlockMode::EncoderSelf(Some(&mask)))?;
            x = out.out;
            weights.push(out.self_weights);
        }
        Ok((self.parts.enc_ln.apply(g, x)?, weights))
    }

    /// Posterior over the token positions of an encoding.
    pub fn posterior<'t>(&self, g: &Graph<'t, '_>, encoded: Var<'t>) -> Result<(Var<'t>, Var<'t>), ModelError> {
        let len = encoded.shape()[1] - NUM_CONDITIONS;
        let tokens = encoded.slice(1, NUM_CONDITIONS, len)?;
        Ok(self.parts.posterior.apply(g, tokens)?)
    }

    /// Decoder memory `[batch, 3+T, d]` from latents `[batch, T, latent]`.
    pub fn memory<'t>(&self, g: &Graph<'t, '_>, z: Var<'t>, conds: &[ConditionSet]) -> Result<Var<'t>, ModelError> {
        let rows = self.parts.cond_mem.embed(g, self.condition_input(g, conds))?;
        Ok(self.parts.expansion.expand(g, z, rows)?)
    }

    /// Decoder logits `[batch, len, 28]` for `ids` (`batch·len` decoder ids).
    pub fn decode<'t>(
        &self,
        g: &Graph<'t, '_>,
        memory: Var<'t>,
        memory_mask: Option<&AttnMask>,
        ids: &[usize],
        len: usize,
    ) -> Result<Var<'t>, ModelError> {
        let batch = memory.shape()[0];
        if ids.len() != batch * len {
            return Err(TensorError::ShapeMismatch {
                op: "decode",
                left: vec![batch, len],
                right: vec![ids.len()],
            }
            .into());
        }
        let mut x = g.dropout(self.embed_tokens(g, self.parts.dec_embed, ids, batch, len)?);
        for block in &self.parts.dec_blocks {
            x = pre_ln_block(g, x, block, BlockMode::DecoderCross { memory, memory_mask })?.out;
        }
        let h = self.parts.dec_ln.apply(g, x)?;
        Ok(h.matmul(g.param(self.parts.out_w))?.add(g.param(self.parts.out_b))?)
    }

    /// Teacher-forced pass. In training mode `z` is sampled from the
    /// posterior; in evaluation mode `z = mu`.
    pub fn forward<'t>(&self, g: &Graph<'t, '_>, batch: &Batch) -> Result<Forward<'t>, ModelError> {
        let (encoded, encoder_weights) = self.encode(g, batch)?;
        let (mu, logvar) = self.posterior(g, encoded)?;
        let z = match g.noise(&mu.shape()) {
            Some(noise) => reparameterize(mu, logvar, noise)?,
            None => mu,
        };
        let memory = self.memory(g, z, &batch.conditions)?;
        let mask = AttnMask::keys(batch.dec_len(), &batch.key_valid())?;
        let logits = self.decode(g, memory, Some(&mask), &batch.dec_ids, batch.dec_len())?;
        Ok(Forward {
            logits,
            mu,
            logvar,
            encoder_weights,
        })
    }

    /// Cross-entropy over non-pad targets plus `k_w` times the KL term.
    pub fn loss<'t>(&self, f: &Forward<'t>, batch: &Batch, k_w: f64) -> Result<Loss<'t>, ModelError> {
        let recon = f.logits.cross_entropy(&batch.targets, &batch.target_weights())?;
        let kl = kl_term(f.mu, f.logvar, Some(&batch.position_weights()), batch.size)?;
        let total = recon.add(kl.scale(k_w))?;
        Ok(Loss { total, recon, kl })
    }

    /// Fraction of non-pad targets predicted exactly (argmax) under
    /// teacher forcing.
    pub fn token_accuracy(logits: &Tensor, batch: &Batch) -> (usize, usize) {
        let pad = Vocabulary::decoder().encode(Token::Pad);
        let predicted = logits.argmax_rows();
        let mut hit = 0;
        let mut total = 0;
        for (p, &t) in predicted.iter().zip(&batch.targets) {
            if t != pad {
                total += 1;
                hit += usize::from(*p == t);
            }
        }
        (hit, total)
    }

    /// Evaluation-mode teacher-forced logits as a plain tensor.
    pub fn eval_logits(&self, batch: &Batch) -> Result<Tensor, ModelError> {
        let tape = Tape::new();
        let g = Graph::eval(&tape, &self.store);
        let f = self.forward(&g, batch)?;
        let logits = f.logits.value();
        Ok(logits.as_ref().clone())
    }
}

pub struct Loss<'t> {
    pub total: Var<'t>,
    pub recon: Var<'t>,
    pub kl: Var<'t>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::tokenize;

    fn batch(smiles: &[&str]) -> Batch {
        let seqs: Vec<TokenSeq> = smiles.iter().map(|s| tokenize(s).unwrap()).collect();
        let rows: Vec<(&TokenSeq, ConditionSet)> = seqs
            .iter()
            .enumerate()
            .map(|(i, s)| (s, ConditionSet([i as f64, 1.0, -1.0])))
            .collect();
        Batch::new(&rows).unwrap()
    }

    #[test]
    fn batch_layout() {
        let b = batch(&["CCO", "C"]);
        let dec = Vocabulary::decoder();
        let id = |t| dec.encode(t);
        assert_eq!(b.enc_len, 3);
        assert_eq!(b.lengths, vec![3, 1]);
        assert_eq!(
            b.dec_ids,
            vec![
                id(Token::Sos),
                id(Token::C),
                id(Token::C),
                id(Token::O),
                id(Token::Sos),
                id(Token::C),
                id(Token::Pad),
                id(Token::Pad),
            ]
        );
        assert_eq!(
            b.targets,
            vec![
                id(Token::C),
                id(Token::C),
                id(Token::O),
                id(Token::Eos),
                id(Token::C),
                id(Token::Eos),
                id(Token::Pad),
                id(Token::Pad),
            ]
        );
        assert_eq!(b.target_weights(), vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(b.key_valid()[1], vec![true, true, true, true, false, false]);
        assert_eq!(Batch::new(&[]), Err(ModelError::EmptyBatch));
    }

    #[test]
    fn forward_shapes() {
        let mut cfg = ModelConfig::toy();
        cfg.d_model = 16;
        cfg.d_ff = 32;
        cfg.latent_dim = 4;
        let model = Model::new(cfg, 1).unwrap();
        let b = batch(&["c1ccccc1", "CC(=O)O", "N"]);
        let tape = Tape::new();
        let g = Graph::eval(&tape, &model.store);
        let f = model.forward(&g, &b).unwrap();
        assert_eq!(f.logits.shape(), vec![3, 9, 28]);
        assert_eq!(f.mu.shape(), vec![3, 8, 4]);
        assert_eq!(f.encoder_weights[0].shape(), vec![3, 2, 11, 11]);
        let loss = model.loss(&f, &b, 0.5).unwrap();
        assert!(loss.total.value().item().unwrap() > 0.0);
    }

    #[test]
    fn padding_does_not_change_a_row() {
        let mut cfg = ModelConfig::toy();
        cfg.d_model = 16;
        cfg.d_ff = 32;
        cfg.latent_dim = 4;
        let model = Model::new(cfg, 2).unwrap();
        let alone = model.eval_logits(&batch(&["CCO"])).unwrap();
        let padded = model.eval_logits(&batch(&["CCO", "c1ccccc1CCN"])).unwrap();
        let row = 4 * 28;
        for (a, b) in alone.data().iter().zip(&padded.data()[..row]) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::toy();
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::full().validate().is_ok());
    }
}
