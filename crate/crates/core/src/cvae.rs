//! Conditional Gaussian bottleneck: condition embedding, per-position
//! posterior, reparameterization, KL against a standard normal prior and
//! latent expansion.

use rand::Rng;
use thiserror::Error;

use crate::tensor::{ParamId, ParamStore, Tensor, TensorError, Var};
use crate::transformer::{glorot, Graph};

pub const NUM_CONDITIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CvaeError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Three scalar properties steering generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionSet(pub [f64; NUM_CONDITIONS]);

impl ConditionSet {
    pub fn new(values: [f64; NUM_CONDITIONS]) -> Result<Self, CvaeError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(ConditionSet(values))
        } else {
            Err(CvaeError::NonFinite("conditions"))
        }
    }

    pub fn values(&self) -> [f64; NUM_CONDITIONS] {
        self.0
    }
}

/// Per-property mean and standard deviation used to standardize
/// conditions before embedding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionStats {
    pub mean: [f64; NUM_CONDITIONS],
    pub std: [f64; NUM_CONDITIONS],
}

impl Default for ConditionStats {
    fn default() -> Self {
        ConditionStats {
            mean: [0.0; NUM_CONDITIONS],
            std: [1.0; NUM_CONDITIONS],
        }
    }
}

impl ConditionStats {
    /// Population statistics; a zero spread is replaced by one.
    pub fn fit(rows: &[ConditionSet]) -> Self {
        if rows.is_empty() {
            return Self::default();
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; NUM_CONDITIONS];
        let mut std = [0.0; NUM_CONDITIONS];
        for j in 0..NUM_CONDITIONS {
            mean[j] = rows.iter().map(|r| r.0[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r.0[j] - mean[j]).powi(2)).sum::<f64>() / n;
            std[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        ConditionStats { mean, std }
    }

    pub fn standardize(&self, c: &ConditionSet) -> [f64; NUM_CONDITIONS] {
        std::array::from_fn(|j| (c.0[j] - self.mean[j]) / self.std[j])
    }

    /// Standardized conditions as a `[batch, 3]` tensor.
    pub fn batch_tensor(&self, rows: &[ConditionSet]) -> Tensor {
        let data = rows.iter().flat_map(|c| self.standardize(c)).collect();
        Tensor::new(&[rows.len(), NUM_CONDITIONS], data).expect("three values per row")
    }
}

/// One learned affine map `scalar → d_model` per property.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConditionEmbedding {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConditionEmbedding {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut R) -> Self {
        ConditionEmbedding {
            weight: store.insert(&format!("{prefix}.weight"), glorot(NUM_CONDITIONS, d, rng)),
            bias: store.insert(&format!("{prefix}.bias"), Tensor::zeros(&[NUM_CONDITIONS, d])),
        }
    }

    /// `[batch, 3]` standardized conditions to `[batch, 3, d]` rows.
    pub fn embed<'t>(&self, g: &Graph<'t, '_>, conds: Var<'t>) -> Result<Var<'t>, CvaeError> {
        let s = conds.shape();
        if s.len() != 2 || s[1] != NUM_CONDITIONS {
            return Err(TensorError::ShapeMismatch {
                op: "embed_conditions",
                left: s,
                right: vec![NUM_CONDITIONS],
            }
            .into());
        }
        if conds.value().data().iter().any(|v| !v.is_finite()) {
            return Err(CvaeError::NonFinite("conditions"));
        }
        let column = conds.reshape(&[s[0], NUM_CONDITIONS, 1])?;
        Ok(column.mul(g.param(self.weight))?.add(g.param(self.bias))?)
    }
}

/// Two independent linear maps `d_model → latent` applied per position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posterior {
    pub w_mu: ParamId,
    pub b_mu: ParamId,
    pub w_logvar: ParamId,
    pub b_logvar: ParamId,
}

impl Posterior {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, d: usize, latent: usize, rng: &mut R) -> Self {
        Posterior {
            w_mu: store.insert(&format!("{prefix}.w_mu"), glorot(d, latent, rng)),
            b_mu: store.insert(&format!("{prefix}.b_mu"), Tensor::zeros(&[latent])),
            w_logvar: store.insert(&format!("{prefix}.w_logvar"), glorot(d, latent, rng)),
            b_logvar: store.insert(&format!("{prefix}.b_logvar"), Tensor::zeros(&[latent])),
        }
    }

    /// `(mu, logvar)`, each `[.., seq, latent]`.
    pub fn apply<'t>(&self, g: &Graph<'t, '_>, h: Var<'t>) -> Result<(Var<'t>, Var<'t>), CvaeError> {
        let mu = h.matmul(g.param(self.w_mu))?.add(g.param(self.b_mu))?;
        let logvar = h.matmul(g.param(self.w_logvar))?.add(g.param(self.b_logvar))?;
        Ok((mu, logvar))
    }
}

/// `mu + exp(logvar / 2) ⊙ noise`.
pub fn reparameterize<'t>(mu: Var<'t>, logvar: Var<'t>, noise: Tensor) -> Result<Var<'t>, CvaeError> {
    if mu.shape() != logvar.shape() || mu.shape() != noise.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "reparameterize",
            left: mu.shape(),
            right: noise.shape().to_vec(),
        }
        .into());
    }
    let eps = mu.tape().constant(noise);
    Ok(mu.add(logvar.scale(0.5).exp().mul(eps)?)?)
}

/// `0.5 · Σ (μ² + e^{logvar} − 1 − logvar) / batch`. `position_weights`
/// (broadcast against `mu`, e.g. `[batch, seq, 1]`) excludes padding.
pub fn kl_term<'t>(
    mu: Var<'t>,
    logvar: Var<'t>,
    position_weights: Option<&Tensor>,
    batch: usize,
) -> Result<Var<'t>, CvaeError> {
    if mu.shape() != logvar.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "kl_term",
            left: mu.shape(),
            right: logvar.shape(),
        }
        .into());
    }
    let per_entry = mu.mul(mu)?.add(logvar.exp())?.sub(logvar)?.add_scalar(-1.0);
    let kept = match position_weights {
        Some(w) => per_entry.mul(mu.tape().constant(w.clone()))?,
        None => per_entry,
    };
    let kl = kept.sum().scale(0.5 / batch.max(1) as f64);
    if !kl.value().data()[0].is_finite() {
        return Err(CvaeError::NonFinite("kl_term"));
    }
    Ok(kl)
}

/// Linear `latent → d_model` per position, appended after the memory
/// condition rows: `[batch, 3 + seq, d]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentExpansion {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LatentExpansion {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, latent: usize, d: usize, rng: &mut R) -> Self {
        LatentExpansion {
            weight: store.insert(&format!("{prefix}.weight"), glorot(latent, d, rng)),
            bias: store.insert(&format!("{prefix}.bias"), Tensor::zeros(&[d])),
        }
    }

    pub fn expand<'t>(&self, g: &Graph<'t, '_>, z: Var<'t>, condition_rows: Var<'t>) -> Result<Var<'t>, CvaeError> {
        let expanded = z.matmul(g.param(self.weight))?.add(g.param(self.bias))?;
        Ok(g.tape().concat(&[condition_rows, expanded], 1)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn condition_rows_follow_bias_when_weights_vanish() {
        let mut store = ParamStore::new();
        let emb = ConditionEmbedding::init(&mut store, "c", 4, &mut rng(1));
        store.get_mut(emb.weight).data_mut().fill(0.0);
        let bias = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng(2));
        *store.get_mut(emb.bias) = bias.clone();
        let tape = Tape::new();
        let g = Graph::eval(&tape, &store);
        let c = tape.constant(Tensor::new(&[2, 3], vec![5.0, -1.0, 0.3, 2.0, 8.0, -4.0]).unwrap());
        let rows = emb.embed(&g, c).unwrap().value();
        assert_eq!(rows.shape(), &[2, 3, 4]);
        assert_eq!(&rows.data()[..12], bias.data());
        assert_eq!(&rows.data()[12..], bias.data());
        let bad = tape.constant(Tensor::new(&[1, 3], vec![f64::NAN, 0.0, 0.0]).unwrap());
        assert_eq!(emb.embed(&g, bad).unwrap_err(), CvaeError::NonFinite("conditions"));
    }

    #[test]
    fn posterior_shapes_and_bias() {
        let mut store = ParamStore::new();
        let post = Posterior::init(&mut store, "p", 8, 5, &mut rng(3));
        store.get_mut(post.w_mu).data_mut().fill(0.0);
        store
            .get_mut(post.b_mu)
            .data_mut()
            .copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let tape = Tape::new();
        let g = Graph::eval(&tape, &store);
        let h = tape.leaf(Tensor::uniform(&[1, 4, 8], -1.0, 1.0, &mut rng(4)));
        let (mu, logvar) = post.apply(&g, h).unwrap();
        assert_eq!(mu.shape(), vec![1, 4, 5]);
        assert_eq!(logvar.shape(), vec![1, 4, 5]);
        assert_eq!(mu.value().data(), [1.0, 2.0, 3.0, 4.0, 5.0].repeat(4).as_slice());
    }

    #[test]
    fn reparameterize_edge_cases() {
        let tape = Tape::new();
        let mu = tape.leaf(Tensor::uniform(&[2, 3], -1.0, 1.0, &mut rng(5)));
        let lv = tape.leaf(Tensor::uniform(&[2, 3], -1.0, 1.0, &mut rng(6)));
        let z = reparameterize(mu, lv, Tensor::zeros(&[2, 3])).unwrap();
        assert_eq!(z.value().data(), mu.value().data());
        let zero = tape.leaf(Tensor::zeros(&[2, 3]));
        let noise = Tensor::randn(&[2, 3], &mut rng(7));
        let z = reparameterize(zero, zero, noise.clone()).unwrap();
        assert_eq!(z.value().data(), noise.data());
    }

    #[test]
    fn reparameterize_is_affine_in_noise() {
        let tape = Tape::new();
        let mu = tape.leaf(Tensor::uniform(&[4], -1.0, 1.0, &mut rng(8)));
        let lv = tape.leaf(Tensor::uniform(&[4], -1.0, 1.0, &mut rng(9)));
        let eps = Tensor::randn(&[4], &mut rng(10));
        let z1 = reparameterize(mu, lv, eps.clone()).unwrap().value();
        let z3 = reparameterize(mu, lv, eps.map(|v| 3.0 * v)).unwrap().value();
        for i in 0..4 {
            let m = mu.value().data()[i];
            assert!(((z3.data()[i] - m) - 3.0 * (z1.data()[i] - m)).abs() < 1e-12);
        }
    }

    #[test]
    fn reparameterized_gradient_skips_noise() {
        let tape = Tape::new();
        let mu = tape.leaf(Tensor::vector(&[0.5]));
        let lv = tape.leaf(Tensor::vector(&[0.2]));
        let z = reparameterize(mu, lv, Tensor::vector(&[1.5])).unwrap();
        let g = tape.backward(z.sum()).unwrap();
        assert_eq!(g.wrt(mu).unwrap().data(), &[1.0]);
        let expected = 0.5 * (0.1f64).exp() * 1.5;
        assert!((g.wrt(lv).unwrap().data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn kl_reference_values() {
        let tape = Tape::new();
        let zero = tape.leaf(Tensor::zeros(&[2, 3, 4]));
        assert_eq!(kl_term(zero, zero, None, 2).unwrap().value().item().unwrap(), 0.0);
        let one = tape.leaf(Tensor::scalar(1.0));
        let zero = tape.leaf(Tensor::scalar(0.0));
        assert_eq!(kl_term(one, zero, None, 1).unwrap().value().item().unwrap(), 0.5);
    }

    #[test]
    fn kl_ignores_weighted_out_positions() {
        let tape = Tape::new();
        let mu = tape.leaf(Tensor::full(&[1, 2, 3], 1.0));
        let lv = tape.leaf(Tensor::zeros(&[1, 2, 3]));
        let w = Tensor::new(&[1, 2, 1], vec![1.0, 0.0]).unwrap();
        let kl = kl_term(mu, lv, Some(&w), 1).unwrap().value().item().unwrap();
        assert_eq!(kl, 1.5);
    }

    #[test]
    fn expansion_appends_after_conditions() {
        let mut store = ParamStore::new();
        let exp = LatentExpansion::init(&mut store, "x", 4, 6, &mut rng(11));
        store.get_mut(exp.weight).data_mut().fill(0.0);
        store.get_mut(exp.bias).data_mut().fill(0.25);
        let tape = Tape::new();
        let g = Graph::eval(&tape, &store);
        let z = tape.leaf(Tensor::randn(&[1, 5, 4], &mut rng(12)));
        let conds = tape.leaf(Tensor::full(&[1, 3, 6], -1.0));
        let m = exp.expand(&g, z, conds).unwrap().value();
        assert_eq!(m.shape(), &[1, 8, 6]);
        assert!(m.data()[..18].iter().all(|&v| v == -1.0));
        assert!(m.data()[18..].iter().all(|&v| v == 0.25));
    }

    #[test]
    fn standardization_uses_training_statistics() {
        let rows = [ConditionSet([1.0, 10.0, 5.0]), ConditionSet([3.0, 30.0, 5.0])];
        let stats = ConditionStats::fit(&rows);
        assert_eq!(stats.mean, [2.0, 20.0, 5.0]);
        assert_eq!(stats.std, [1.0, 10.0, 1.0]);
        assert_eq!(stats.standardize(&rows[0]), [-1.0, -1.0, 0.0]);
        assert!(ConditionSet::new([0.0, f64::INFINITY, 0.0]).is_err());
    }
}
