//! Parameterised building blocks on top of the tape.

use pathe_tensor::{uniform, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use rand::Rng;

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = store.add(format!("{name}.w"), uniform(&[fan_in, fan_out], bound, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Linear { w, b }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        Ok(tape.linear(x, w, b)?)
    }
}

/// Two linear layers with a relu between them.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        hidden: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        Mlp {
            first: Linear::new(store, &format!("{name}.1"), fan_in, hidden, rng),
            second: Linear::new(store, &format!("{name}.2"), hidden, fan_out, rng),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let h = self.first.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.second.forward(tape, store, h)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], T::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        Ok(tape.layer_norm(x, g, b)?)
    }
}

/// Pre-norm transformer block: `x + drop(attn(ln(x)))`, then `x + drop(ff(ln(x)))`.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    ln_attn: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln_ff: LayerNorm,
    ff: Mlp,
    heads: usize,
    dropout: f64,
}

impl EncoderLayer {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        EncoderLayer {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), dim),
            q: Linear::new(store, &format!("{name}.attn.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.attn.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.attn.v"), dim, dim, rng),
            o: Linear::new(store, &format!("{name}.attn.o"), dim, dim, rng),
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), dim),
            ff: Mlp::new(store, &format!("{name}.ff"), dim, ff_dim, dim, rng),
            heads,
            dropout,
        }
    }

    /// `x` is `[batch, len, dim]`; `mask` is `[batch, len]` with `true` = attend.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        mask: Option<&[bool]>,
        train: bool,
    ) -> Result<Var> {
        let h = self.ln_attn.forward(tape, store, x)?;
        let q = self.q.forward(tape, store, h)?;
        let k = self.k.forward(tape, store, h)?;
        let v = self.v.forward(tape, store, h)?;
        let a = tape.multi_head_attention(q, k, v, mask, self.heads)?;
        let a = self.o.forward(tape, store, a)?;
        let a = tape.dropout(a, self.dropout, train)?;
        let x = tape.add(x, a)?;
        let h = self.ln_ff.forward(tape, store, x)?;
        let f = self.ff.forward(tape, store, h)?;
        let f = tape.dropout(f, self.dropout, train)?;
        Ok(tape.add(x, f)?)
    }
}

/// Stack of [`EncoderLayer`]s followed by a final layer norm.
#[derive(Debug, Clone)]
pub struct Encoder {
    layers: Vec<EncoderLayer>,
    final_ln: LayerNorm,
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        layers: usize,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        Encoder {
            layers: (0..layers)
                .map(|i| {
                    EncoderLayer::new(
                        store,
                        &format!("{name}.{i}"),
                        dim,
                        heads,
                        ff_dim,
                        dropout,
                        rng,
                    )
                })
                .collect(),
            final_ln: LayerNorm::new(store, &format!("{name}.ln_out"), dim),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        mut x: Var,
        mask: Option<&[bool]>,
        train: bool,
    ) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(tape, store, x, mask, train)?;
        }
        self.final_ln.forward(tape, store, x)
    }
}

/// Closed-form parameter count of an [`Encoder`].
pub fn encoder_parameters(layers: usize, dim: usize, ff_dim: usize) -> usize {
    let attention = 4 * (dim * dim + dim);
    let norms = 2 * 2 * dim;
    let ff = dim * ff_dim + ff_dim + ff_dim * dim + dim;
    layers * (attention + norms + ff) + 2 * dim
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encoder_count_matches_registered_parameters() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Encoder::new(&mut store, "enc", 3, 8, 2, 16, 0.1, &mut rng);
        assert_eq!(store.num_elements(), encoder_parameters(3, 8, 16));
        assert!(store.id("enc.ln_out.gamma").is_some());
    }

    #[test]
    fn mlp_maps_rows_and_starts_with_zero_bias() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(&mut store, "m", 3, 5, 2, &mut rng);
        assert!(store.value(mlp.second.b).data().iter().all(|&b| b == 0.0));
        let mut tape = Tape::new(0);
        let x = tape.constant(Tensor::zeros(&[4, 3]));
        let y = mlp.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(y), &[4, 2]);
        // zero input, zero biases
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_starts_as_standardisation() {
        let mut store = ParamStore::<f64>::new();
        let ln = LayerNorm::new(&mut store, "ln", 4);
        let mut tape = Tape::new(0);
        let x = tape.constant(Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = ln.forward(&mut tape, &store, x).unwrap();
        let out = tape.value(y).data();
        assert!(out.iter().sum::<f64>().abs() < 1e-9);
        assert!(out[0] < out[1] && out[1] < out[2] && out[2] < out[3]);
    }
}
