use super::{Graph, Init, ParamSpec, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerOptions {
    pub heads: usize,
    /// Skips every layer norm; used by the identity ablation.
    pub ln_bypass: bool,
}

pub fn linear_specs(prefix: &str, input: usize, output: usize, bias: bool) -> Vec<ParamSpec> {
    let mut v = vec![ParamSpec::new(format!("{prefix}.weight"), (input, output), Init::Xavier)];
    if bias {
        v.push(ParamSpec::new(format!("{prefix}.bias"), (1, output), Init::Zeros));
    }
    v
}

/// `x W (+ b)` with `W` stored as input x output.
pub fn linear(g: &mut Graph, x: Var, prefix: &str, bias: bool) -> Result<Var> {
    let w = g.param(&format!("{prefix}.weight"))?;
    let y = g.matmul(x, w)?;
    if bias {
        let b = g.param(&format!("{prefix}.bias"))?;
        g.add_row(y, b)
    } else {
        Ok(y)
    }
}

pub fn layer_norm_specs(prefix: &str, dim: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}.gamma"), (1, dim), Init::Ones),
        ParamSpec::new(format!("{prefix}.beta"), (1, dim), Init::Zeros),
    ]
}

pub fn layer_norm(g: &mut Graph, x: Var, prefix: &str, bypass: bool) -> Result<Var> {
    if bypass {
        return Ok(x);
    }
    let gamma = g.param(&format!("{prefix}.gamma"))?;
    let beta = g.param(&format!("{prefix}.beta"))?;
    g.layer_norm(x, gamma, beta)
}

pub fn attention_specs(prefix: &str, dim: usize) -> Vec<ParamSpec> {
    ["q", "k", "v", "o"].iter().flat_map(|p| linear_specs(&format!("{prefix}.{p}"), dim, dim, true)).collect()
}

/// Multi-head scaled dot-product attention from `query` rows to `memory` rows,
/// ignoring memory rows whose `key_valid` entry is false.
pub fn attention(g: &mut Graph, prefix: &str, query: Var, memory: Var, key_valid: &[bool], heads: usize) -> Result<Var> {
    let dim = g.value(query).ncols();
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(Error::Config(format!("hidden {dim} not divisible by {heads} heads")));
    }
    let dh = dim / heads;
    let q = linear(g, query, &format!("{prefix}.q"), true)?;
    let k = linear(g, memory, &format!("{prefix}.k"), true)?;
    let v = linear(g, memory, &format!("{prefix}.v"), true)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let scores = g.matmul_bt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let p = g.softmax_masked(scores, key_valid)?;
        outs.push(g.matmul(p, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    linear(g, cat, &format!("{prefix}.o"), true)
}

pub fn feed_forward(g: &mut Graph, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(g, x, &format!("{prefix}.fc1"), true)?;
    let h = g.gelu(h);
    linear(g, h, &format!("{prefix}.fc2"), true)
}

fn ffn_specs(prefix: &str, dim: usize, ffn: usize) -> Vec<ParamSpec> {
    let mut v = linear_specs(&format!("{prefix}.fc1"), dim, ffn, true);
    v.extend(linear_specs(&format!("{prefix}.fc2"), ffn, dim, true));
    v
}

pub fn encoder_layer_specs(prefix: &str, dim: usize, ffn: usize) -> Vec<ParamSpec> {
    let mut v = attention_specs(&format!("{prefix}.attn"), dim);
    v.extend(layer_norm_specs(&format!("{prefix}.ln1"), dim));
    v.extend(ffn_specs(&format!("{prefix}.ffn"), dim, ffn));
    v.extend(layer_norm_specs(&format!("{prefix}.ln2"), dim));
    v
}

/// Post-norm self-attention block.
pub fn encoder_layer(g: &mut Graph, prefix: &str, x: Var, valid: &[bool], opt: LayerOptions) -> Result<Var> {
    let a = attention(g, &format!("{prefix}.attn"), x, x, valid, opt.heads)?;
    let x = g.add(x, a)?;
    let x = layer_norm(g, x, &format!("{prefix}.ln1"), opt.ln_bypass)?;
    let f = feed_forward(g, &format!("{prefix}.ffn"), x)?;
    let x = g.add(x, f)?;
    layer_norm(g, x, &format!("{prefix}.ln2"), opt.ln_bypass)
}

pub fn decoder_layer_specs(prefix: &str, dim: usize, ffn: usize) -> Vec<ParamSpec> {
    let mut v = attention_specs(&format!("{prefix}.self_attn"), dim);
    v.extend(layer_norm_specs(&format!("{prefix}.ln1"), dim));
    v.extend(attention_specs(&format!("{prefix}.cross_attn"), dim));
    v.extend(layer_norm_specs(&format!("{prefix}.ln2"), dim));
    v.extend(ffn_specs(&format!("{prefix}.ffn"), dim, ffn));
    v.extend(layer_norm_specs(&format!("{prefix}.ln3"), dim));
    v
}

/// Post-norm block: self-attention over `x`, cross-attention into `memory`, feed-forward.
pub fn decoder_layer(
    g: &mut Graph,
    prefix: &str,
    x: Var,
    x_valid: &[bool],
    memory: Var,
    memory_valid: &[bool],
    opt: LayerOptions,
) -> Result<Var> {
    let a = attention(g, &format!("{prefix}.self_attn"), x, x, x_valid, opt.heads)?;
    let x = g.add(x, a)?;
    let x = layer_norm(g, x, &format!("{prefix}.ln1"), opt.ln_bypass)?;
    let c = attention(g, &format!("{prefix}.cross_attn"), x, memory, memory_valid, opt.heads)?;
    let x = g.add(x, c)?;
    let x = layer_norm(g, x, &format!("{prefix}.ln2"), opt.ln_bypass)?;
    let f = feed_forward(g, &format!("{prefix}.ffn"), x)?;
    let x = g.add(x, f)?;
    layer_norm(g, x, &format!("{prefix}.ln3"), opt.ln_bypass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use ndarray::{s, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_input(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn padding_rows_do_not_leak() {
        let p = ParamStore::init(&decoder_layer_specs("d", 8, 16), 1).unwrap();
        let opt = LayerOptions { heads: 2, ln_bypass: false };
        let x = rand_input(5, 8, 2);
        let mem = rand_input(3, 8, 3);
        let run = |x: Array2<f64>, valid: Vec<bool>| {
            let mut g = Graph::new(&p);
            let xv = g.input(x);
            let m = g.input(mem.clone());
            let y = decoder_layer(&mut g, "d", xv, &valid, m, &[true; 3], opt).unwrap();
            g.value(y).clone()
        };
        let base = run(x.clone(), vec![true; 5]);
        let padded = ndarray::concatenate(ndarray::Axis(0), &[x.view(), rand_input(4, 8, 9).view()]).unwrap();
        let mut valid = vec![true; 5];
        valid.extend([false; 4]);
        let out = run(padded, valid);
        let diff = (&out.slice(s![..5, ..]) - &base).mapv(f64::abs).fold(0.0f64, |m, x| m.max(*x));
        assert!(diff <= 1e-12, "{diff}");
    }

    #[test]
    fn zero_block_with_bypass_is_identity() {
        let mut p = ParamStore::init(&encoder_layer_specs("e", 8, 16), 1).unwrap();
        p.zero_prefix("e");
        let x = rand_input(4, 8, 5);
        let mut g = Graph::new(&p);
        let xv = g.input(x.clone());
        let y = encoder_layer(&mut g, "e", xv, &[true; 4], LayerOptions { heads: 4, ln_bypass: true }).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn heads_must_divide_hidden() {
        let p = ParamStore::init(&attention_specs("a", 6), 0).unwrap();
        let mut g = Graph::new(&p);
        let x = g.input(rand_input(2, 6, 0));
        assert!(attention(&mut g, "a", x, x, &[true; 2], 4).is_err());
    }
}
