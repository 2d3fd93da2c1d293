//! Graph builders for the denoising encoder-decoder.

use super::params::{Binder, NetworkConfig, LEVELS};
use super::Model;
use crate::conditioning::{inject_normal_graph, read_graph};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DenoiseMode {
    /// Frame-wise; motion modules bypassed.
    TwoD,
    /// Motion modules applied after the spatial attention of their level.
    ThreeD,
}

/// Graph handles for every conditioning input of one denoiser forward.
pub(crate) struct CondVars<'a> {
    /// Per-level reference `(keys, values)`, each `[1, tokens, width]`.
    pub bank: &'a [(Var, Var)],
    /// `[1, 1, context_dim]`.
    pub c_proj: Var,
    /// `[F, base_width, h, w]`.
    pub p_body: Var,
    /// `[F, normal_dim]`.
    pub p_normal: Var,
}

/// Sinusoidal embedding of a scalar position: `dim/2` sines then `dim/2` cosines.
pub(crate) fn sinusoid(pos: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        out[i] = (pos * freq).sin();
        out[half + i] = (pos * freq).cos();
    }
    out
}

/// Per-level timestep biases `[width(l)]` for the network under `prefix`.
pub(crate) fn time_embedding(g: &mut Graph, b: &mut Binder, cfg: &NetworkConfig, prefix: &str, t: usize) -> Vec<Var> {
    let c0 = cfg.base_width;
    let s = g.constant(Tensor::new(vec![1, c0], sinusoid(t as f64, c0)).expect("sinusoid width"));
    let w = b.var(g, &format!("{prefix}.time.fc1.w"));
    let bias = b.var(g, &format!("{prefix}.time.fc1.b"));
    let h = g.linear(s, w, Some(bias));
    let h = g.silu(h);
    (0..LEVELS)
        .map(|l| {
            let w = b.var(g, &format!("{prefix}.time.level{l}.w"));
            let bias = b.var(g, &format!("{prefix}.time.level{l}.b"));
            let e = g.linear(h, w, Some(bias));
            g.reshape(e, &[cfg.width(l)])
        })
        .collect()
}

pub(crate) fn conv(g: &mut Graph, b: &mut Binder, name: &str, x: Var, stride: usize) -> Var {
    let w = b.var(g, &format!("{name}.w"));
    let bias = b.var(g, &format!("{name}.b"));
    g.conv2d(x, w, Some(bias), stride, 1)
}

/// `h + conv2(silu(conv1(silu(h))))`.
pub(crate) fn res_block(g: &mut Graph, b: &mut Binder, prefix: &str, h: Var) -> Var {
    let a = g.silu(h);
    let a = conv(g, b, &format!("{prefix}.res1"), a, 1);
    let a = g.silu(a);
    let a = conv(g, b, &format!("{prefix}.res2"), a, 1);
    g.add(h, a)
}

/// `[F, C, h, w]` to `[F, h*w, C]`.
pub(crate) fn tokens(g: &mut Graph, x: Var) -> Var {
    let s = g.shape(x).to_vec();
    let r = g.reshape(x, &[s[0], s[1], s[2] * s[3]]);
    g.permute(r, &[0, 2, 1])
}

/// Inverse of [`tokens`].
fn untokens(g: &mut Graph, x: Var, h: usize, w: usize) -> Var {
    let s = g.shape(x).to_vec();
    let p = g.permute(x, &[0, 2, 1]);
    g.reshape(p, &[s[0], s[2], h, w])
}

fn proj(g: &mut Graph, b: &mut Binder, name: &str, x: Var) -> Var {
    let w = b.var(g, &format!("{name}.w"));
    g.linear(x, w, None)
}

/// Reference read, appearance cross-attention and normal injection, each
/// residual, on `[F, C, h, w]`.
fn spatial_attention(g: &mut Graph, b: &mut Binder, level: usize, x: Var, cond: &CondVars) -> Var {
    let s = g.shape(x).to_vec();
    let a = format!("unet.attn{level}");
    let mut tok = tokens(g, x);

    let (rk, rv) = cond.bank[level];
    let q = proj(g, b, &format!("{a}.ref.q"), tok);
    let r = read_graph(g, q, rk, rv);
    let r = proj(g, b, &format!("{a}.ref.o"), r);
    tok = g.add(tok, r);

    let q = proj(g, b, &format!("{a}.ctx.q"), tok);
    let k = proj(g, b, &format!("{a}.ctx.k"), cond.c_proj);
    let v = proj(g, b, &format!("{a}.ctx.v"), cond.c_proj);
    let c = g.attention(q, k, v, 1);
    let c = proj(g, b, &format!("{a}.ctx.o"), c);
    tok = g.add(tok, c);

    tok = inject_normal_graph(g, b, level, tok, cond.p_normal);
    untokens(g, tok, s[2], s[3])
}

/// Frame-axis self-attention at every spatial site, with sinusoidal frame
/// positions added to the queries and keys' input.
fn motion_module(g: &mut Graph, b: &mut Binder, cfg: &NetworkConfig, index: usize, x: Var) -> Var {
    let s = g.shape(x).to_vec();
    let (f, c, h, w) = (s[0], s[1], s[2], s[3]);
    let p = g.permute(x, &[2, 3, 0, 1]);
    let seq = g.reshape(p, &[h * w, f, c]);
    let table: Vec<f64> = (0..f).flat_map(|fi| sinusoid(fi as f64, c)).collect();
    let pe = Tensor::from_fn(&[h * w, f, c], |i| table[i % (f * c)]);
    let pe = g.constant(pe);
    let with_pos = g.add(seq, pe);
    let m = format!("unet.mm{index}");
    let q = proj(g, b, &format!("{m}.q"), with_pos);
    let k = proj(g, b, &format!("{m}.k"), with_pos);
    let v = proj(g, b, &format!("{m}.v"), with_pos);
    let att = g.attention(q, k, v, cfg.temporal_heads);
    let wo = b.var(g, &format!("{m}.o.w"));
    let bo = b.var(g, &format!("{m}.o.b"));
    let out = g.linear(att, wo, Some(bo));
    let seq = g.add(seq, out);
    let back = g.reshape(seq, &[h, w, f, c]);
    g.permute(back, &[2, 3, 0, 1])
}

/// Denoiser forward on a composite input `[F, 12, h, w]`; returns `[F, 4, h, w]`.
pub(crate) fn unet_graph(
    g: &mut Graph,
    b: &mut Binder,
    model: &Model,
    input: Var,
    cond: &CondVars,
    t: usize,
    mode: DenoiseMode,
) -> Var {
    let cfg = model.config();
    let temb = time_embedding(g, b, cfg, "unet", t);
    let mut h = conv(g, b, "unet.conv_in", input, 1);
    h = g.add(h, cond.p_body);
    let mut skips = Vec::with_capacity(LEVELS);
    for (l, te) in temb.iter().enumerate() {
        if l > 0 {
            let a = g.silu(h);
            h = conv(g, b, &format!("unet.down{}", l - 1), a, 2);
        }
        h = g.add_channel(h, *te);
        h = res_block(g, b, &format!("unet.enc{l}"), h);
        h = spatial_attention(g, b, l, h, cond);
        if mode == DenoiseMode::ThreeD {
            for (i, _) in cfg.motion_levels.iter().enumerate().filter(|(_, &ml)| ml == l) {
                h = motion_module(g, b, cfg, i, h);
            }
        }
        skips.push(h);
    }
    for l in (0..LEVELS - 1).rev() {
        let u = g.upsample2x(h);
        h = conv(g, b, &format!("unet.up{l}"), u, 1);
        h = g.add(h, skips[l]);
        h = res_block(g, b, &format!("unet.dec{l}"), h);
    }
    let a = g.silu(h);
    conv(g, b, "unet.conv_out", a, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoid_layout() {
        let s = sinusoid(0.0, 6);
        assert_eq!(s, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let s = sinusoid(2.0, 4);
        assert!((s[0] - 2f64.sin()).abs() < 1e-15);
        assert!((s[2] - 2f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn tokens_round_trip() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 2, 2], |i| i as f64));
        let t = tokens(&mut g, x);
        assert_eq!(g.shape(t), &[2, 4, 3]);
        // token (frame 1, site 2) channel 1
        assert_eq!(g.value(t).data()[(4 + 2) * 3 + 1], (12 + 4 + 2) as f64);
        let back = untokens(&mut g, t, 2, 2);
        assert_eq!(g.value(back), g.value(x));
    }
}
