use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::denoiser::network::{res_block, time_embedding, tokens};
use crate::denoiser::params::{Binder, Trainable, LATENT_CHANNELS, LEVELS};
use crate::denoiser::Model;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub fn block_id(level: usize) -> String {
    format!("block{level}")
}

/// Keys and values written by one reference attention block, `[tokens, d]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub keys: Tensor,
    pub values: Tensor,
}

/// Per-block reference features; immutable once written.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    entries: BTreeMap<String, BankEntry>,
}

impl MemoryBank {
    /// Assembles a bank from explicit entries (each `[tokens, d]`, keys and
    /// values sharing both extents).
    pub fn from_entries(entries: impl IntoIterator<Item = (String, BankEntry)>) -> Result<Self> {
        let entries: BTreeMap<_, _> = entries.into_iter().collect();
        for (id, e) in &entries {
            if e.keys.rank() != 2 || e.keys.shape() != e.values.shape() {
                return Err(Error::invalid(format!(
                    "bank entry `{id}` needs matching [tokens, d] keys and values, got {:?} / {:?}",
                    e.keys.shape(),
                    e.values.shape()
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, block: &str) -> Result<&BankEntry> {
        self.entries
            .get(block)
            .ok_or_else(|| Error::MissingBankEntry(block.to_string()))
    }

    pub fn block_ids(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Reference network forward at timestep 0; returns `(keys, values)` per
/// level, each `[1, tokens, width]`.
pub(crate) fn reference_graph(g: &mut Graph, b: &mut Binder, model: &Model, ref_latent: Var) -> Vec<(Var, Var)> {
    let cfg = model.config();
    let temb = time_embedding(g, b, cfg, "ref", 0);
    let w = b.var(g, "ref.conv_in.w");
    let bias = b.var(g, "ref.conv_in.b");
    let mut h = g.conv2d(ref_latent, w, Some(bias), 1, 1);
    let mut out = Vec::with_capacity(LEVELS);
    for (l, te) in temb.iter().enumerate() {
        if l > 0 {
            let a = g.silu(h);
            let w = b.var(g, &format!("ref.down{}.w", l - 1));
            let bias = b.var(g, &format!("ref.down{}.b", l - 1));
            h = g.conv2d(a, w, Some(bias), 2, 1);
        }
        h = g.add_channel(h, *te);
        h = res_block(g, b, &format!("ref.enc{l}"), h);
        let tok = tokens(g, h);
        let wk = b.var(g, &format!("ref.block{l}.k.w"));
        let wv = b.var(g, &format!("ref.block{l}.v.w"));
        let k = g.linear(tok, wk, None);
        let v = g.linear(tok, wv, None);
        out.push((k, v));
    }
    out
}

/// Single-head attention of `q` `[n, tokens, d]` over shared reference
/// keys and values `[1, ref_tokens, d]`.
pub(crate) fn read_graph(g: &mut Graph, q: Var, keys: Var, values: Var) -> Var {
    g.attention(q, keys, values, 1)
}

pub(crate) fn check_latent_extent(h: usize, w: usize) -> Result<()> {
    let f = 1 << (LEVELS - 1);
    if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
        return Err(Error::invalid(format!(
            "latent extent {h}x{w} must be a positive multiple of {f}"
        )));
    }
    Ok(())
}

/// Runs the reference network on a `[4, h, w]` latent and records the keys
/// and values of every attention block.
pub fn reference_write(model: &Model, ref_latent: &Tensor) -> Result<MemoryBank> {
    let (c, h, w) = match ref_latent.shape() {
        [c, h, w] => (*c, *h, *w),
        s => {
            return Err(Error::ShapeMismatch {
                expected: vec![LATENT_CHANNELS, 0, 0],
                actual: s.to_vec(),
            })
        }
    };
    if c != LATENT_CHANNELS {
        return Err(Error::ShapeMismatch {
            expected: vec![LATENT_CHANNELS, h, w],
            actual: ref_latent.shape().to_vec(),
        });
    }
    check_latent_extent(h, w)?;
    let mut g = Graph::new();
    let mut b = Binder::new(model.params(), Trainable::None);
    let x = g.constant(ref_latent.clone().reshape(&[1, c, h, w])?);
    let kv = reference_graph(&mut g, &mut b, model, x);
    let entries = kv.into_iter().enumerate().map(|(l, (k, v))| {
        let strip = |t: &Tensor| {
            let s = t.shape();
            t.clone().reshape(&[s[1], s[2]]).expect("bank entry reshape")
        };
        (
            block_id(l),
            BankEntry {
                keys: strip(g.value(k)),
                values: strip(g.value(v)),
            },
        )
    });
    MemoryBank::from_entries(entries)
}

/// `softmax(Q K^T / sqrt(d)) V` against one bank block; `q` is `[tokens, d]`.
pub fn reference_read(q: &Tensor, bank: &MemoryBank, block: &str) -> Result<Tensor> {
    let entry = bank.get(block)?;
    let d = entry.keys.dim(1);
    let (n, qd) = match q.shape() {
        [n, qd] => (*n, *qd),
        s => {
            return Err(Error::ShapeMismatch {
                expected: vec![0, d],
                actual: s.to_vec(),
            })
        }
    };
    if qd != d {
        return Err(Error::ShapeMismatch {
            expected: vec![n, d],
            actual: q.shape().to_vec(),
        });
    }
    let tk = entry.keys.dim(0);
    let mut g = Graph::new();
    let qv = g.constant(q.clone().reshape(&[1, n, d])?);
    let kv = g.constant(entry.keys.clone().reshape(&[1, tk, d])?);
    let vv = g.constant(entry.values.clone().reshape(&[1, tk, d])?);
    let out = read_graph(&mut g, qv, kv, vv);
    g.value(out).clone().reshape(&[n, d])
}
