use serde::{Deserialize, Serialize};

use crate::denoiser::params::{Binder, Trainable};
use crate::denoiser::Model;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Semantic embedding of a reference image and its projected context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppearanceEmbedding {
    pub c_clip: Tensor,
    pub c_proj: Tensor,
}

impl AppearanceEmbedding {
    pub fn compute(model: &Model, embedder: &dyn ImageEmbedder, image: &Tensor) -> Result<Self> {
        let c_clip = embedder.embed(image)?;
        let c_proj = project_appearance(model, &c_clip)?;
        Ok(Self { c_clip, c_proj })
    }
}

/// Pluggable image-level semantic embedder (the slot a pretrained vision
/// encoder would fill).
pub trait ImageEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    /// `[3, H, W]` image to a `[dim]` vector.
    fn embed(&self, image: &Tensor) -> Result<Tensor>;
}

/// Average colour over a `grid x grid` partition of the image, centred on
/// mid-grey.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridColorEmbedder {
    pub grid: usize,
}

impl Default for GridColorEmbedder {
    fn default() -> Self {
        Self { grid: 4 }
    }
}

impl ImageEmbedder for GridColorEmbedder {
    fn dim(&self) -> usize {
        3 * self.grid * self.grid
    }

    fn embed(&self, image: &Tensor) -> Result<Tensor> {
        let (h, w) = match image.shape() {
            [3, h, w] => (*h, *w),
            s => {
                return Err(Error::ShapeMismatch {
                    expected: vec![3, 0, 0],
                    actual: s.to_vec(),
                })
            }
        };
        let g = self.grid;
        if g == 0 || h % g != 0 || w % g != 0 {
            return Err(Error::invalid(format!("image {h}x{w} not divisible into a {g}x{g} grid")));
        }
        let (ch, cw) = (h / g, w / g);
        let norm = 1.0 / (ch * cw) as f64;
        let mut out = vec![-0.5; 3 * g * g];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    out[(c * g + y / ch) * g + x / cw] += image.data()[(c * h + y) * w + x] * norm;
                }
            }
        }
        Tensor::new(vec![3 * g * g], out)
    }
}

/// Residual GEGLU feed-forward plus a linear skip, `[1, clip] -> [1, ctx]`.
pub(crate) fn projector_graph(g: &mut Graph, b: &mut Binder, c_clip: Var) -> Var {
    let w1 = b.var(g, "proj.ffn.w1.w");
    let b1 = b.var(g, "proj.ffn.w1.b");
    let hidden2 = g.shape(w1)[1];
    let h = g.linear(c_clip, w1, Some(b1));
    let value = g.narrow(h, 1, 0, hidden2 / 2);
    let gate = g.narrow(h, 1, hidden2 / 2, hidden2 / 2);
    let gate = g.gelu(gate);
    let act = g.mul(value, gate);
    let w2 = b.var(g, "proj.ffn.w2.w");
    let b2 = b.var(g, "proj.ffn.w2.b");
    let ffn = g.linear(act, w2, Some(b2));
    let ws = b.var(g, "proj.skip.w");
    let skip = g.linear(c_clip, ws, None);
    g.add(ffn, skip)
}

/// `c_proj = FFN(c_clip) + W c_clip` for a `[clip_dim]` vector.
pub fn project_appearance(model: &Model, c_clip: &Tensor) -> Result<Tensor> {
    let dim = model.config().clip_dim;
    if c_clip.shape() != [dim] {
        return Err(Error::ShapeMismatch {
            expected: vec![dim],
            actual: c_clip.shape().to_vec(),
        });
    }
    let mut g = Graph::new();
    let mut b = Binder::new(model.params(), Trainable::None);
    let x = g.constant(c_clip.clone().reshape(&[1, dim])?);
    let out = projector_graph(&mut g, &mut b, x);
    g.value(out).clone().reshape(&[model.config().context_dim])
}
