use serde::{Deserialize, Serialize};

use super::controls::ControlBundle;
use crate::denoiser::params::{Binder, Trainable};
use crate::denoiser::Model;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Guider outputs consumed by the denoiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSignals {
    /// `[F, base_width, h, w]`, added to the first-level feature map.
    pub p_body: Tensor,
    /// `[F, 1, normal_dim]`, one descriptor per frame.
    pub p_normal: Tensor,
}

impl GuidanceSignals {
    pub fn compute(model: &Model, controls: &ControlBundle) -> Result<Self> {
        Ok(Self {
            p_body: pose_guide(model, &controls.body, &controls.face_map)?,
            p_normal: normal_guide(model, &controls.normal)?,
        })
    }

    pub fn frames(&self) -> usize {
        self.p_body.dim(0)
    }
}

fn strided_stack(g: &mut Graph, b: &mut Binder, prefix: &str, x: Var) -> Var {
    let mut h = x;
    for i in 0..3 {
        if i > 0 {
            h = g.silu(h);
        }
        let w = b.var(g, &format!("{prefix}.conv{i}.w"));
        let bias = b.var(g, &format!("{prefix}.conv{i}.b"));
        h = g.conv2d(h, w, Some(bias), 2, 1);
    }
    h
}

/// Gated pose guider; returns `(p_body, gate)`, both `[F, C, H/8, W/8]`.
pub(crate) fn pose_graph(g: &mut Graph, b: &mut Binder, body: Var, face: Var) -> (Var, Var) {
    let x = g.concat(&[body, face], 1);
    let gw = b.var(g, "pose.gate.w");
    let gb = b.var(g, "pose.gate.b");
    let logits = g.conv2d(x, gw, Some(gb), 8, 0);
    let gate = g.sigmoid(logits);
    let features = strided_stack(g, b, "pose", x);
    (g.mul(gate, features), gate)
}

/// Normal guider: `[F, 3, H, W]` maps to `[F, normal_dim]` descriptors.
pub(crate) fn normal_graph(g: &mut Graph, b: &mut Binder, model: &Model, normal: Var) -> Var {
    let cfg = model.config();
    let h = strided_stack(g, b, "normal", normal);
    let (f, c, hh, _) = g.value(h).dims4().expect("normal backbone output");
    let h = g.avg_pool(h, hh / cfg.normal_grid);
    let flat = g.reshape(h, &[f, c * cfg.normal_grid * cfg.normal_grid]);
    let w = b.var(g, "normal.fc.w");
    let bias = b.var(g, "normal.fc.b");
    g.linear(flat, w, Some(bias))
}

/// Residual cross-attention of `h` `[n, tokens, d]` over per-frame normal
/// descriptors `[F, normal_dim]`; every token attends over all frames.
pub(crate) fn inject_normal_graph(g: &mut Graph, b: &mut Binder, level: usize, h: Var, p_normal: Var) -> Var {
    let shape = g.shape(h).to_vec();
    let (n, t, d) = (shape[0], shape[1], shape[2]);
    let frames = g.shape(p_normal)[0];
    let nd = g.shape(p_normal)[1];
    let a = format!("unet.attn{level}.normal");
    let wq = b.var(g, &format!("{a}.q.w"));
    let wk = b.var(g, &format!("{a}.k.w"));
    let wv = b.var(g, &format!("{a}.v.w"));
    let q = g.linear(h, wq, None);
    let q = g.reshape(q, &[1, n * t, d]);
    let desc = g.reshape(p_normal, &[1, frames, nd]);
    let k = g.linear(desc, wk, None);
    let v = g.linear(desc, wv, None);
    let att = g.attention(q, k, v, 1);
    let att = g.reshape(att, &[n, t, d]);
    g.add(h, att)
}

fn check_maps(name: &str, t: &Tensor) -> Result<(usize, usize, usize)> {
    let (f, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::invalid(format!("{name} needs 3 channels, got {c}")));
    }
    if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
        return Err(Error::invalid(format!(
            "{name} extent {h}x{w} must be a positive multiple of 8"
        )));
    }
    Ok((f, h, w))
}

/// `p_body = sigmoid(Conv([S, H])) * Backbone([S, H])`.
pub fn pose_guide(model: &Model, body: &Tensor, face_map: &Tensor) -> Result<Tensor> {
    pose_guide_with_gate(model, body, face_map).map(|(p, _)| p)
}

/// [`pose_guide`] that also returns the gate.
pub fn pose_guide_with_gate(model: &Model, body: &Tensor, face_map: &Tensor) -> Result<(Tensor, Tensor)> {
    let (fb, hb, wb) = check_maps("body map", body)?;
    let (ff, hf, wf) = check_maps("face map", face_map)?;
    if fb != ff {
        return Err(Error::invalid(format!(
            "body map has {fb} frames but face map has {ff}"
        )));
    }
    if (hb, wb) != (hf, wf) {
        return Err(Error::ShapeMismatch {
            expected: body.shape().to_vec(),
            actual: face_map.shape().to_vec(),
        });
    }
    let mut g = Graph::new();
    let mut b = Binder::new(model.params(), Trainable::None);
    let s = g.constant(body.clone());
    let f = g.constant(face_map.clone());
    let (p, gate) = pose_graph(&mut g, &mut b, s, f);
    Ok((g.value(p).clone(), g.value(gate).clone()))
}

/// Per-frame normal descriptors, `[F, 1, normal_dim]`.
pub fn normal_guide(model: &Model, normal: &Tensor) -> Result<Tensor> {
    let (f, h, w) = check_maps("normal map", normal)?;
    let grid = model.config().normal_grid;
    let (lh, lw) = (h / 8, w / 8);
    if lh != lw || lh % grid != 0 {
        return Err(Error::invalid(format!(
            "normal map {h}x{w} cannot be pooled to a {grid}x{grid} grid"
        )));
    }
    let mut g = Graph::new();
    let mut b = Binder::new(model.params(), Trainable::None);
    let n = g.constant(normal.clone());
    let out = normal_graph(&mut g, &mut b, model, n);
    g.value(out).clone().reshape(&[f, 1, model.config().normal_dim])
}

/// `h' = Attn(h, p_normal, p_normal) + h` at one resolution level, for
/// tokens `h` `[tokens, d]` and descriptors `[F, 1, normal_dim]`.
pub fn inject_normal(model: &Model, level: usize, h: &Tensor, p_normal: &Tensor) -> Result<Tensor> {
    let cfg = model.config();
    let d = cfg.width(level);
    let (t, hd) = match h.shape() {
        [t, hd] => (*t, *hd),
        s => {
            return Err(Error::ShapeMismatch {
                expected: vec![0, d],
                actual: s.to_vec(),
            })
        }
    };
    if hd != d {
        return Err(Error::ShapeMismatch {
            expected: vec![t, d],
            actual: h.shape().to_vec(),
        });
    }
    let (f, nd) = match p_normal.shape() {
        [f, 1, nd] => (*f, *nd),
        s => {
            return Err(Error::ShapeMismatch {
                expected: vec![0, 1, cfg.normal_dim],
                actual: s.to_vec(),
            })
        }
    };
    if nd != cfg.normal_dim {
        return Err(Error::ShapeMismatch {
            expected: vec![f, 1, cfg.normal_dim],
            actual: p_normal.shape().to_vec(),
        });
    }
    let mut g = Graph::new();
    let mut b = Binder::new(model.params(), Trainable::None);
    let hv = g.constant(h.clone().reshape(&[1, t, d])?);
    let pv = g.constant(p_normal.clone().reshape(&[f, nd])?);
    let out = inject_normal_graph(&mut g, &mut b, level, hv, pv);
    g.value(out).clone().reshape(&[t, d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::params::NetworkConfig;
    use crate::kernels::{sigmoid, silu};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> Model {
        Model::new(NetworkConfig {
            base_width: 8,
            normal_dim: 16,
            ..NetworkConfig::default()
        })
        .unwrap()
    }

    fn maps(seed: u64, f: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(&[f, 3, 32, 32], &mut rng)
    }

    fn set_gate(model: &mut Model, bias: f64) {
        let p = model.params_mut();
        p.get_mut("pose.gate.w").unwrap().value.data_mut().fill(0.0);
        p.get_mut("pose.gate.b").unwrap().value.data_mut().fill(bias);
    }

    #[test]
    fn closed_gate_suppresses_features() {
        let mut m = model();
        set_gate(&mut m, -30.0);
        let p = pose_guide(&m, &maps(1, 2), &maps(2, 2)).unwrap();
        assert_eq!(p.shape(), &[2, 8, 4, 4]);
        assert!(p.max_abs() < 1e-9);
    }

    #[test]
    fn open_gate_passes_backbone() {
        let mut m = model();
        set_gate(&mut m, 30.0);
        let (s, h) = (maps(1, 2), maps(2, 2));
        let (p, gate) = pose_guide_with_gate(&m, &s, &h).unwrap();
        let backbone = p.zip_map(&gate, |a, g| a / g).unwrap();
        assert!(p.max_abs_diff(&backbone) < 1e-9);
    }

    /// Direct loops for a stride-2, pad-1, 3x3 convolution.
    fn conv_s2(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
        let (n, c, h, wd) = x.dims4().unwrap();
        let o = w.dim(0);
        let (oh, ow) = (h / 2, wd / 2);
        Tensor::from_fn(&[n, o, oh, ow], |idx| {
            let (ni, oi, y, xx) = (idx / (o * oh * ow), (idx / (oh * ow)) % o, (idx / ow) % oh, idx % ow);
            let mut s = b.data()[oi];
            for ci in 0..c {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = (2 * y + ky) as isize - 1;
                        let ix = (2 * xx + kx) as isize - 1;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            s += w.data()[((oi * c + ci) * 3 + ky) * 3 + kx]
                                * x.data()[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                        }
                    }
                }
            }
            s
        })
    }

    #[test]
    fn pose_guide_matches_two_path_oracle() {
        let m = model();
        let (s, h) = (maps(3, 1), maps(4, 1));
        let p = m.params();
        let x = Tensor::concat(&[&s, &h], 1).unwrap();
        // gate: stride-8 patch convolution, then sigmoid
        let gw = p.tensor("pose.gate.w").unwrap();
        let gb = p.tensor("pose.gate.b").unwrap();
        let gate = Tensor::from_fn(&[1, 8, 4, 4], |idx| {
            let (o, y, xx) = (idx / 16, (idx / 4) % 4, idx % 4);
            let mut acc = gb.data()[o];
            for c in 0..6 {
                for ky in 0..8 {
                    for kx in 0..8 {
                        acc += gw.data()[((o * 6 + c) * 8 + ky) * 8 + kx]
                            * x.data()[(c * 32 + 8 * y + ky) * 32 + 8 * xx + kx];
                    }
                }
            }
            sigmoid(acc)
        });
        let mut f = x.clone();
        for i in 0..3 {
            if i > 0 {
                f = f.map(silu);
            }
            f = conv_s2(
                &f,
                p.tensor(&format!("pose.conv{i}.w")).unwrap(),
                p.tensor(&format!("pose.conv{i}.b")).unwrap(),
            );
        }
        let expect = gate.zip_map(&f, |a, b| a * b).unwrap();
        let got = pose_guide(&m, &s, &h).unwrap();
        assert!(got.max_abs_diff(&expect) < 1e-6);
        let (_, gate_out) = pose_guide_with_gate(&m, &s, &h).unwrap();
        assert!(gate_out.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn pose_guide_rejects_frame_mismatch() {
        assert!(pose_guide(&model(), &maps(1, 2), &maps(2, 3)).is_err());
    }

    #[test]
    fn normal_guide_bias_only() {
        let mut m = model();
        let bias = Tensor::from_fn(&[16], |i| i as f64);
        m.params_mut().get_mut("normal.fc.w").unwrap().value.data_mut().fill(0.0);
        m.params_mut().get_mut("normal.fc.b").unwrap().value = bias.clone();
        let d = normal_guide(&m, &maps(5, 3)).unwrap();
        assert_eq!(d.shape(), &[3, 1, 16]);
        for row in d.data().chunks(16) {
            assert_eq!(row, bias.data());
        }
    }

    #[test]
    fn normal_guide_is_per_frame() {
        let m = model();
        let one = maps(6, 1);
        let four = Tensor::concat(&[&one, &one, &one, &one], 0).unwrap();
        let a = normal_guide(&m, &one).unwrap();
        let b = normal_guide(&m, &four).unwrap();
        for row in b.data().chunks(16) {
            assert_eq!(row, a.data());
        }
    }

    #[test]
    fn normal_guide_matches_flatten_matmul_oracle() {
        let m = model();
        let n = maps(7, 1);
        let p = m.params();
        let mut f = n.clone();
        for i in 0..3 {
            if i > 0 {
                f = f.map(silu);
            }
            f = conv_s2(
                &f,
                p.tensor(&format!("normal.conv{i}.w")).unwrap(),
                p.tensor(&format!("normal.conv{i}.b")).unwrap(),
            );
        }
        // 32x32 input: the backbone already lands on the 4x4 grid
        assert_eq!(f.shape(), &[1, 16, 4, 4]);
        let w = p.tensor("normal.fc.w").unwrap();
        let b = p.tensor("normal.fc.b").unwrap();
        let got = normal_guide(&m, &n).unwrap();
        for j in 0..16 {
            let e = b.data()[j] + (0..256).map(|i| f.data()[i] * w.data()[i * 16 + j]).sum::<f64>();
            assert!((got.data()[j] - e).abs() < 1e-6);
        }
    }

    #[test]
    fn normal_guide_rejects_empty_maps() {
        assert!(normal_guide(&model(), &Tensor::zeros(&[1, 3, 0, 0])).is_err());
    }

    #[test]
    fn zero_value_projection_is_identity() {
        let mut m = model();
        m.params_mut().get_mut("unet.attn0.normal.v.w").unwrap().value.data_mut().fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = Tensor::randn(&[5, 8], &mut rng);
        let d = Tensor::randn(&[3, 1, 16], &mut rng);
        assert_eq!(inject_normal(&m, 0, &h, &d).unwrap(), h);
        assert_eq!(inject_normal(&m, 0, &h, &Tensor::zeros(&[3, 1, 16])).unwrap(), h);
    }

    #[test]
    fn single_descriptor_adds_its_value() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = Tensor::randn(&[4, 8], &mut rng);
        let d = Tensor::randn(&[1, 1, 16], &mut rng);
        let wv = m.params().tensor("unet.attn0.normal.v.w").unwrap();
        let value: Vec<f64> = (0..8).map(|j| (0..16).map(|i| d.data()[i] * wv.data()[i * 8 + j]).sum()).collect();
        let out = inject_normal(&m, 0, &h, &d).unwrap();
        for (r, row) in out.data().chunks(8).enumerate() {
            for j in 0..8 {
                assert!((row[j] - h.data()[r * 8 + j] - value[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn injection_matches_attention_oracle() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = Tensor::randn(&[3, 8], &mut rng);
        let d = Tensor::randn(&[4, 1, 16], &mut rng);
        let p = m.params();
        let proj = |x: &[f64], w: &Tensor, inp: usize| -> Vec<f64> {
            (0..8).map(|j| (0..inp).map(|i| x[i] * w.data()[i * 8 + j]).sum()).collect()
        };
        let wq = p.tensor("unet.attn0.normal.q.w").unwrap();
        let wk = p.tensor("unet.attn0.normal.k.w").unwrap();
        let wv = p.tensor("unet.attn0.normal.v.w").unwrap();
        let keys: Vec<Vec<f64>> = d.data().chunks(16).map(|r| proj(r, wk, 16)).collect();
        let vals: Vec<Vec<f64>> = d.data().chunks(16).map(|r| proj(r, wv, 16)).collect();
        let out = inject_normal(&m, 0, &h, &d).unwrap();
        for (r, row) in h.data().chunks(8).enumerate() {
            let q = proj(row, wq, 8);
            let s: Vec<f64> = keys
                .iter()
                .map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / 8f64.sqrt())
                .collect();
            let z: f64 = s.iter().map(|v| v.exp()).sum();
            for j in 0..8 {
                let a: f64 = (0..4).map(|f| s[f].exp() / z * vals[f][j]).sum();
                assert!((out.data()[r * 8 + j] - row[j] - a).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn injection_width_mismatch() {
        let m = model();
        assert!(inject_normal(&m, 1, &Tensor::zeros(&[2, 8]), &Tensor::zeros(&[1, 1, 16])).is_err());
        assert!(inject_normal(&m, 0, &Tensor::zeros(&[2, 8]), &Tensor::zeros(&[1, 1, 15])).is_err());
    }
}
