use std::collections::BTreeMap;

use super::data::PreparedSample;
use crate::conditioning::{normal_graph, pose_graph, projector_graph, reference_graph};
use crate::denoiser::network::{unet_graph, CondVars};
use crate::denoiser::params::{Binder, Trainable};
use crate::denoiser::{check_frames, Model};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

/// Per-example intermediates of one step.
#[derive(Clone, Debug)]
pub struct SampleTrace {
    pub t: usize,
    pub weight: f64,
    pub mse: f64,
    pub v_pred: Tensor,
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    /// `sum_i w_i mse_i / batch`.
    pub loss: f64,
    pub grads: BTreeMap<String, Tensor>,
    pub traces: Vec<SampleTrace>,
}

/// Forward and backward pass over a batch: the min-SNR-weighted velocity
/// MSE, averaged over the batch, with gradients for the `trainable` group.
pub fn training_step(model: &Model, batch: &[PreparedSample], trainable: Trainable) -> Result<StepOutput> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let cfg = model.config();
    let mut g = Graph::new();
    let mut b = Binder::new(model.params(), trainable);
    let mut terms = Vec::with_capacity(batch.len());
    let mut preds = Vec::with_capacity(batch.len());
    let mut mses = Vec::with_capacity(batch.len());
    for s in batch {
        let (f, _, h, w) = s.input.data().dims4()?;
        check_frames(cfg, f, s.mode)?;
        crate::conditioning::check_latent_extent(h, w)?;
        s.v_target.ensure_shape(&[f, 4, h, w])?;
        s.ref_latent.ensure_shape(&[4, h, w])?;
        s.c_clip.ensure_shape(&[cfg.clip_dim])?;
        if s.controls.frames() != f || s.controls.height() != 8 * h || s.controls.width() != 8 * w {
            return Err(Error::invalid(format!(
                "controls {:?} do not match a {f}-frame {h}x{w} latent",
                s.controls.body.shape()
            )));
        }

        let r = g.constant(s.ref_latent.clone().reshape(&[1, 4, h, w])?);
        let bank = reference_graph(&mut g, &mut b, model, r);
        let clip = g.constant(s.c_clip.clone().reshape(&[1, cfg.clip_dim])?);
        let c_proj = projector_graph(&mut g, &mut b, clip);
        let c_proj = g.reshape(c_proj, &[1, 1, cfg.context_dim]);
        let body = g.constant(s.controls.body.clone());
        let face = g.constant(s.controls.face_map.clone());
        let (p_body, _) = pose_graph(&mut g, &mut b, body, face);
        let normal = g.constant(s.controls.normal.clone());
        let p_normal = normal_graph(&mut g, &mut b, model, normal);
        let cond = CondVars {
            bank: &bank,
            c_proj,
            p_body,
            p_normal,
        };
        let x = g.constant(s.input.data().clone());
        let v = unet_graph(&mut g, &mut b, model, x, &cond, s.t, s.mode);
        let target = g.constant(s.v_target.clone());
        let mse = g.mse(v, target);
        mses.push(mse);
        preds.push(v);
        terms.push(g.scale(mse, s.weight / batch.len() as f64));
    }
    let mut loss = terms[0];
    for &t in &terms[1..] {
        loss = g.add(loss, t);
    }
    let loss_value = g.value(loss).data()[0];
    let traces = batch
        .iter()
        .zip(preds.iter().zip(&mses))
        .map(|(s, (&v, &m))| SampleTrace {
            t: s.t,
            weight: s.weight,
            mse: g.value(m).data()[0],
            v_pred: g.value(v).clone(),
        })
        .collect::<Vec<_>>();
    if !loss_value.is_finite() {
        let worst = traces.iter().find(|tr| !tr.mse.is_finite()).unwrap_or(&traces[0]);
        return Err(Error::NonFiniteLoss {
            step: 0,
            t: worst.t,
            weight: worst.weight,
            loss: loss_value,
        });
    }
    let mut grads_all = g.backward(loss);
    let grads = b
        .trainable_vars()
        .into_iter()
        .map(|(name, v)| {
            let grad = grads_all
                .take(v)
                .unwrap_or_else(|| Tensor::zeros(model.params().get(&name).unwrap().value.shape()));
            (name, grad)
        })
        .collect();
    Ok(StepOutput {
        loss: loss_value,
        grads,
        traces,
    })
}
