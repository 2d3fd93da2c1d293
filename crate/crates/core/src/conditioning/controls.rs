use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Body,
    Face,
    Normal,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Body, Modality::Face, Modality::Normal];
}

/// Per-frame control maps, each `[F, 3, H, W]`, with presence flags.
///
/// A dropped modality is all zeros with its flag cleared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlBundle {
    pub body: Tensor,
    pub face_map: Tensor,
    pub normal: Tensor,
    pub present_body: bool,
    pub present_face: bool,
    pub present_normal: bool,
}

impl ControlBundle {
    pub fn new(body: Tensor, face_map: Tensor, normal: Tensor) -> Result<Self> {
        let (_, c, _, _) = body.dims4()?;
        if c != 3 {
            return Err(Error::invalid(format!("control maps need 3 channels, got {c}")));
        }
        face_map.ensure_same_shape(&body)?;
        normal.ensure_same_shape(&body)?;
        Ok(Self {
            body,
            face_map,
            normal,
            present_body: true,
            present_face: true,
            present_normal: true,
        })
    }

    pub fn frames(&self) -> usize {
        self.body.dim(0)
    }

    pub fn height(&self) -> usize {
        self.body.dim(2)
    }

    pub fn width(&self) -> usize {
        self.body.dim(3)
    }

    pub fn map(&self, m: Modality) -> &Tensor {
        match m {
            Modality::Body => &self.body,
            Modality::Face => &self.face_map,
            Modality::Normal => &self.normal,
        }
    }

    pub fn present(&self, m: Modality) -> bool {
        match m {
            Modality::Body => self.present_body,
            Modality::Face => self.present_face,
            Modality::Normal => self.present_normal,
        }
    }

    /// Zeroes one modality and clears its flag.
    pub fn drop_modality(&mut self, m: Modality) {
        let (t, flag) = match m {
            Modality::Body => (&mut self.body, &mut self.present_body),
            Modality::Face => (&mut self.face_map, &mut self.present_face),
            Modality::Normal => (&mut self.normal, &mut self.present_normal),
        };
        t.data_mut().fill(0.0);
        *flag = false;
    }

    /// Reorders frames: output frame `i` is input frame `order[i]`.
    pub fn reorder_frames(&self, order: &[usize]) -> Result<Self> {
        let f = self.frames();
        if order.len() != f || order.iter().any(|&i| i >= f) {
            return Err(Error::invalid(format!("frame order {order:?} invalid for {f} frames")));
        }
        Ok(Self {
            body: self.body.select_rows(order),
            face_map: self.face_map.select_rows(order),
            normal: self.normal.select_rows(order),
            present_body: self.present_body,
            present_face: self.present_face,
            present_normal: self.present_normal,
        })
    }

    /// Frames `[start, start + len)`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        Ok(Self {
            body: self.body.narrow(0, start, len)?,
            face_map: self.face_map.narrow(0, start, len)?,
            normal: self.normal.narrow(0, start, len)?,
            present_body: self.present_body,
            present_face: self.present_face,
            present_normal: self.present_normal,
        })
    }
}

/// Independently drops each modality with probability `p_each`.
///
/// Exactly three uniforms are drawn per call, in body, face, normal order,
/// so the rng stream does not depend on the outcome.
pub fn drop_controls<R: Rng + ?Sized>(bundle: &ControlBundle, rng: &mut R, p_each: f64) -> Result<ControlBundle> {
    if !(0.0..=1.0).contains(&p_each) {
        return Err(Error::invalid(format!("drop probability {p_each} outside [0, 1]")));
    }
    let mut out = bundle.clone();
    for m in Modality::ALL {
        let u: f64 = rng.random();
        if u < p_each {
            out.drop_modality(m);
        }
    }
    Ok(out)
}
