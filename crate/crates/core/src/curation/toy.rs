//! Procedural stick-figure videos with aligned control maps.
//!
//! Each video shows one articulated figure over a static background plate.
//! The synthetic domain renders flat colours on a flat plate; the real
//! domain adds shading, a textured plate and per-frame sensor noise.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::manifest::{ControlLocators, Domain, Manifest, ManifestEntry, VideoSample, MANIFEST_SCHEMA};
use super::media::{quantize, write_frames, write_png};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionFamily {
    Wave,
    Dance,
    Talk,
}

impl MotionFamily {
    pub const ALL: [MotionFamily; 3] = [MotionFamily::Wave, MotionFamily::Dance, MotionFamily::Talk];
}

fn default_frames() -> usize {
    16
}

fn default_extent() -> usize {
    32
}

fn default_identities() -> u32 {
    4
}

/// What to render.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySpec {
    pub count: usize,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_extent")]
    pub height: usize,
    #[serde(default = "default_extent")]
    pub width: usize,
    pub domain: Domain,
    /// Fixed motion family; cycles through all families when absent.
    #[serde(default)]
    pub motion: Option<MotionFamily>,
    /// Number of distinct figure identities; video `i` uses identity
    /// `identity_offset + i % identities`.
    #[serde(default = "default_identities")]
    pub identities: u32,
    #[serde(default)]
    pub identity_offset: u32,
    /// Id prefix; defaults to the domain name.
    #[serde(default)]
    pub id_prefix: Option<String>,
}

impl ToySpec {
    pub fn new(count: usize, domain: Domain) -> Self {
        Self {
            count,
            frames: default_frames(),
            height: default_extent(),
            width: default_extent(),
            domain,
            motion: None,
            identities: default_identities(),
            identity_offset: 0,
            id_prefix: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::invalid("toy videos need at least one frame"));
        }
        for (name, v) in [("height", self.height), ("width", self.width)] {
            if v == 0 || v % 8 != 0 {
                return Err(Error::invalid(format!("{name} {v} must be a positive multiple of 8")));
            }
        }
        if self.identities == 0 {
            return Err(Error::invalid("identities must be positive"));
        }
        Ok(())
    }

    pub fn id(&self, index: usize) -> String {
        let prefix = self.id_prefix.clone().unwrap_or_else(|| match self.domain {
            Domain::Real => "real".into(),
            Domain::Synthetic => "syn".into(),
        });
        format!("{prefix}-{index:05}")
    }

    pub fn identity(&self, index: usize) -> u32 {
        self.identity_offset + (index as u32) % self.identities
    }

    pub fn motion(&self, index: usize) -> MotionFamily {
        self.motion.unwrap_or(MotionFamily::ALL[index % 3])
    }
}

/// Fixed colours and proportions of one toy identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Look {
    pub skin: [f64; 3],
    pub hair: [f64; 3],
    pub shirt: [f64; 3],
    pub pants: [f64; 3],
    pub scale: f64,
}

impl Look {
    pub fn of(identity: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x1d00_0000 + identity as u64);
        let mut colour = || [0; 3].map(|_: i32| rng.random_range(0.1..0.95));
        let skin = colour();
        let hair = colour();
        let shirt = colour();
        let pants = colour();
        let scale = rng.random_range(0.9..1.1);
        Self {
            skin,
            hair,
            shirt,
            pants,
            scale,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Part {
    Torso,
    UpperArm(usize),
    Forearm(usize),
    Thigh(usize),
    Shin(usize),
}

struct Segment {
    a: (f64, f64),
    b: (f64, f64),
    r: f64,
    part: Part,
}

struct Pose {
    head: (f64, f64),
    head_r: f64,
    mouth: f64,
    segments: Vec<Segment>,
}

fn polar(from: (f64, f64), angle: f64, len: f64) -> (f64, f64) {
    (from.0 + len * angle.cos(), from.1 + len * angle.sin())
}

/// Per-video motion parameters.
struct Motion {
    family: MotionFamily,
    omega: f64,
    phase: f64,
    amp: f64,
}

impl Motion {
    fn pose(&self, look: &Look, frame: usize) -> Pose {
        let s = look.scale;
        let phi = self.omega * frame as f64 + self.phase;
        let a = self.amp;
        let (dx, nod, mouth, arms, legs) = match self.family {
            MotionFamily::Wave => (
                0.02 * (phi / 2.0).sin(),
                0.0,
                0.2,
                [
                    (PI / 2.0 + 0.35, 0.1),
                    (-PI / 2.0 - 0.6 + 0.5 * a * phi.sin(), -0.5 + 0.7 * a * phi.sin()),
                ],
                [PI / 2.0 + 0.15, PI / 2.0 - 0.15],
            ),
            MotionFamily::Dance => (
                0.05 * a * phi.sin(),
                0.0,
                0.3,
                [
                    (PI - 0.7 - 0.6 * a * phi.sin(), -0.6),
                    (0.7 - 0.6 * a * (phi + PI).sin(), 0.6),
                ],
                [
                    PI / 2.0 + 0.25 + 0.2 * a * phi.sin(),
                    PI / 2.0 - 0.25 + 0.2 * a * phi.sin(),
                ],
            ),
            MotionFamily::Talk => (
                0.0,
                0.012 * (2.0 * phi).sin(),
                0.5 + 0.5 * (2.0 * phi).sin(),
                [
                    (PI / 2.0 + 0.3 + 0.1 * a * phi.sin(), 0.5),
                    (PI / 2.0 - 0.3 - 0.1 * a * phi.cos(), -0.5),
                ],
                [PI / 2.0 + 0.12, PI / 2.0 - 0.12],
            ),
        };
        let hip = (0.5 + dx, 0.62);
        let neck = (hip.0, hip.1 - 0.26 * s);
        let head = (neck.0, neck.1 - 0.11 * s + nod);
        let mut segments = vec![Segment {
            a: neck,
            b: hip,
            r: 0.06 * s,
            part: Part::Torso,
        }];
        for (side, &(upper, bend)) in arms.iter().enumerate() {
            let elbow = polar(neck, upper, 0.14 * s);
            let hand = polar(elbow, upper + bend, 0.13 * s);
            segments.push(Segment {
                a: neck,
                b: elbow,
                r: 0.032 * s,
                part: Part::UpperArm(side),
            });
            segments.push(Segment {
                a: elbow,
                b: hand,
                r: 0.028 * s,
                part: Part::Forearm(side),
            });
        }
        for (side, &angle) in legs.iter().enumerate() {
            let knee = polar(hip, angle, 0.16 * s);
            let foot = polar(knee, PI / 2.0 + 0.5 * (angle - PI / 2.0), 0.16 * s);
            segments.push(Segment {
                a: hip,
                b: knee,
                r: 0.038 * s,
                part: Part::Thigh(side),
            });
            segments.push(Segment {
                a: knee,
                b: foot,
                r: 0.032 * s,
                part: Part::Shin(side),
            });
        }
        Pose {
            head,
            head_r: 0.085 * s,
            mouth,
            segments,
        }
    }
}

/// Offset from the nearest point of segment `ab` to `p`.
fn offset_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    };
    (p.0 - (a.0 + t * vx), p.1 - (a.1 + t * vy))
}

fn skeleton_colour(part: Part) -> [f64; 3] {
    match part {
        Part::Torso => [1.0, 1.0, 1.0],
        Part::UpperArm(0) | Part::Forearm(0) => [1.0, 0.0, 0.0],
        Part::UpperArm(_) | Part::Forearm(_) => [0.0, 1.0, 0.0],
        Part::Thigh(0) | Part::Shin(0) => [0.0, 0.0, 1.0],
        Part::Thigh(_) | Part::Shin(_) => [1.0, 1.0, 0.0],
    }
}

fn clothing(look: &Look, part: Part) -> [f64; 3] {
    match part {
        Part::Torso | Part::UpperArm(_) => look.shirt,
        Part::Forearm(_) => look.skin,
        Part::Thigh(_) | Part::Shin(_) => look.pants,
    }
}

/// Static plate: flat two-tone for synthetic, gradient plus texture and
/// grain for real.
fn background(domain: Domain, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let base: [f64; 3] = [0; 3].map(|_: i32| rng.random_range(0.2..0.8));
    let floor = (rng.random_range(0.7..0.85) * h as f64) as usize;
    match domain {
        Domain::Synthetic => Tensor::from_fn(&[3, h, w], |i| {
            let (c, y) = (i / (h * w), (i / w) % h);
            if y >= floor {
                base[c] * 0.7
            } else {
                base[c]
            }
        }),
        Domain::Real => {
            let waves: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| (rng.random_range(0.5..3.0), rng.random_range(0.5..3.0), rng.random_range(0.0..2.0 * PI)))
                .collect();
            let grain = Tensor::randn(&[3, h, w], rng);
            Tensor::from_fn(&[3, h, w], |i| {
                let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
                let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
                let tex: f64 = waves
                    .iter()
                    .map(|&(fx, fy, p)| (2.0 * PI * (fx * u + fy * v) + p + c as f64).sin())
                    .sum::<f64>()
                    / 3.0;
                let shade = if y >= floor { 0.7 } else { 1.0 };
                (base[c] * shade * (0.85 + 0.3 * v) + 0.06 * tex + 0.04 * grain.data()[i]).clamp(0.0, 1.0)
            })
        }
    }
}

/// Renders video `index` of `spec` under `seed`; values are already on the
/// 8-bit grid.
pub fn render_toy_video(spec: &ToySpec, seed: u64, index: usize) -> Result<VideoSample> {
    spec.validate()?;
    let (f, h, w) = (spec.frames, spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let look = Look::of(spec.identity(index));
    let motion = Motion {
        family: spec.motion(index),
        omega: 2.0 * PI * rng.random_range(0.8..1.6) / 16.0,
        phase: rng.random_range(0.0..2.0 * PI),
        amp: rng.random_range(0.7..1.0),
    };
    let plate = background(spec.domain, h, w, &mut rng);
    let real = spec.domain == Domain::Real;
    let light: (f64, f64) = (rng.random_range(-0.4..0.4), rng.random_range(-0.5..0.0));

    let plane = h * w;
    let mut frames = vec![0.0; f * 3 * plane];
    let mut body = vec![0.0; f * 3 * plane];
    let mut face = vec![0.0; f * 3 * plane];
    let mut normal = vec![0.0; f * 3 * plane];
    let mut mask = vec![0.0; f * 3 * plane];
    let line = 0.6 / w.min(h) as f64;

    for fi in 0..f {
        let pose = motion.pose(&look, fi);
        let base = fi * 3 * plane;
        for y in 0..h {
            for x in 0..w {
                let p = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
                let px = y * w + x;
                let set = |buf: &mut [f64], rgb: [f64; 3]| {
                    for c in 0..3 {
                        buf[base + c * plane + px] = rgb[c];
                    }
                };

                // skeleton lines
                for s in &pose.segments {
                    let (ox, oy) = offset_to_segment(p, s.a, s.b);
                    if (ox * ox + oy * oy).sqrt() < line.max(0.2 * s.r) {
                        set(&mut body, skeleton_colour(s.part));
                    }
                }

                // surface hit: head first, then the front-most limb
                let (hx, hy) = ((p.0 - pose.head.0) / pose.head_r, (p.1 - pose.head.1) / pose.head_r);
                let hd2 = hx * hx + hy * hy;
                let hit = if hd2 < 1.0 {
                    Some(((hx, hy, (1.0 - hd2).sqrt()), None))
                } else {
                    pose.segments
                        .iter()
                        .filter_map(|s| {
                            let (ox, oy) = offset_to_segment(p, s.a, s.b);
                            let d2 = (ox * ox + oy * oy) / (s.r * s.r);
                            (d2 < 1.0).then(|| ((ox / s.r, oy / s.r, (1.0 - d2).sqrt()), Some(s.part)))
                        })
                        .max_by(|a, b| a.0 .2.total_cmp(&b.0 .2))
                };
                let Some((n, part)) = hit else {
                    for c in 0..3 {
                        frames[base + c * plane + px] = plate.data()[c * plane + px];
                    }
                    continue;
                };
                set(&mut mask, [1.0; 3]);
                set(&mut normal, [0.5 + 0.5 * n.0, 0.5 + 0.5 * n.1, 0.5 + 0.5 * n.2]);
                let mut colour = match part {
                    Some(part) => clothing(&look, part),
                    None => {
                        let eye = ((hx.abs() - 0.4).powi(2) + (hy + 0.15).powi(2)) < 0.04;
                        let mouth_h = 0.08 + 0.25 * pose.mouth;
                        let mouth = (hx / 0.4).powi(2) + ((hy - 0.45) / mouth_h).powi(2) < 1.0;
                        let mut fc = [1.0, 0.5 + 0.5 * hx, 0.5 + 0.5 * hy];
                        if eye {
                            fc = [0.0, 0.0, 0.0];
                        } else if mouth {
                            fc = [0.0, 0.0, 1.0];
                        }
                        set(&mut face, fc);
                        if hy < -0.45 {
                            look.hair
                        } else if eye || mouth {
                            look.skin.map(|v| v * 0.35)
                        } else {
                            look.skin
                        }
                    }
                };
                if real {
                    let lambert = (n.2 + light.0 * n.0 + light.1 * n.1).clamp(0.0, 1.0);
                    colour = colour.map(|v| v * (0.55 + 0.45 * lambert));
                }
                set(&mut frames, colour);
            }
        }
        if real {
            for v in &mut frames[base..base + 3 * plane] {
                let e: f64 = rng.sample(StandardNormal);
                *v = (*v + 0.03 * e).clamp(0.0, 1.0);
            }
        }
    }

    let t = |d: Vec<f64>| quantize(&Tensor::new(vec![f, 3, h, w], d).expect("toy video shape"));
    Ok(VideoSample {
        frames: t(frames),
        body: t(body),
        face: t(face),
        normal: t(normal),
        mask: t(mask),
        background: quantize(&plate),
    })
}

/// Renders every video of `spec` into `out` and writes `out/manifest.jsonl`.
pub fn generate_toy_dataset(spec: &ToySpec, seed: u64, out: &Path) -> Result<Manifest> {
    spec.validate()?;
    let mut entries = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let id = spec.id(i);
        let video = render_toy_video(spec, seed, i)?;
        let dir = out.join(&id);
        let controls = ControlLocators {
            body: dir.join("body"),
            face: dir.join("face"),
            normal: dir.join("normal"),
            mask: dir.join("mask"),
            background: dir.join("background.png"),
        };
        write_frames(&dir.join("frames"), &video.frames)?;
        write_frames(&controls.body, &video.body)?;
        write_frames(&controls.face, &video.face)?;
        write_frames(&controls.normal, &video.normal)?;
        write_frames(&controls.mask, &video.mask)?;
        write_png(&controls.background, &video.background)?;
        entries.push(ManifestEntry {
            schema: MANIFEST_SCHEMA,
            id,
            domain: spec.domain,
            locator: dir.join("frames"),
            frame_count: spec.frames,
            height: spec.height,
            width: spec.width,
            controls,
            identity: Some(spec.identity(i)),
            motion: Some(spec.motion(i)),
            embedding: None,
        });
    }
    let manifest = Manifest::new(entries)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    manifest.save(&out.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Median absolute 4-neighbour Laplacian of the luma, averaged over frames.
pub fn high_frequency_level(video: &Tensor) -> Result<f64> {
    let (f, c, h, w) = video.dims4()?;
    if c != 3 || h < 3 || w < 3 {
        return Err(Error::invalid(format!("cannot measure texture of {:?}", video.shape())));
    }
    let plane = h * w;
    let mut total = 0.0;
    for fi in 0..f {
        let d = &video.data()[fi * 3 * plane..(fi + 1) * 3 * plane];
        let luma = |y: usize, x: usize| {
            let p = y * w + x;
            0.299 * d[p] + 0.587 * d[plane + p] + 0.114 * d[2 * plane + p]
        };
        let mut lap = Vec::with_capacity((h - 2) * (w - 2));
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let v = 4.0 * luma(y, x) - luma(y - 1, x) - luma(y + 1, x) - luma(y, x - 1) - luma(y, x + 1);
                lap.push(v.abs());
            }
        }
        lap.sort_by(f64::total_cmp);
        total += lap[lap.len() / 2];
    }
    Ok(total / f as f64)
}

/// Threshold on [`high_frequency_level`] separating the two toy domains.
pub const DOMAIN_THRESHOLD: f64 = 0.03;

pub fn classify_domain(video: &Tensor) -> Result<Domain> {
    Ok(if high_frequency_level(video)? > DOMAIN_THRESHOLD {
        Domain::Real
    } else {
        Domain::Synthetic
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maps_are_aligned_and_bounded() {
        let spec = ToySpec::new(3, Domain::Real);
        for i in 0..3 {
            let v = render_toy_video(&spec, 1, i).unwrap();
            assert_eq!(v.frames.shape(), &[16, 3, 32, 32]);
            for t in [&v.frames, &v.body, &v.face, &v.normal, &v.mask] {
                assert!(t.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
            let fg = v.mask.data().iter().filter(|&&m| m > 0.5).count();
            assert!(fg > 16 * 3 * 20, "foreground too small: {fg}");
            // normals and face live inside the mask
            for (idx, &m) in v.mask.data().iter().enumerate() {
                if m == 0.0 {
                    assert_eq!(v.normal.data()[idx], 0.0);
                    assert_eq!(v.face.data()[idx], 0.0);
                }
            }
        }
    }

    #[test]
    fn rendering_is_deterministic_and_seeded() {
        let spec = ToySpec::new(2, Domain::Synthetic);
        assert_eq!(render_toy_video(&spec, 5, 1).unwrap(), render_toy_video(&spec, 5, 1).unwrap());
        assert_ne!(
            render_toy_video(&spec, 5, 1).unwrap().frames,
            render_toy_video(&spec, 6, 1).unwrap().frames
        );
    }

    #[test]
    fn motion_moves_the_figure() {
        for m in MotionFamily::ALL {
            let spec = ToySpec {
                motion: Some(m),
                ..ToySpec::new(1, Domain::Synthetic)
            };
            let v = render_toy_video(&spec, 2, 0).unwrap();
            let a = v.body.narrow(0, 0, 1).unwrap();
            let b = v.body.narrow(0, 4, 1).unwrap();
            assert!(a.max_abs_diff(&b) > 0.0, "{m:?}");
        }
    }

    #[test]
    fn invalid_dims_rejected() {
        let mut spec = ToySpec::new(1, Domain::Real);
        spec.height = 20;
        assert!(render_toy_video(&spec, 0, 0).is_err());
        spec.height = 32;
        spec.frames = 0;
        assert!(render_toy_video(&spec, 0, 0).is_err());
    }

    #[test]
    fn empty_spec_gives_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_toy_dataset(&ToySpec::new(0, Domain::Real), 0, dir.path()).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn written_media_loads_back_identically() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ToySpec {
            frames: 3,
            ..ToySpec::new(2, Domain::Real)
        };
        let m = generate_toy_dataset(&spec, 9, dir.path()).unwrap();
        let loaded = Manifest::load(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(loaded, m);
        assert_eq!(m.entries[1].load().unwrap(), render_toy_video(&spec, 9, 1).unwrap());
    }

    #[test]
    fn domain_classifier_separates_domains() {
        let mut correct = 0;
        let n = 20;
        for domain in [Domain::Real, Domain::Synthetic] {
            let spec = ToySpec {
                frames: 4,
                ..ToySpec::new(n, domain)
            };
            for i in 0..n {
                let v = render_toy_video(&spec, 11, i).unwrap();
                correct += usize::from(classify_domain(&v.frames).unwrap() == domain);
            }
        }
        assert!(correct as f64 / (2 * n) as f64 >= 0.95, "{correct}/{}", 2 * n);
    }
}
