use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::plan::{derive_seed, parse_ratio, DataSource, ExperimentPlan, PlanKind};
use super::report::{write_report, ExperimentReport, GroupSummary};
use crate::conditioning::GridColorEmbedder;
use crate::curation::{
    apply_selection, embed_manifest, embed_video, generate_toy_dataset, mix_datasets, select_manual, select_random,
    select_top_n, Domain, Manifest, MotionFamily, SelectionResult, Strategy, ToyVideoEmbedder, VideoEmbedder,
};
use crate::denoiser::Checkpoint;
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate, CheckpointGenerator, EmbeddingDistance, EvalOptions, Evaluators, MetricReport, PerceptualDistance,
    TableKind, ToyIdentityEmbedder,
};
use crate::training::{finetune, train_stage1, train_stage2, TrainOutput};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads for independent training groups.
    pub threads: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { threads: 1 }
    }
}

/// Lower-case file-system name of a row label, e.g. `2:1` -> `ratio-2-1`.
pub fn group_slug(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    if label.contains(':') {
        format!("ratio-{s}")
    } else {
        s
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p.to_path_buf()
    }
}

/// Loads or renders one of the plan's datasets.
fn materialize(plan: &ExperimentPlan, role: &str, src: &DataSource, plan_dir: &Path, out: &Path) -> Result<Manifest> {
    let m = match src {
        DataSource::Manifest(p) => Manifest::load(&resolve(plan_dir, p))?,
        DataSource::Toy { spec, seed } => {
            let seed = seed.unwrap_or_else(|| derive_seed(plan.seed, &format!("data/{role}")));
            generate_toy_dataset(spec, seed, &out.join("data").join(role))?
        }
    };
    let want = if role == "synthetic" { Domain::Synthetic } else { Domain::Real };
    if let Some(e) = m.entries.iter().find(|e| e.domain != want) {
        return Err(Error::Manifest(format!("`{}` in the {role} set is {:?}", e.id, e.domain)));
    }
    if m.is_empty() {
        return Err(Error::Manifest(format!("the {role} set is empty")));
    }
    Ok(m)
}

fn save_output(out: &TrainOutput, dir: &Path, name: &str) -> Result<()> {
    out.checkpoint.save(&dir.join(format!("{name}.ckpt.json")))?;
    out.record.save(&dir.join(format!("{name}.jsonl")))
}

/// Everything a group needs that is shared across groups.
struct Context<'a> {
    plan: &'a ExperimentPlan,
    eval: &'a Manifest,
    out: &'a Path,
}

impl Context<'_> {
    fn group_dir(&self, label: &str) -> Result<PathBuf> {
        let dir = self.out.join("groups").join(group_slug(label));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    /// Both training stages from scratch. Every group shares the training
    /// seeds so rows differ only in their data.
    fn train(&self, label: &str, manifest: &Manifest) -> Result<Checkpoint> {
        let plan = self.plan;
        let dir = self.group_dir(label)?;
        manifest.save(&dir.join("train_manifest.jsonl"))?;
        let c1 = plan.stage1.config(1, &plan.model, derive_seed(plan.seed, "stage1"))?;
        let s1 = train_stage1(&c1, manifest).map_err(|e| e.in_stage(format!("{label}: stage-1 training")))?;
        save_output(&s1, &dir, "stage1")?;
        let c2 = plan.stage2.config(2, &plan.model, derive_seed(plan.seed, "stage2"))?;
        let s2 = train_stage2(&c2, &s1.checkpoint, manifest)
            .map_err(|e| e.in_stage(format!("{label}: stage-2 training")))?;
        save_output(&s2, &dir, "stage2")?;
        Ok(s2.checkpoint)
    }

    fn evaluate(&self, label: &str, checkpoint: &Checkpoint) -> Result<MetricReport> {
        let plan = self.plan;
        let video = ToyVideoEmbedder::default();
        let proxy = EmbeddingDistance {
            name: "grid-colour embedding distance".into(),
            embedder: GridColorEmbedder::default(),
        };
        let evaluators = Evaluators {
            video: &video,
            identity: &ToyIdentityEmbedder,
            perceptual: plan.eval.perceptual_proxy.then_some(&proxy as &dyn PerceptualDistance),
        };
        let generator = CheckpointGenerator {
            label: label.to_string(),
            checkpoint,
            steps: plan.eval.sample_steps,
            seed: derive_seed(plan.seed, "sample"),
        };
        let options = EvalOptions {
            max_frames: plan.eval.max_frames,
        };
        let report = evaluate(&generator, self.eval, &evaluators, options)
            .map_err(|e| e.in_stage(format!("{label}: evaluation")))?;
        let path = self.group_dir(label)?.join("metrics.json");
        fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
        Ok(report)
    }
}

/// A group trained from scratch on its own manifest.
struct Group {
    label: String,
    manifest: Manifest,
    selection: Option<SelectionResult>,
}

/// Runs `jobs` on up to `threads` workers; results keep job order and the
/// first failing job (in order) decides the error.
fn run_parallel<T: Send>(n: usize, threads: usize, job: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(job).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = job(i);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

fn summary(group: &Group) -> GroupSummary {
    GroupSummary {
        label: group.label.clone(),
        train_entries: group.manifest.len(),
        synthetic_entries: group.manifest.count_domain(Domain::Synthetic),
        selection: group.selection.clone(),
    }
}

/// Picks `n` pool entries whose motion families follow the family mix of
/// `targets`: quotas by largest remainder, ids ascending within a family,
/// and any shortfall filled from the remaining pool in id order.
pub fn manual_pick(targets: &Manifest, pool: &Manifest, n: usize) -> Result<Vec<String>> {
    if n > pool.len() {
        return Err(Error::Selection(format!("cannot pick {n} of {} candidates", pool.len())));
    }
    let mut counts: BTreeMap<MotionFamily, usize> = BTreeMap::new();
    for e in &targets.entries {
        if let Some(m) = e.motion {
            *counts.entry(m).or_default() += 1;
        }
    }
    let total: usize = counts.values().sum();
    let mut quota: BTreeMap<MotionFamily, usize> = BTreeMap::new();
    if total > 0 {
        let mut rema: Vec<(usize, MotionFamily)> = Vec::new();
        for (&m, &c) in &counts {
            quota.insert(m, n * c / total);
            rema.push(((n * c) % total, m));
        }
        // largest remainder first, family order on ties
        rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let short = n - quota.values().sum::<usize>();
        for &(_, m) in rema.iter().take(short) {
            *quota.get_mut(&m).unwrap() += 1;
        }
    }
    let mut ids: Vec<&str> = pool.ids().collect();
    ids.sort_unstable();
    let mut picked: Vec<String> = Vec::with_capacity(n);
    for (&m, &q) in &quota {
        let of_family = ids.iter().filter(|id| pool.get(id).and_then(|e| e.motion) == Some(m));
        picked.extend(of_family.take(q).map(|s| s.to_string()));
    }
    for id in ids {
        if picked.len() == n {
            break;
        }
        if !picked.iter().any(|p| p == id) {
            picked.push(id.to_string());
        }
    }
    picked.sort_unstable();
    Ok(picked)
}

/// Runs a validated plan. `plan_dir` anchors relative manifest paths;
/// everything is written below `out`, and files of finished groups stay
/// in place when a later step fails.
pub fn run_plan(plan: &ExperimentPlan, plan_dir: &Path, out: &Path, options: RunOptions) -> Result<ExperimentReport> {
    plan.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let plan_path = out.join("plan.json");
    fs::write(&plan_path, plan.to_json()?).map_err(|e| Error::io(&plan_path, e))?;
    let data = |role: &str, src: &DataSource| {
        materialize(plan, role, src, plan_dir, out).map_err(|e| e.in_stage(format!("{role} data")))
    };
    let real = data("real", &plan.data.real)?;
    let synthetic = data("synthetic", &plan.data.synthetic)?;
    let eval = data("eval", &plan.data.eval)?;
    let ctx = Context { plan, eval: &eval, out };

    let (table, groups, reports) = match &plan.kind {
        PlanKind::Finetune { finetune: ft } => {
            let group = Group {
                label: "Baseline".into(),
                manifest: real.clone(),
                selection: None,
            };
            let baseline = ctx.train(&group.label, &real)?;
            let base_report = ctx.evaluate("Baseline", &baseline)?;
            let cfg = ft.config(baseline.meta.stage, &plan.model, derive_seed(plan.seed, "finetune"))?;
            let tuned = finetune(&baseline, &synthetic, &cfg).map_err(|e| e.in_stage("Finetuned: fine-tuning"))?;
            save_output(&tuned, &ctx.group_dir("Finetuned")?, "finetune")?;
            let tuned_report = ctx.evaluate("Finetuned", &tuned.checkpoint)?;
            let tuned_group = Group {
                label: "Finetuned".into(),
                manifest: synthetic.clone(),
                selection: None,
            };
            (
                TableKind::Finetune,
                vec![summary(&group), summary(&tuned_group)],
                vec![base_report, tuned_report],
            )
        }
        PlanKind::RatioScale { ratios } => {
            let groups = ratios
                .iter()
                .map(|label| {
                    let (s, r) = parse_ratio(label)?;
                    let manifest = mix_datasets(&real, &synthetic, s, r, derive_seed(plan.seed, &format!("mix/{label}")))
                        .map_err(|e| e.in_stage(format!("{label}: mixing")))?;
                    Ok(Group {
                        label: label.clone(),
                        manifest,
                        selection: None,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let reports = run_parallel(groups.len(), options.threads, |i| {
                let g = &groups[i];
                let ck = ctx.train(&g.label, &g.manifest)?;
                ctx.evaluate(&g.label, &ck)
            })?;
            (TableKind::RatioScale, groups.iter().map(summary).collect(), reports)
        }
        PlanKind::TargetedSelect { selection } => {
            let n = selection.n;
            let stage = |s: Strategy| move |e: Error| e.in_stage(format!("{}: selection", s.label()));
            let random = select_random(&synthetic, n, derive_seed(plan.seed, "select/random"))
                .map_err(stage(Strategy::Random))?;
            let manual_ids = match &selection.manual_ids {
                Some(ids) => ids.clone(),
                None => manual_pick(&eval, &synthetic, n).map_err(stage(Strategy::Manual))?,
            };
            let manual = select_manual(&synthetic, &manual_ids).map_err(stage(Strategy::Manual))?;
            let clip = {
                let embedder = ToyVideoEmbedder::default();
                let pool = embed_manifest(&synthetic, &embedder)?;
                let targets = eval
                    .entries
                    .iter()
                    .map(|e| embed_video(e, &embedder))
                    .collect::<Result<Vec<_>>>()?;
                let mut r = select_top_n(&targets, &pool, n, selection.aggregation)
                    .map_err(stage(Strategy::ClipSim))?;
                r.targets = format!("{} evaluation clips ({})", targets.len(), embedder.name());
                r
            };
            let groups = [random, manual, clip]
                .into_iter()
                .map(|sel| {
                    let added = apply_selection(&synthetic, &sel)?;
                    let mut entries = real.entries.clone();
                    entries.extend(added.entries);
                    Ok(Group {
                        label: sel.strategy.label().to_string(),
                        manifest: Manifest::new(entries)?,
                        selection: Some(sel),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let reports = run_parallel(groups.len(), options.threads, |i| {
                let g = &groups[i];
                let ck = ctx.train(&g.label, &g.manifest)?;
                ctx.evaluate(&g.label, &ck)
            })?;
            (TableKind::TargetedSelect, groups.iter().map(summary).collect(), reports)
        }
    };

    let report = ExperimentReport::new(plan, table, groups, reports)?;
    write_report(&report, out)?;
    Ok(report)
}
