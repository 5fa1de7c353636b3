use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use tmrl_core::agent::{load_checkpoint, save_checkpoint, AgentNet};
use tmrl_core::datasets::{
    drift_configs, generate_synthetic, load_sequence, mask_path, read_index_png, split_labels, write_index_png,
    write_sequence, DriftParams, SequenceData, SynthConfig,
};
use tmrl_core::gradcheck::{self, GradcheckOptions};
use tmrl_core::metrics::{default_tolerance, evaluate_sequence, MetricsReport, SequenceInput};
use tmrl_core::pipeline::{
    self as pipeline, render_labels, run_sequence, AgentPolicy, DecisionPolicy, FixedPolicy, OraclePolicy, SequenceRun,
    TrainConfig, TrainItem,
};
use tmrl_core::proposals::{DetectorScript, FileProposals, ProposalSource, ScriptedDetector};
use tmrl_core::template::Action;
use tmrl_core::{Error, Result};

use crate::run_config::{DatasetKind, PolicyKind, ProposalKind, RunConfig};

pub const DETECTOR_FILE: &str = "detector.txt";
pub const SYNTH_FILE: &str = "synth.txt";
pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "agent.ckpt";
pub const CURVE_FILE: &str = "curve.jsonl";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.jsonl";
pub const CONFIDENCES_FILE: &str = "confidences.tsv";
pub const TIMINGS_FILE: &str = "timings.tsv";
pub const METRICS_FILE: &str = "metrics.tsv";

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        context: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("`{key}` is not set (config key or flag)")))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Seed of item `i` under master seed `seed` and a component seed.
fn derive_seed(seed: u64, component: u64, i: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(component.rotate_left(21))
        .wrapping_add(i as u64);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `dir` itself when it holds `frames/`, else its subdirectories that do,
/// sorted by name.
pub fn sequence_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join("frames").is_dir() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let rd = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| io_err(dir, e))?.path();
        if p.join("frames").is_dir() {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Dataset {
            path: dir.to_path_buf(),
            reason: "no sequence directories".into(),
        });
    }
    Ok(out)
}

fn dir_name(dir: &Path) -> String {
    dir.file_name()
        .map_or_else(|| "sequence".to_string(), |n| n.to_string_lossy().into_owned())
}

struct Loaded {
    dir: PathBuf,
    seq: SequenceData,
    detector: Box<dyn ProposalSource>,
}

fn load_detector(cfg: &RunConfig, dir: &Path, seq: &SequenceData) -> Result<Box<dyn ProposalSource>> {
    match cfg.proposals {
        ProposalKind::Files => Ok(Box::new(FileProposals::new(dir.join("proposals")))),
        ProposalKind::Scripted => {
            let path = dir.join(DETECTOR_FILE);
            let script = if path.exists() {
                let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
                DetectorScript::from_text(&text)?
            } else {
                cfg.detector.clone()
            };
            Ok(Box::new(ScriptedDetector::new(script, Arc::new(seq.scene_truth()))?))
        }
    }
}

fn load_all(cfg: &RunConfig, jobs: usize) -> Result<Vec<Loaded>> {
    let data = required(&cfg.data, "data")?;
    let dirs = sequence_dirs(data)?;
    pool(jobs)?.install(|| {
        dirs.into_par_iter()
            .map(|dir| {
                let seq = load_sequence(&dir)?;
                let detector = load_detector(cfg, &dir, &seq)?;
                Ok(Loaded { dir, seq, detector })
            })
            .collect()
    })
}

pub fn synth(cfg: &RunConfig, force: bool) -> Result<()> {
    let out = required(&cfg.out, "out")?;
    create_dir(out)?;
    let jobs: Vec<(SynthConfig, DetectorScript)> = match cfg.dataset {
        DatasetKind::Drift => drift_configs(cfg.seed, cfg.sequences, DriftParams::BENCHMARK)?,
        DatasetKind::Synthetic => (0..cfg.sequences)
            .map(|i| {
                let mut s = cfg.synth.clone();
                s.seed = derive_seed(cfg.seed, s.seed, i);
                if cfg.sequences > 1 {
                    s.name = format!("{}_{i:03}", s.name);
                }
                let mut d = cfg.detector.clone();
                d.seed = derive_seed(cfg.seed, d.seed, i);
                (s, d)
            })
            .collect(),
    };
    for (s, d) in &jobs {
        let seq = generate_synthetic(s)?;
        let dir = out.join(&s.name);
        write_sequence(&seq, &dir, force)?;
        write_file(&dir.join(DETECTOR_FILE), &d.to_text())?;
        write_file(&dir.join(SYNTH_FILE), &s.to_text())?;
        println!(
            "{}\t{} frames\t{} objects",
            dir.display(),
            seq.len(),
            seq.object_ids.len()
        );
    }
    write_file(&out.join(CONFIG_FILE), &cfg.to_text())
}

pub fn train(cfg: &RunConfig, jobs: usize) -> Result<()> {
    let out = required(&cfg.out, "out")?;
    let loaded = load_all(cfg, jobs)?;
    let items: Vec<TrainItem> = loaded
        .iter()
        .map(|l| TrainItem {
            seq: &l.seq,
            detector: l.detector.as_ref(),
        })
        .collect();
    let mut net = AgentNet::new(&cfg.agent_config(), cfg.seed);
    let train_cfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let curve = pipeline::train(&items, &mut net, &cfg.tracker, &train_cfg, cfg.iterations)?;
    create_dir(out)?;
    save_checkpoint(&net, &out.join(CHECKPOINT_FILE))?;
    let mut text = String::new();
    for e in &curve.episodes {
        let line = serde_json::to_string(e).map_err(|e| Error::Config(format!("curve row: {e}")))?;
        text.push_str(&line);
        text.push('\n');
    }
    write_file(&out.join(CURVE_FILE), &text)?;
    write_file(&out.join(CONFIG_FILE), &cfg.to_text())?;
    println!(
        "trained {} transitions over {} episodes; checkpoint {}",
        curve.transitions(),
        curve.episodes.len(),
        out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn make_policy(cfg: &RunConfig, net: &Option<Arc<AgentNet>>, seed: u64) -> Box<dyn DecisionPolicy> {
    match (cfg.policy, net) {
        (PolicyKind::Agent, Some(net)) => Box::new(AgentPolicy::new(net.clone(), cfg.sample, seed)),
        (PolicyKind::Update, _) => Box::new(FixedPolicy(Action::Update)),
        (PolicyKind::Keep, _) => Box::new(FixedPolicy(Action::Keep)),
        (PolicyKind::Oracle, _) => Box::new(OraclePolicy),
        (PolicyKind::Agent, None) => unreachable!("agent policy requires a loaded checkpoint"),
    }
}

fn write_run(dir: &Path, seq: &SequenceData, run: &SequenceRun) -> Result<()> {
    let (w, h) = seq.dims();
    let masks = dir.join("masks");
    create_dir(&masks)?;
    let mut conf = String::from("frame\tobject\tconfidence\n");
    let mut timing = String::from("frame\tdetection\tmatching\tdecision\n");
    let mut diag = String::new();
    for f in &run.frames {
        write_index_png(&mask_path(dir, f.frame_index), w, h, &render_labels(&f.objects, w, h))?;
        for o in &f.objects {
            let _ = writeln!(conf, "{}\t{}\t{}", f.frame_index, o.id, o.confidence);
            if let Some(d) = &o.diagnostics {
                let line = serde_json::to_string(d).map_err(|e| Error::Config(format!("diagnostics: {e}")))?;
                diag.push_str(&line);
                diag.push('\n');
            }
        }
        let t = &f.timings;
        let _ = writeln!(
            timing,
            "{}\t{:.9}\t{:.9}\t{:.9}",
            f.frame_index, t.detection, t.matching, t.decision
        );
    }
    write_file(&dir.join(CONFIDENCES_FILE), &conf)?;
    write_file(&dir.join(DIAGNOSTICS_FILE), &diag)?;
    write_file(&dir.join(TIMINGS_FILE), &timing)
}

pub fn track(cfg: &RunConfig, jobs: usize) -> Result<()> {
    let out = required(&cfg.out, "out")?;
    let net = match cfg.policy {
        PolicyKind::Agent => {
            let path = required(&cfg.checkpoint, "checkpoint")?;
            Some(Arc::new(load_checkpoint(path, Some(cfg.tracker.features.dim()))?))
        }
        _ => None,
    };
    let loaded = load_all(cfg, jobs)?;
    create_dir(out)?;
    let results: Vec<Result<(String, usize)>> = pool(jobs)?.install(|| {
        loaded
            .par_iter()
            .enumerate()
            .map(|(i, l)| {
                let mut policy = make_policy(cfg, &net, derive_seed(cfg.seed, 0, i));
                let run = run_sequence(&l.seq, l.detector.as_ref(), policy.as_mut(), &cfg.tracker)?;
                let name = dir_name(&l.dir);
                write_run(&out.join(&name), &l.seq, &run)?;
                Ok((name, run.frames.len()))
            })
            .collect()
    });
    for r in results {
        let (name, n) = r?;
        println!("{name}\t{n} frames");
    }
    write_file(&out.join(CONFIG_FILE), &cfg.to_text())
}

/// Reads `frame\tobject\tconfidence` rows into per-frame, per-object values.
fn read_confidences(path: &Path, frames: usize, ids: &[u8]) -> Result<Option<Vec<Vec<f64>>>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = vec![vec![1.0; ids.len()]; frames];
    let bad = |line: usize, reason: &str| Error::Dataset {
        path: path.to_path_buf(),
        reason: format!("line {line}: {reason}"),
    };
    for (n, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(bad(n + 1, "expected 3 fields"));
        }
        let t: usize = f[0].parse().map_err(|_| bad(n + 1, "bad frame"))?;
        let id: u8 = f[1].parse().map_err(|_| bad(n + 1, "bad object"))?;
        let c: f64 = f[2].parse().map_err(|_| bad(n + 1, "bad confidence"))?;
        let k = ids
            .iter()
            .position(|&i| i == id)
            .ok_or_else(|| bad(n + 1, "unknown object"))?;
        if t >= frames {
            return Err(bad(n + 1, "frame out of range"));
        }
        out[t][k] = c;
    }
    Ok(Some(out))
}

pub fn eval(cfg: &RunConfig, pred: &Path, gt: &Path, jobs: usize) -> Result<()> {
    let dirs = sequence_dirs(gt)?;
    let single = gt.join("frames").is_dir();
    let reports = pool(jobs)?.install(|| {
        dirs.par_iter()
            .map(|dir| {
                let seq = load_sequence(dir)?;
                let name = dir_name(dir);
                let pdir = if single { pred.to_path_buf() } else { pred.join(&name) };
                let (w, h) = seq.dims();
                let masks = (0..seq.len())
                    .map(|t| {
                        let path = mask_path(&pdir, t);
                        let (pw, ph, labels) = read_index_png(&path)?;
                        if (pw, ph) != (w, h) {
                            return Err(Error::Dataset {
                                path,
                                reason: format!("{pw}x{ph} prediction for a {w}x{h} sequence"),
                            });
                        }
                        Ok(split_labels(w, h, &labels, &seq.object_ids))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let conf = read_confidences(&pdir.join(CONFIDENCES_FILE), seq.len(), &seq.object_ids)?;
                evaluate_sequence(&SequenceInput {
                    name: &name,
                    ids: &seq.object_ids,
                    pred: &masks,
                    gt: &seq.gt,
                    confidences: conf.as_deref(),
                    tolerance: default_tolerance(w, h),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let report = MetricsReport::new(reports);
    let text = report.to_text();
    print!("{text}");
    let path = cfg.out.clone().unwrap_or_else(|| pred.join(METRICS_FILE));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(&path, &text)
}

pub fn gradcheck(seed: u64, corrupt: bool) -> Result<bool> {
    let report = gradcheck::run(
        seed,
        &GradcheckOptions {
            corrupt,
            ..Default::default()
        },
    )?;
    println!("actor_max_rel_error\t{:e}", report.actor_max_rel);
    println!("critic_max_rel_error\t{:e}", report.critic_max_rel);
    println!("cases\t{}", report.cases);
    let ok = report.passed();
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}
