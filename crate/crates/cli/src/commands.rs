use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ihdr_core::autodiff::run_suite;
use ihdr_core::eval::{evaluate as score, EvalReport, ReportSet};
use ihdr_core::intrinsic::{AlbedoMap, InverseShadingMap};
use ihdr_core::io::manifest::{self, SceneRecord, MANIFEST_NAME};
use ihdr_core::io::{pfm, png, rgbe};
use ihdr_core::isp::{self, IspParams, EXPOSURE_RANGE};
use ihdr_core::models::checkpoint;
use ihdr_core::models::train::{self as training, DEFAULT_LEARNING_RATE};
use ihdr_core::models::{reconstruct as run_pipeline, LdrInputs, Role, ToyNet, TrainConfig, TrainExample};
use ihdr_core::LinearImage;

use crate::config::{or_default, required, RunConfig};
use crate::{EvaluateArgs, Failure, GradcheckArgs, ReconstructArgs, SimulateArgs, TrainArgs};

const DEFAULT_SIZE: usize = 64;
const DEFAULT_GAMMA: f64 = 2.2;
const DEFAULT_BITS: u32 = 8;
const DEFAULT_STEPS: usize = 500;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn data(msg: impl Into<String>) -> Failure {
    Failure::Data(msg.into())
}

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    data(format!("{}: {e}", path.display()))
}

fn need_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn need_dir(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} is not a directory", path.display())))
    }
}

/// The directory an output file will be created in must already exist.
fn need_parent(path: &Path, what: &str) -> Result<(), Failure> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => need_dir(p, &format!("parent of {what}")),
        _ => Ok(()),
    }
}

fn ckpt_path(dir: &Path, role: Role) -> PathBuf {
    dir.join(format!("{role}.ckpt"))
}

fn load_role(dir: &Path, role: Role) -> Result<ToyNet, Failure> {
    let path = ckpt_path(dir, role);
    let net = checkpoint::load(&path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    if net.role() != role {
        return Err(data(format!("{} holds a {} network", path.display(), net.role())));
    }
    Ok(net)
}

/// Appends `suffix` to the final component of `prefix`.
fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

fn read_hdr(path: &Path) -> Result<LinearImage, Failure> {
    let img = match extension(path).as_str() {
        "pfm" => pfm::read(path),
        "hdr" => rgbe::read(path),
        other => return Err(usage(format!("{}: unsupported HDR extension {other:?}", path.display()))),
    };
    img.map_err(|e| annotate(path, e))
}

fn annotate(path: &Path, e: ihdr_core::Error) -> Failure {
    match Failure::from(e) {
        Failure::Data(m) => data(format!("{}: {m}", path.display())),
        f => f,
    }
}

pub fn simulate(a: SimulateArgs, cfg: &RunConfig) -> Result<(), Failure> {
    let count = required(a.seeds, cfg.seeds, "seeds").map_err(usage)?;
    let out = required(a.out, cfg.out.clone(), "out").map_err(usage)?;
    let first = or_default(a.first_seed, cfg.first_seed, 0);
    let size = or_default(a.size, cfg.size, DEFAULT_SIZE);
    let [lo, hi] = or_default(a.t_range, cfg.t_range, [EXPOSURE_RANGE.0, EXPOSURE_RANGE.1]);
    let gamma = or_default(a.gamma, cfg.gamma, DEFAULT_GAMMA);
    let bits = or_default(a.bits, cfg.bits, DEFAULT_BITS);
    if count == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    IspParams::new(0.0, gamma, bits).map_err(|e| usage(e.to_string()))?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(usage(format!("--t-range {lo},{hi} is not an interval")));
    }
    if out.exists() && !out.is_dir() {
        return Err(usage(format!("--out {} is not a directory", out.display())));
    }
    fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;

    let mut records = Vec::with_capacity(count);
    for seed in first..first + count as u64 {
        let t = isp::exposure_for_seed_in(seed, (lo, hi))?;
        let rec = SceneRecord::new(seed, size, size, IspParams::new(t, gamma, bits)?)?;
        rec.materialize(&out)?;
        records.push(rec);
    }
    manifest::write_manifest(&out.join(MANIFEST_NAME), &records)?;
    println!("simulated {count} scenes into {}", out.display());
    Ok(())
}

fn load_examples(dir: &Path) -> Result<Vec<TrainExample>, Failure> {
    let path = dir.join(MANIFEST_NAME);
    let records = manifest::read_manifest(&path).map_err(|e| annotate(&path, e))?;
    if records.is_empty() {
        return Err(data(format!("{}: no records", path.display())));
    }
    records
        .iter()
        .map(|r| {
            let scene = r.load_scene(dir)?;
            TrainExample::from_scene(&scene, &r.isp)
        })
        .collect::<Result<_, _>>()
        .map_err(Failure::from)
}

pub fn train(a: TrainArgs, cfg: &RunConfig) -> Result<(), Failure> {
    let role: Role = required(a.role, cfg.role.clone(), "role")
        .map_err(usage)?
        .parse()
        .map_err(|e: ihdr_core::Error| usage(e.to_string()))?;
    let dir = required(a.data, cfg.data.clone(), "data").map_err(usage)?;
    let ckpt = required(a.ckpt, cfg.ckpt.clone(), "ckpt").map_err(usage)?;
    let train_cfg = TrainConfig {
        learning_rate: or_default(a.lr, cfg.lr, DEFAULT_LEARNING_RATE),
        steps: or_default(a.steps, cfg.steps, DEFAULT_STEPS),
        batch: or_default(a.batch, cfg.batch, 1),
        seed: or_default(a.seed, cfg.seed, 0),
    };
    train_cfg.validate().map_err(|e| usage(e.to_string()))?;
    need_dir(&dir, "--data")?;
    need_file(&dir.join(MANIFEST_NAME), "manifest")?;
    need_parent(&ckpt, "--ckpt")?;
    let stages = if role == Role::Refinement {
        let ckpts = required(a.ckpts, cfg.ckpts.clone(), "ckpts").map_err(usage)?;
        for r in [Role::Shading, Role::Albedo] {
            need_file(&ckpt_path(&ckpts, r), "checkpoint")?;
        }
        Some((load_role(&ckpts, Role::Shading)?, load_role(&ckpts, Role::Albedo)?))
    } else {
        None
    };

    let mut examples = load_examples(&dir)?;
    if let Some((shading, albedo)) = &stages {
        for ex in &mut examples {
            ex.attach_stages(shading, albedo)?;
        }
    }
    let mut net = ToyNet::build(role, train_cfg.seed);
    let curve = training::train(&mut net, &examples, &train_cfg)?;
    checkpoint::save(&net, &ckpt).map_err(|e| annotate(&ckpt, e))?;

    let csv_path = ckpt.with_extension("loss.csv");
    let mut text = String::from("step,loss\n");
    for (i, l) in curve.iter().enumerate() {
        text.push_str(&format!("{},{l}\n", i + 1));
    }
    fs::write(&csv_path, text).map_err(|e| io_error(&csv_path, e))?;
    match (curve.first(), curve.last()) {
        (Some(first), Some(last)) => println!("trained {role} for {} steps: loss {first} -> {last}", curve.len()),
        _ => println!("trained {role} for 0 steps"),
    }
    Ok(())
}

fn read_ldr(path: &Path, gamma: f64) -> Result<LinearImage, Failure> {
    match extension(path).as_str() {
        "png" => {
            let codes = png::read(path).map_err(|e| annotate(path, e))?;
            Ok(codes.normalized().map(|v| v.powf(gamma))?)
        }
        "pfm" => pfm::read(path).map_err(|e| annotate(path, e)),
        other => Err(usage(format!("{}: unsupported LDR extension {other:?}", path.display()))),
    }
}

pub fn reconstruct(a: ReconstructArgs, cfg: &RunConfig) -> Result<(), Failure> {
    let ldr = required(a.ldr, cfg.ldr.clone(), "ldr").map_err(usage)?;
    let ckpts = required(a.ckpts, cfg.ckpts.clone(), "ckpts").map_err(usage)?;
    let out = required(a.out, cfg.out.clone(), "out").map_err(usage)?;
    let gamma = or_default(a.gamma, cfg.gamma, DEFAULT_GAMMA);
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(usage(format!("--gamma must be positive, got {gamma}")));
    }
    let sidecars = match (a.inv_shading.or(cfg.inv_shading.clone()), a.albedo.or(cfg.albedo.clone())) {
        (Some(d), Some(al)) => Some((d, al)),
        (None, None) => None,
        _ => return Err(usage("--inv-shading and --albedo must be given together")),
    };
    need_file(&ldr, "--ldr")?;
    for role in Role::ALL {
        need_file(&ckpt_path(&ckpts, role), "checkpoint")?;
    }
    if let Some((d, al)) = &sidecars {
        need_file(d, "--inv-shading")?;
        need_file(al, "--albedo")?;
    }
    need_parent(&out, "--out")?;

    let image = read_ldr(&ldr, gamma)?;
    let inputs = match sidecars {
        Some((d, al)) => {
            let inv = InverseShadingMap::new(pfm::read(&d).map_err(|e| annotate(&d, e))?)?;
            let albedo = AlbedoMap::new(pfm::read(&al).map_err(|e| annotate(&al, e))?)?;
            LdrInputs::new(image, inv, albedo)?
        }
        None => LdrInputs::from_image(image)?,
    };
    let [shading, albedo, refine] = [Role::Shading, Role::Albedo, Role::Refinement];
    let nets = (load_role(&ckpts, shading)?, load_role(&ckpts, albedo)?, load_role(&ckpts, refine)?);
    let rec = run_pipeline(&inputs, &nets.0, &nets.1, &nets.2)?;
    for (suffix, img) in [
        ("_dh.pfm", rec.d_h.as_image()),
        ("_ah.pfm", rec.a_h.as_image()),
        ("_ihat.pfm", &rec.i_hat),
        ("_hdr.pfm", &rec.hdr),
    ] {
        let path = with_suffix(&out, suffix);
        pfm::write(&path, img).map_err(|e| annotate(&path, e))?;
    }
    println!("wrote {}_{{dh,ah,ihat,hdr}}.pfm", out.display());
    Ok(())
}

fn hdr_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_error(dir, e))? {
        let path = entry.map_err(|e| io_error(dir, e))?.path();
        if path.is_file() && matches!(extension(&path).as_str(), "pfm" | "hdr") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// `(id, pred, gt)` triples: a single file pair, or ground-truth files
/// matched by name in the prediction directory.
fn pairs(pred: &Path, gt: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>, Failure> {
    let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    match (pred.is_dir(), gt.is_dir()) {
        (false, false) => Ok(vec![(name(pred), pred.to_path_buf(), gt.to_path_buf())]),
        (true, true) => {
            let found: Vec<_> = hdr_files(gt)?
                .into_iter()
                .map(|g| {
                    let id = name(&g);
                    let p = pred.join(&id);
                    if p.is_file() {
                        Ok((id, p, g))
                    } else {
                        Err(data(format!("no prediction {} for ground truth {}", p.display(), g.display())))
                    }
                })
                .collect::<Result<_, _>>()?;
            if found.is_empty() {
                return Err(data(format!("{} holds no .pfm or .hdr files", gt.display())));
            }
            Ok(found)
        }
        _ => Err(usage("--pred and --gt must both be files or both be directories")),
    }
}

pub fn evaluate(a: EvaluateArgs, cfg: &RunConfig) -> Result<(), Failure> {
    let pred = required(a.pred, cfg.pred.clone(), "pred").map_err(usage)?;
    let gt = required(a.gt, cfg.gt.clone(), "gt").map_err(usage)?;
    let report = required(a.report, cfg.report.clone(), "report").map_err(usage)?;
    for (p, what) in [(&pred, "--pred"), (&gt, "--gt")] {
        if !p.exists() {
            return Err(usage(format!("{what} {} does not exist", p.display())));
        }
    }
    need_parent(&report, "--report")?;

    let mut reports = Vec::new();
    for (id, p, g) in pairs(&pred, &gt)? {
        let m = score(&read_hdr(&p)?, &read_hdr(&g)?).map_err(|e| annotate(&p, e))?;
        reports.push(EvalReport::new(id, m));
    }
    let set = ReportSet::new(reports)?;
    fs::write(&report, set.to_json()?).map_err(|e| io_error(&report, e))?;
    let csv_path = report.with_extension("csv");
    let file = fs::File::create(&csv_path).map_err(|e| io_error(&csv_path, e))?;
    set.write_csv(std::io::BufWriter::new(file))?;
    let agg = &set.aggregate;
    println!(
        "evaluated {} images: mean PU21-PSNR {}, mean RMSE {}",
        agg.count, agg.pu21_psnr.mean, agg.rmse_linear.mean
    );
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs, cfg: &RunConfig) -> Result<(), Failure> {
    let seed = or_default(a.seed, cfg.seed, 0);
    let results = run_suite(seed)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        failed += usize::from(!r.passed());
        let _ = writeln!(out, "{status:4} {:<28} max_rel_error {:.3e}", r.name, r.max_rel_error);
    }
    if failed > 0 {
        return Err(Failure::Numerical(format!("gradient check failed for {failed} of {} checks", results.len())));
    }
    let _ = writeln!(out, "all {} gradient checks passed (seed {seed})", results.len());
    Ok(())
}
