use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ikmr_core::bench::{bench_clips, bench_row, bench_to_csv};
use ikmr_core::dynamics::{dynamics_filter, feasibility_report, DynamicsLimits, FeasibilityReport};
use ikmr_core::io;
use ikmr_core::metrics::{diagonal_contrast, latent_correlation_matrix, mean_smoothness, noise_sweep, sweep_to_csv, NoiseSweepPoint, SmoothnessReport};
use ikmr_core::motion::MotionClip;
use ikmr_core::net::{NetConfig, RetargetModel, Side};
use ikmr_core::skeleton::Skeleton;
use ikmr_core::training::{
    finetune_with, generate_synthetic_pairs_with, pretrain_optimizer, pretrain_resume, LossWeights, PairedDataset,
    Provenance, SynthConfig, TrainConfig,
};
use ikmr_core::windowing::{retarget_many, DEFAULT_OVERLAP};
use serde::Serialize;

use crate::args::{BenchArgs, DatagenArgs, EvalArgs, FinetuneArgs, PretrainArgs, RetargetArgs};
use crate::failure::{CliResult, Failed, Failure, Invalid};
use crate::files::{self, Log, TrainState};

pub fn datagen(a: &DatagenArgs) -> CliResult<()> {
    let sa = files::skeleton(&a.skeleton_a)?;
    let sb = files::skeleton(&a.skeleton_b)?;
    if a.count == 0 {
        return Err(Failure::validation("--count must be >= 1"));
    }
    let cfg = SynthConfig { frames: a.frames, fps: a.fps, ..SynthConfig::default() };
    let data = generate_synthetic_pairs_with(&sa, &sb, a.count, a.seed, &cfg).invalid()?;
    files::ensure_parent(&a.output)?;
    io::write_dataset(&a.output, &data).failed()?;
    eprintln!("wrote {} pairs to {}", data.len(), a.output.display());
    Ok(())
}

fn check_names(data: &PairedDataset, model: &RetargetModel, what: &Path) -> CliResult<()> {
    for (side, name) in [(Side::A, data.skeleton_a()), (Side::B, data.skeleton_b())] {
        let expected = model.skeleton(side).name();
        if name != expected {
            return Err(Failure::validation(format!(
                "{}: skeleton_{} is '{name}' but the model expects '{expected}'",
                what.display(),
                if side == Side::A { "a" } else { "b" }
            )));
        }
    }
    Ok(())
}

fn check_window(clips: &[MotionClip], model: &RetargetModel, what: &Path) -> CliResult<()> {
    let window = model.config().window;
    match clips.iter().position(|c| c.frames() != window) {
        Some(i) => Err(Failure::validation(format!(
            "{}: pair {i} has {} frames but the model window is {window}",
            what.display(),
            clips[i].frames()
        ))),
        None => Ok(()),
    }
}

pub fn pretrain(a: &PretrainArgs) -> CliResult<()> {
    if a.steps == 0 {
        return Err(Failure::validation("--steps must be >= 1"));
    }
    let data = io::read_dataset(&a.dataset).invalid()?;
    let (mut model, stored, opt_state) = match &a.resume {
        Some(path) => {
            let model = files::model(path)?;
            let (state, store) = files::read_train_state(path)?;
            (model, Some(state), Some(store))
        }
        None => {
            if a.channels.len() != 2 {
                return Err(Failure::validation(format!("--channels takes two widths, got {}", a.channels.len())));
            }
            let sa = files::skeleton(a.skeleton_a.as_deref().unwrap_or(data.skeleton_a()))?;
            let sb = files::skeleton(a.skeleton_b.as_deref().unwrap_or(data.skeleton_b()))?;
            let fps = data.pairs().first().map_or(30.0, |p| p.0.fps());
            let cfg = NetConfig {
                window: a.window,
                channels: [a.channels[0], a.channels[1]],
                kernel: a.kernel,
                static_channels: a.static_channels,
                fps,
            };
            let model = RetargetModel::new(cfg, sa, sb, a.seed.unwrap_or(0)).invalid()?;
            (model, None, None)
        }
    };
    check_names(&data, &model, &a.dataset)?;
    check_window(&data.clips_a(), &model, &a.dataset)?;

    let defaults = TrainConfig::default();
    let state = TrainState {
        format_version: io::FORMAT_VERSION,
        seed: a.seed.or(stored.as_ref().map(|s| s.seed)).unwrap_or(defaults.seed),
        batch_size: a.batch_size.or(stored.as_ref().map(|s| s.batch_size)).unwrap_or(defaults.batch_size),
        learning_rate: a.learning_rate.or(stored.as_ref().map(|s| s.learning_rate)).unwrap_or(defaults.learning_rate),
        optimizer: a.optimizer.or(stored.as_ref().map(|s| s.optimizer)).unwrap_or(defaults.optimizer),
        lambda_align: a.lambda_align.or(stored.as_ref().map(|s| s.lambda_align)).unwrap_or(defaults.weights.align),
        lambda_consis: a.lambda_consis.or(stored.as_ref().map(|s| s.lambda_consis)).unwrap_or(defaults.weights.consis),
    };
    let config = TrainConfig {
        learning_rate: state.learning_rate,
        steps: a.steps,
        batch_size: state.batch_size,
        weights: LossWeights { align: state.lambda_align, consis: state.lambda_consis, ..LossWeights::default() },
        seed: state.seed,
        optimizer: state.optimizer,
        workers: a.workers,
    };
    config.validate().invalid()?;
    let mut opt = pretrain_optimizer(&model, &config);
    if let Some(store) = &opt_state {
        opt.load_state(model.params(), store).invalid_ctx(&files::optimizer_path(a.resume.as_ref().unwrap()).display().to_string())?;
    }

    files::ensure_parent(&a.output)?;
    let mut log = Log::open(a.log.as_deref(), a.resume.is_some())?;
    let chunk = if a.checkpoint_every == 0 { a.steps } else { a.checkpoint_every };
    let mut done = 0;
    while done < a.steps {
        let n = chunk.min(a.steps - done);
        let cfg = TrainConfig { steps: n, ..config.clone() };
        pretrain_resume(&mut model, &data, &cfg, &mut opt, |r| {
            if r.step % 100 == 0 {
                eprintln!("step {} loss {:.6}", r.step, r.loss_total);
            }
            log.record(r)
        })
        .failed()?;
        done += n;
        model.save(&a.output).failed()?;
        files::write_train_state(&a.output, &state, &opt.state(model.params()))?;
    }
    log.finish()?;
    eprintln!("saved {} after {} steps", a.output.display(), model.trained_steps());
    Ok(())
}

pub fn finetune(a: &FinetuneArgs) -> CliResult<()> {
    if a.steps == 0 {
        return Err(Failure::validation("--steps must be >= 1"));
    }
    let mut model = files::model(&a.model)?;
    if model.trained_steps() == 0 {
        return Err(Failure::validation(format!("{}: model has not been pretrained", a.model.display())));
    }
    let (human, feasible) = match (&a.feasible, &a.dataset) {
        (Some(path), _) => {
            let data = io::read_dataset(path).invalid()?;
            check_names(&data, &model, path)?;
            let human = data.clips_a();
            check_window(&human, &model, path)?;
            (human, data.clips_b())
        }
        (None, Some(path)) => {
            let data = io::read_dataset(path).invalid()?;
            check_names(&data, &model, path)?;
            let limits_path = a.limits.as_ref().expect("clap requires --limits with --dataset");
            let limits = io::read_limits(limits_path).invalid()?;
            limits.check_skeleton(model.skeleton(Side::B)).invalid_ctx(&limits_path.display().to_string())?;
            let human = data.clips_a();
            check_window(&human, &model, path)?;
            let raw = model.retarget_batch(&human, a.workers.max(1)).failed()?;
            let feasible =
                raw.iter().map(|c| dynamics_filter(model.skeleton(Side::B), c, &limits)).collect::<Result<Vec<_>, _>>().failed()?;
            if let Some(out) = &a.write_feasible {
                let pairs = human.iter().cloned().zip(feasible.iter().cloned()).collect();
                let d = PairedDataset::new(Provenance::Filtered, data.skeleton_a(), data.skeleton_b(), pairs).failed()?;
                files::ensure_parent(out)?;
                io::write_dataset(out, &d).failed()?;
            }
            (human, feasible)
        }
        (None, None) => unreachable!("clap requires --feasible or --dataset"),
    };
    let config = TrainConfig {
        learning_rate: a.learning_rate,
        steps: a.steps,
        batch_size: a.batch_size,
        weights: LossWeights { ee: a.lambda_ee, ..LossWeights::default() },
        seed: a.seed,
        optimizer: a.optimizer,
        workers: a.workers,
    };
    config.validate().invalid()?;
    files::ensure_parent(&a.output)?;
    let mut log = Log::open(a.log.as_deref(), false)?;
    finetune_with(&mut model, &human, &feasible, &config, |r| {
        if r.step % 100 == 0 {
            eprintln!("step {} recon_b {:.6} ee {:.6}", r.step, r.loss_recon_b, r.loss_ee);
        }
        log.record(r)
    })
    .failed()?;
    log.finish()?;
    model.save(&a.output).failed()?;
    eprintln!("saved {}", a.output.display());
    Ok(())
}

fn read_source(path: &Path, skeleton: &Skeleton) -> CliResult<MotionClip> {
    let clip = io::read_motion(path).invalid()?;
    clip.check_skeleton(skeleton).invalid_ctx(&path.display().to_string())?;
    Ok(clip)
}

fn check_overlap(model: &RetargetModel, overlap: usize) -> CliResult<()> {
    if overlap >= model.config().window {
        return Err(Failure::validation(format!(
            "--overlap {overlap} must be smaller than the model window {}",
            model.config().window
        )));
    }
    Ok(())
}

pub fn retarget(a: &RetargetArgs) -> CliResult<()> {
    if a.workers == 0 {
        return Err(Failure::validation("--workers must be >= 1"));
    }
    let model = files::model(&a.model)?;
    check_overlap(&model, a.overlap)?;
    let src = model.skeleton(Side::A);
    if a.input.is_dir() {
        let mut inputs: Vec<PathBuf> = fs::read_dir(&a.input)
            .invalid_io(&a.input)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
            .collect();
        inputs.sort();
        if inputs.is_empty() {
            return Err(Failure::validation(format!("{}: no .json motion files", a.input.display())));
        }
        let clips = inputs.iter().map(|p| read_source(p, src)).collect::<CliResult<Vec<_>>>()?;
        let outs = retarget_many(&model, &clips, a.overlap, a.workers).failed()?;
        fs::create_dir_all(&a.output).failed()?;
        for (p, out) in inputs.iter().zip(&outs) {
            io::write_motion(&a.output.join(p.file_name().unwrap()), out).failed()?;
        }
        eprintln!("retargeted {} clips into {}", outs.len(), a.output.display());
    } else {
        let clip = read_source(&a.input, src)?;
        let out = retarget_many(&model, &[clip], a.overlap, a.workers).failed()?.remove(0);
        files::ensure_parent(&a.output)?;
        io::write_motion(&a.output, &out).failed()?;
    }
    Ok(())
}

trait InvalidIo<T> {
    fn invalid_io(self, path: &Path) -> CliResult<T>;
}

impl<T> InvalidIo<T> for std::io::Result<T> {
    fn invalid_io(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Serialize)]
struct Correlation {
    pairs: usize,
    diagonal_mean: f64,
    off_diagonal_mean: f64,
    matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct Feasibility {
    model: FeasibilityReport,
    model_filtered: FeasibilityReport,
    pretrained: Option<FeasibilityReport>,
}

#[derive(Debug, Serialize)]
struct Report {
    model: String,
    pretrained: Option<String>,
    dataset: String,
    clips: usize,
    seed: u64,
    smoothness: SmoothnessReport,
    smoothness_pretrained: Option<SmoothnessReport>,
    noise_sweep: Vec<NoiseSweepPoint>,
    latent_correlation: Option<Correlation>,
    feasibility: Option<Feasibility>,
}

fn merged_report(skeleton: &Skeleton, clips: &[MotionClip], limits: &DynamicsLimits) -> CliResult<FeasibilityReport> {
    let mut total = FeasibilityReport::default();
    for c in clips {
        total.merge(&feasibility_report(skeleton, c, limits).failed()?);
    }
    Ok(total)
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    if a.workers == 0 {
        return Err(Failure::validation("--workers must be >= 1"));
    }
    if a.noise_levels.iter().any(|s| !(*s >= 0.0 && s.is_finite())) || a.noise_levels.windows(2).any(|w| w[1] < w[0]) {
        return Err(Failure::validation("--noise-levels must be finite, >= 0 and ascending"));
    }
    let model = files::model(&a.model)?;
    let baseline = a.pretrained.as_deref().map(files::model).transpose()?;
    let data = io::read_dataset(&a.dataset).invalid()?;
    check_names(&data, &model, &a.dataset)?;
    if let Some(b) = &baseline {
        check_names(&data, b, a.pretrained.as_deref().unwrap())?;
    }
    let limits = match &a.limits {
        Some(p) => {
            let l = io::read_limits(p).invalid()?;
            l.check_skeleton(model.skeleton(Side::B)).invalid_ctx(&p.display().to_string())?;
            Some(l)
        }
        None => None,
    };
    let human = data.clips_a();

    let outs = retarget_many(&model, &human, DEFAULT_OVERLAP.min(model.config().window / 2), a.workers).failed()?;
    let smoothness = mean_smoothness(&outs).failed()?;
    let base_outs = match &baseline {
        Some(b) => Some(retarget_many(b, &human, DEFAULT_OVERLAP.min(b.config().window / 2), a.workers).failed()?),
        None => None,
    };
    let smoothness_pretrained = base_outs.as_deref().map(mean_smoothness).transpose().failed()?;
    let sweep = noise_sweep(&model, &human, &a.noise_levels, a.seed).failed()?;

    let n = a.correlation_pairs.min(data.len());
    let window = model.config().window;
    let latent_correlation = if n >= 2 && data.pairs().iter().take(n).all(|p| p.0.frames() == window) {
        let matrix = latent_correlation_matrix(&model, &data.split_at(n).0).failed()?;
        let (diagonal_mean, off_diagonal_mean) = diagonal_contrast(&matrix);
        Some(Correlation { pairs: n, diagonal_mean, off_diagonal_mean, matrix })
    } else {
        None
    };

    let feasibility = match &limits {
        Some(l) => {
            let sb = model.skeleton(Side::B);
            let filtered = outs.iter().map(|c| dynamics_filter(sb, c, l)).collect::<Result<Vec<_>, _>>().failed()?;
            Some(Feasibility {
                model: merged_report(sb, &outs, l)?,
                model_filtered: merged_report(sb, &filtered, l)?,
                pretrained: base_outs.as_deref().map(|o| merged_report(sb, o, l)).transpose()?,
            })
        }
        None => None,
    };

    let report = Report {
        model: a.model.display().to_string(),
        pretrained: a.pretrained.as_ref().map(|p| p.display().to_string()),
        dataset: a.dataset.display().to_string(),
        clips: human.len(),
        seed: a.seed,
        smoothness,
        smoothness_pretrained,
        noise_sweep: sweep,
        latent_correlation,
        feasibility,
    };
    fs::create_dir_all(&a.report).failed()?;
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| Failure::runtime(e.to_string()))?;
    json.push('\n');
    fs::write(a.report.join("report.json"), json).failed()?;
    fs::write(a.report.join("noise_sweep.csv"), sweep_to_csv(&report.noise_sweep)).failed()?;
    eprintln!("wrote {}", a.report.display());
    Ok(())
}

pub fn bench(a: &BenchArgs) -> CliResult<()> {
    if a.batch_sizes.is_empty() || a.batch_sizes.contains(&0) {
        return Err(Failure::validation("--batch-sizes must be >= 1"));
    }
    if a.repeats == 0 || a.workers == 0 {
        return Err(Failure::validation("--repeats and --workers must be >= 1"));
    }
    let model = files::model(&a.model)?;
    let largest = *a.batch_sizes.iter().max().unwrap();
    let clips = bench_clips(&model, largest, a.seed).failed()?;
    let rows = a
        .batch_sizes
        .iter()
        .map(|&b| bench_row(&model, &clips[..b], b, a.workers, a.repeats))
        .collect::<Result<Vec<_>, _>>()
        .failed()?;
    let csv = bench_to_csv(&rows);
    match &a.output {
        Some(p) => {
            files::ensure_parent(p)?;
            fs::write(p, csv).failed()
        }
        None => std::io::stdout().write_all(csv.as_bytes()).failed(),
    }
}
