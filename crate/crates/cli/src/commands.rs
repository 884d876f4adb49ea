use std::path::{Path, PathBuf};
use std::time::Instant;

use odelearn::bioreactor::{fbr_rhs, synthesize, FbrParams, FbrSystem, Haldane, STATE_NAMES};
use odelearn::eval::{
    compare_models, compare_trajectories, extract_mu_curve, resample_rk4, rollout_learned_dynamics,
    rollout_learned_mu, ComparisonEntry, Integrator, Method, Metrics,
};
use odelearn::nn::{mlp_eval, Checkpoint, MlpModel};
use odelearn::ode::{MultistepScheme, Trajectory};
use odelearn::train_continuous::{train_continuous, CollocationSampling, ContinuousTrainConfig};
use odelearn::train_discrete::{default_hidden, train_discrete, DiscreteTrainConfig, TrainConfig, TrainReport};
use odelearn::Target;
use rand::{Rng, SeedableRng};
use serde_json::json;

use crate::args::*;
use crate::error::{usage, CliError, CliResult};
use crate::io::{fmt, read_model, read_trajectory, write_table, write_text, write_trajectory};
use crate::manifest::{FileHash, ManifestBuilder, RunManifest};
use crate::plot::{self, Panel, Series, Stroke};
use crate::presets::{self, Preset};

pub fn run(cli: Cli, argv: &[String]) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => synth(&a, argv),
        Command::Train(a) => train(&a, argv),
        Command::Rollout(a) => rollout(&a, argv),
        Command::Eval(a) => eval(&a, argv),
        Command::Compare(a) => compare(&a, argv),
        Command::Plot(a) => plot_cmd(&a, argv),
        Command::Replay(a) => replay(&a),
    }
}

fn target_of(t: TargetArg) -> Target {
    match t {
        TargetArg::Dynamics => Target::Dynamics,
        TargetArg::Mu => Target::Constitutive,
    }
}

fn ic3(v: &[f64]) -> CliResult<[f64; 3]> {
    v.try_into()
        .map_err(|_| usage(format!("initial state needs 3 values X,S,V, got {}", v.len())))
}

fn synth(a: &SynthArgs, argv: &[String]) -> CliResult<()> {
    let ic = ic3(&a.ic)?;
    if !(0.0..1.0).contains(&a.drop_fraction) {
        return Err(usage("--drop-fraction must lie in [0, 1)"));
    }
    let p = FbrParams::default();
    let mut traj = synthesize(&ic, a.duration, a.dt, &p)?;
    if a.drop_fraction > 0.0 {
        traj = drop_samples(&traj, a.drop_fraction, a.seed)?;
    }
    write_trajectory(&a.out, &traj)?;
    let mut mb = ManifestBuilder::new("synth", argv);
    if a.drop_fraction > 0.0 {
        mb.seed(a.seed);
    }
    mb.config(&json!({
        "ic": ic,
        "duration": a.duration,
        "dt": a.dt,
        "drop_fraction": a.drop_fraction,
        "params": p,
    }))
    .output(&a.out)
    .finish(&a.out)?;
    println!("wrote {} samples to {}", traj.len(), a.out.display());
    Ok(())
}

/// Drops interior samples independently with probability `fraction`;
/// the end points are kept so the time window is unchanged.
pub fn drop_samples(traj: &Trajectory, fraction: f64, seed: u64) -> odelearn::Result<Trajectory> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = traj.len();
    let keep: Vec<bool> = (0..n)
        .map(|i| {
            let u: f64 = rng.gen();
            i == 0 || i + 1 == n || u >= fraction
        })
        .collect();
    traj.filter(|i| keep[i])
}

fn resolve_preset(name: Option<&str>) -> CliResult<Option<&'static Preset>> {
    name.map(|n| {
        presets::find(n).ok_or_else(|| {
            usage(format!("unknown preset '{n}'; available: {}", presets::names().join(", ")))
        })
    })
    .transpose()
}

fn with_ext(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn train(a: &TrainArgs, argv: &[String]) -> CliResult<()> {
    let preset = resolve_preset(a.preset.as_deref())?;
    let method = a
        .method
        .map(|m| match m {
            MethodArg::Discrete => Method::Discrete,
            MethodArg::Continuous => Method::Continuous,
        })
        .or(preset.map(|p| p.method))
        .ok_or_else(|| usage("--method is required unless a preset is given"))?;
    let target = a
        .target
        .map(target_of)
        .or(preset.map(|p| p.target))
        .ok_or_else(|| usage("--target is required unless a preset is given"))?;
    let p = FbrParams::default();
    let mut mb = ManifestBuilder::new("train", argv);

    let data = if a.data.is_empty() {
        let preset = preset.ok_or_else(|| usage("--data is required unless a preset is given"))?;
        let data = preset.training_data(&p)?;
        for (i, tr) in data.iter().enumerate() {
            let path = with_ext(&a.out, &format!("train{i}.csv"));
            write_trajectory(&path, tr)?;
            mb.output(&path);
        }
        data
    } else {
        let mut data = Vec::new();
        for path in &a.data {
            data.push(read_trajectory(path)?);
            mb.input(path)?;
        }
        data
    };

    let seed = a.seed.or(preset.map(|p| p.seed)).unwrap_or(0);
    mb.seed(seed);
    let normalize = if a.no_normalize {
        Some(false)
    } else if a.normalize {
        Some(true)
    } else {
        None
    };
    let start = Instant::now();
    let report = match method {
        Method::Discrete => {
            let mut c = match preset {
                Some(pr) if pr.method == Method::Discrete && pr.target == target => pr.discrete_config(),
                _ => DiscreteTrainConfig::new(target),
            };
            c.target = target;
            c.seed = seed;
            c.threads = a.threads;
            if let Some(s) = &a.scheme {
                c.scheme = MultistepScheme::by_name(s)?;
            }
            if let Some(n) = a.iters {
                c.iterations = n;
            }
            if let Some(lr) = a.lr {
                c.adam.learning_rate = lr;
            }
            if let Some(lr) = a.lr_end {
                c.adam.final_learning_rate = Some(lr);
            }
            if let Some(h) = &a.hidden {
                c.hidden = h.clone();
            }
            if let Some(nz) = normalize {
                c.normalize = nz;
            }
            for (flag, set) in [
                ("--n-colloc", a.n_colloc.is_some()),
                ("--sampling", a.sampling.is_some()),
                ("--w-data", a.w_data.is_some()),
                ("--w-residual", a.w_residual.is_some()),
                ("--y-hidden", a.y_hidden.is_some()),
                ("--no-time-scaling", a.no_time_scaling),
            ] {
                if set {
                    return Err(usage(format!("{flag} applies to --method continuous only")));
                }
            }
            train_discrete(&c, &data, Some(&p))?
        }
        Method::Continuous => {
            if data.len() != 1 {
                return Err(usage(format!(
                    "collocation training takes exactly one trajectory, got {}",
                    data.len()
                )));
            }
            if a.scheme.is_some() {
                return Err(usage("--scheme applies to --method discrete only"));
            }
            let mut c = match preset {
                Some(pr) if pr.method == Method::Continuous && pr.target == target => pr.continuous_config(),
                _ => ContinuousTrainConfig::new(target),
            };
            c.target = target;
            c.seed = seed;
            c.threads = a.threads;
            if let Some(n) = a.iters {
                c.iterations = n;
            }
            if let Some(lr) = a.lr {
                c.adam.learning_rate = lr;
            }
            if let Some(lr) = a.lr_end {
                c.adam.final_learning_rate = Some(lr);
            }
            if let Some(h) = &a.hidden {
                c.aux_hidden = h.clone();
            }
            if a.hidden.is_none() && preset.is_none_or(|pr| pr.target != target) {
                c.aux_hidden = default_hidden(target);
            }
            if let Some(h) = &a.y_hidden {
                c.y_hidden = h.clone();
            }
            if let Some(nz) = normalize {
                c.normalize = nz;
            }
            if let Some(n) = a.n_colloc {
                c.n_collocation = n;
            }
            if let Some(s) = a.sampling {
                c.sampling = match s {
                    SamplingArg::Grid => CollocationSampling::UniformGrid,
                    SamplingArg::Random => CollocationSampling::RandomUniform,
                };
            }
            if let Some(w) = a.w_data {
                c.weights.data = w;
            }
            if let Some(w) = a.w_residual {
                c.weights.residual = w;
            }
            if a.no_time_scaling {
                c.time_scaling = false;
            }
            train_continuous(&c, &data[0], Some(&p))?
        }
    };
    eprintln!("training took {:.1} s", start.elapsed().as_secs_f64());

    write_checkpoints(&report, &a.out, &mut mb)?;
    let loss_path = with_ext(&a.out, "loss.csv");
    write_loss_history(&report, &loss_path)?;
    mb.output(&loss_path);
    mb.config(&json!({
        "preset": preset.map(|p| p.name),
        "train": report.config,
        "params": p,
    }));
    mb.finish(&a.out)?;
    println!("final loss {}", fmt(report.final_loss()));
    Ok(())
}

fn write_checkpoints(report: &TrainReport, out: &Path, mb: &mut ManifestBuilder) -> CliResult<()> {
    let target = match &report.config {
        TrainConfig::Discrete(c) => c.target,
        TrainConfig::Continuous(c) => c.target,
    };
    let ck = Checkpoint::from_model(&report.final_model).with_role(target.as_str());
    write_text(out, &ck.to_json()?)?;
    mb.output(out);
    if let (Some(y), Some(w)) = (&report.state_model, report.time_window) {
        let path = with_ext(out, "y.json");
        let ck = Checkpoint::from_model(y).with_role("state").with_time_window(w);
        write_text(&path, &ck.to_json()?)?;
        mb.output(&path);
    }
    Ok(())
}

fn write_loss_history(report: &TrainReport, path: &Path) -> CliResult<()> {
    let continuous = report.state_model.is_some();
    let rows: Vec<Vec<String>> = report
        .loss_history
        .iter()
        .map(|r| {
            let mut row = vec![r.iteration.to_string(), fmt(r.loss)];
            if continuous {
                row.push(fmt(r.data_term.unwrap_or(f64::NAN)));
                row.push(fmt(r.residual_term.unwrap_or(f64::NAN)));
            }
            row
        })
        .collect();
    let header: &[&str] = if continuous {
        &["iteration", "loss", "data_term", "residual_term"]
    } else {
        &["iteration", "loss"]
    };
    write_table(path, header, &rows)
}

fn parse_integrator(name: &str) -> CliResult<Integrator> {
    if name == "rk4" {
        Ok(Integrator::Rk4)
    } else {
        Ok(Integrator::Multistep {
            scheme: MultistepScheme::by_name(name)?,
        })
    }
}

/// Kind of network stored in a checkpoint.
fn checkpoint_kind(path: &Path, ck: &Checkpoint, model: &MlpModel) -> CliResult<Target> {
    match ck.role.as_deref() {
        Some("dynamics") => Ok(Target::Dynamics),
        Some("mu") => Ok(Target::Constitutive),
        Some(other) => Err(usage(format!(
            "{} holds a '{other}' network, not learned dynamics or a growth rate",
            path.display()
        ))),
        None => match (model.input_width(), model.output_width()) {
            (3, 3) => Ok(Target::Dynamics),
            (3, 1) => Ok(Target::Constitutive),
            (i, o) => Err(usage(format!("{}: cannot roll out a {i} -> {o} network", path.display()))),
        },
    }
}

fn rollout(a: &RolloutArgs, argv: &[String]) -> CliResult<()> {
    let ic = ic3(&a.ic)?;
    let (model, ck) = read_model(&a.model)?;
    let kind = checkpoint_kind(&a.model, &ck, &model)?;
    if let Some(mode) = a.mode {
        if target_of(mode) != kind {
            return Err(usage(format!(
                "--mode {} does not match checkpoint {} ({})",
                target_of(mode),
                a.model.display(),
                kind
            )));
        }
    }
    let integrator = parse_integrator(&a.integrator)?;
    let p = FbrParams::default();
    let r = match kind {
        Target::Dynamics => rollout_learned_dynamics(&model, &ic, a.duration, a.dt, &integrator)?,
        Target::Constitutive => rollout_learned_mu(&model, &ic, a.duration, a.dt, &p, &integrator)?,
    };
    if let Some(t) = r.blow_up {
        log::warn!("rollout blew up at t = {t}; output truncated");
    }
    write_trajectory(&a.out, &r.trajectory)?;
    let mut mb = ManifestBuilder::new("rollout", argv);
    mb.source("rollout")
        .input(&a.model)?
        .config(&json!({
            "ic": ic,
            "duration": a.duration,
            "dt": a.dt,
            "mode": kind,
            "integrator": integrator,
            "params": p,
            "blow_up": r.blow_up,
        }))
        .output(&a.out)
        .finish(&a.out)?;
    println!("wrote {} samples to {}", r.trajectory.len(), a.out.display());
    Ok(())
}

const METRICS_HEADER: [&str; 6] = ["state", "rmse", "rel_rmse", "max_abs", "horizon", "horizon_time"];

fn metrics_rows(m: &Metrics) -> Vec<Vec<String>> {
    STATE_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            vec![
                name.to_string(),
                fmt(m.rmse[k]),
                fmt(m.rel_rmse[k]),
                fmt(m.max_abs[k]),
                m.horizon.to_string(),
                fmt(m.horizon_time),
            ]
        })
        .collect()
}

fn eval(a: &EvalArgs, argv: &[String]) -> CliResult<()> {
    let pred = read_trajectory(&a.pred)?;
    let mut truth = read_trajectory(&a.truth)?;
    let same_grid = pred.len() == truth.len()
        && pred.times().iter().zip(truth.times()).all(|(x, y)| (x - y).abs() <= 1e-9 * y.abs().max(1.0));
    if !same_grid && a.resample {
        if (pred.t0() - truth.t0()).abs() > 1e-12 {
            return Err(usage("--resample needs both trajectories to start at the same time"));
        }
        let p = FbrParams::default();
        truth = resample_rk4(&FbrSystem::haldane(p), truth.initial_state(), pred.times(), 0.01)?;
    }
    let m = compare_trajectories(&pred, &truth)?;
    write_table(&a.out, &METRICS_HEADER, &metrics_rows(&m))?;
    let mut mb = ManifestBuilder::new("eval", argv);
    mb.input(&a.pred)?
        .input(&a.truth)?
        .config(&json!({ "resampled": !same_grid && a.resample }))
        .output(&a.out)
        .finish(&a.out)?;
    for (k, name) in STATE_NAMES.iter().enumerate() {
        println!("{name}: rmse {:.4e} rel {:.4e}", m.rmse[k], m.rel_rmse[k]);
    }
    Ok(())
}

fn compare(a: &CompareArgs, argv: &[String]) -> CliResult<()> {
    let ic = ic3(&a.ic)?;
    let scheme = MultistepScheme::by_name(&a.scheme)?;
    let slots = [
        (&a.discrete_dynamics, Method::Discrete, Target::Dynamics),
        (&a.discrete_mu, Method::Discrete, Target::Constitutive),
        (&a.continuous_dynamics, Method::Continuous, Target::Dynamics),
        (&a.continuous_mu, Method::Continuous, Target::Constitutive),
    ];
    let mut mb = ManifestBuilder::new("compare", argv);
    let mut models = Vec::new();
    for (path, method, target) in slots {
        if let Some(path) = path {
            let (model, ck) = read_model(path)?;
            let kind = checkpoint_kind(path, &ck, &model)?;
            if kind != target {
                return Err(usage(format!("{} holds a {kind} network, expected {target}", path.display())));
            }
            mb.input(path)?;
            models.push((method, target, model));
        }
    }
    if models.is_empty() {
        return Err(usage("give at least one checkpoint to compare"));
    }
    let entries: Vec<ComparisonEntry> = models
        .iter()
        .map(|(method, target, model)| ComparisonEntry {
            method: *method,
            target: *target,
            model,
            integrator: match method {
                Method::Discrete => Integrator::Multistep { scheme: scheme.clone() },
                Method::Continuous => Integrator::Rk4,
            },
        })
        .collect();
    let p = FbrParams::default();
    let table = compare_models(&entries, &ic, a.duration, a.dt, &p)?;
    let header = [
        "method", "target", "integrator", "blow_up", "score", "rel_rmse_X", "rel_rmse_S", "rel_rmse_V",
        "rmse_X", "rmse_S", "rmse_V", "horizon_time", "expected_poor",
    ];
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.method.as_str().to_string(),
                r.target.to_string(),
                r.integrator.clone(),
                r.blow_up.map(fmt).unwrap_or_default(),
                fmt(r.score),
            ];
            row.extend(r.metrics.rel_rmse.iter().map(|v| fmt(*v)));
            row.extend(r.metrics.rmse.iter().map(|v| fmt(*v)));
            row.push(fmt(r.metrics.horizon_time));
            row.push(r.expected_poor.to_string());
            row
        })
        .collect();
    write_table(&a.out, &header, &rows)?;
    mb.config(&json!({ "ic": ic, "duration": a.duration, "dt": a.dt, "scheme": scheme, "params": p }))
        .output(&a.out)
        .finish(&a.out)?;
    for r in &table.rows {
        println!(
            "{:<10} {:<8} score {:.4e}{}",
            r.method.as_str(),
            r.target.as_str(),
            r.score,
            if r.blow_up.is_some() { " (blew up)" } else { "" }
        );
    }
    for c in &table.claims {
        println!(
            "{}: growth-rate model {} full-dynamics model ({:.4e} vs {:.4e})",
            c.method.as_str(),
            if c.holds { "beats" } else { "does not beat" },
            c.constitutive_score,
            c.dynamics_score
        );
    }
    Ok(())
}

const TRAIN_COLORS: [&str; 2] = ["red", "magenta"];

fn series_of(traj: &Trajectory, label: &str, color: &'static str, stroke: Stroke, f: impl Fn(f64, &[f64]) -> f64) -> Series {
    let pts = traj.times().iter().zip(traj.states()).map(|(&t, y)| (t, f(t, y))).collect();
    Series::new(label, color, stroke, pts)
}

fn plot_cmd(a: &PlotArgs, argv: &[String]) -> CliResult<()> {
    let mut mb = ManifestBuilder::new("plot", argv);
    let mut load = |path: &Path| -> CliResult<Trajectory> {
        mb.input(path)?;
        read_trajectory(path)
    };
    let train: Vec<Trajectory> = a.train.iter().map(|p| load(p)).collect::<CliResult<_>>()?;
    let test = a.test.as_deref().map(&mut load).transpose()?;
    let learned = a.learned.as_deref().map(&mut load).transpose()?;
    let model = match &a.model {
        Some(path) => {
            let (m, ck) = read_model(path)?;
            let kind = checkpoint_kind(path, &ck, &m)?;
            mb.input(path)?;
            Some((m, kind))
        }
        None => None,
    };
    let p = FbrParams::default();
    let labeled: Vec<(Trajectory, String, &'static str, Stroke)> = train
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), format!("training {}", i + 1), TRAIN_COLORS[i % 2], Stroke::Solid))
        .chain(test.iter().map(|t| (t.clone(), "test".to_string(), "blue", Stroke::Dashed)))
        .collect();

    let (title, panels) = match a.kind {
        PlotKind::States => {
            if labeled.is_empty() && learned.is_none() {
                return Err(usage("states plot needs --train, --test or --learned"));
            }
            let panels = (0..3)
                .map(|k| {
                    let mut series: Vec<Series> = labeled
                        .iter()
                        .map(|(t, l, c, s)| series_of(t, l, c, *s, |_, y| y[k]))
                        .collect();
                    if let Some(t) = &learned {
                        series.push(series_of(t, "learned", "black", Stroke::Dashed, |_, y| y[k]));
                    }
                    Panel {
                        title: STATE_NAMES[k].into(),
                        x_label: "t (s)".into(),
                        y_label: STATE_NAMES[k].into(),
                        series,
                    }
                })
                .collect();
            ("State trajectories", panels)
        }
        PlotKind::Rhs => {
            let (m, kind) = model.as_ref().ok_or_else(|| usage("rhs plot needs --model"))?;
            let learned = learned.as_ref().ok_or_else(|| usage("rhs plot needs --learned"))?;
            let truth = |y: &[f64]| fbr_rhs(y, 0.0, &p, &Haldane(p)).map(|v| v.to_vec());
            let model_rhs = |y: &[f64]| -> odelearn::Result<Vec<f64>> {
                match kind {
                    Target::Dynamics => mlp_eval(m, y),
                    Target::Constitutive => fbr_rhs(y, 0.0, &p, m).map(|v| v.to_vec()),
                }
            };
            let eval_rows = |t: &Trajectory, f: &dyn Fn(&[f64]) -> odelearn::Result<Vec<f64>>| {
                t.states().iter().map(|y| f(y)).collect::<odelearn::Result<Vec<_>>>()
            };
            let mut rhs_sets = Vec::new();
            for (t, l, c, s) in &labeled {
                rhs_sets.push((t, eval_rows(t, &truth)?, l.clone(), *c, *s));
            }
            rhs_sets.push((learned, eval_rows(learned, &model_rhs)?, "learned".into(), "black", Stroke::Dashed));
            let panels = (0..3)
                .map(|k| Panel {
                    title: format!("d{}/dt", STATE_NAMES[k]),
                    x_label: "t (s)".into(),
                    y_label: format!("d{}/dt", STATE_NAMES[k]),
                    series: rhs_sets
                        .iter()
                        .map(|(t, rows, l, c, s)| {
                            Series::new(l.clone(), c, *s, t.times().iter().zip(rows).map(|(&x, r)| (x, r[k])).collect())
                        })
                        .collect(),
                })
                .collect();
            ("Right-hand side", panels)
        }
        PlotKind::MuS | PlotKind::MuT => {
            let (m, kind) = model.as_ref().ok_or_else(|| usage("growth-rate plots need --model"))?;
            if *kind != Target::Constitutive {
                return Err(usage("growth-rate plots need a growth-rate checkpoint"));
            }
            let reference = learned
                .as_ref()
                .or(test.as_ref())
                .ok_or_else(|| usage("growth-rate plots need --learned or --test"))?;
            let curve = extract_mu_curve(m, reference, &p)?;
            let x: &[f64] = if a.kind == PlotKind::MuS { &curve.s } else { &curve.t };
            let series = vec![
                Series::new("Haldane", "blue", Stroke::Dashed, x.iter().copied().zip(curve.mu_true.iter().copied()).collect()),
                Series::new("learned", "black", Stroke::Dashed, x.iter().copied().zip(curve.mu_learned.iter().copied()).collect()),
            ];
            let (title, x_label) = if a.kind == PlotKind::MuS {
                ("Growth rate vs substrate", "S (g/L)")
            } else {
                ("Growth rate vs time", "t (s)")
            };
            (
                title,
                vec![Panel {
                    title: "mu".into(),
                    x_label: x_label.into(),
                    y_label: "mu (1/s)".into(),
                    series,
                }],
            )
        }
    };
    let svg = plot::render(a.title.as_deref().unwrap_or(title), &panels);
    write_text(&a.out, &svg)?;
    mb.config(&json!({ "kind": format!("{:?}", a.kind) }))
        .output(&a.out)
        .finish(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn replay(a: &ReplayArgs) -> CliResult<()> {
    use clap::Parser;
    let manifest = RunManifest::read(&a.manifest)?;
    for input in &manifest.inputs {
        let now = FileHash::of(Path::new(&input.path))?;
        if now.sha256 != input.sha256 {
            return Err(usage(format!("input {} changed since the recorded run", input.path)));
        }
    }
    let full: Vec<String> = std::iter::once("odelearn".to_string())
        .chain(manifest.argv.iter().cloned())
        .collect();
    let cli = Cli::try_parse_from(&full).map_err(|e| usage(format!("recorded arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(usage("a manifest cannot record a replay"));
    }
    run(cli, &manifest.argv)?;
    let mut differing = Vec::new();
    for out in &manifest.outputs {
        if FileHash::of(Path::new(&out.path))?.sha256 != out.sha256 {
            differing.push(out.path.clone());
        }
    }
    if !differing.is_empty() {
        return Err(CliError::Usage(format!("replay changed outputs: {}", differing.join(", "))));
    }
    println!("reproduced {} outputs bit-identically", manifest.outputs.len());
    Ok(())
}
