//! Command dispatch. Each command returns its output files as
//! `(file name, contents)`; the caller writes them and the manifest.

use propchaos::boltzmann::{count_recollisions, kac_model, sample_interaction_graph, uniform_clock_simulate, CollisionRun};
use propchaos::chaos::{sweep, SweepConfig};
use propchaos::coupling::CouplingReport;
use propchaos::jumps::{choose_leader_model, pdmp_simulate, JumpRun, LeaderKernel};
use propchaos::mckean::{
    kuramoto_model, linear_drift_model, nonlinear_reference, simulate_particles, synchronous_coupling,
    wrapped_normal_init, DiffusionRun, ReferenceConfig, SyncConfig,
};
use propchaos::oracle::{build_generator, exact_evolve, exact_marginal, tensor_power, write_distribution_csv, FiniteModel};
use propchaos::rng::{purpose, run_replicas};
use propchaos::state::{fmt_f64, write_trajectories_csv};
use propchaos::{Bundle, DiffusionModel, Error, ParticleState, RngStream, StreamRng};

use crate::config::Config;
use crate::error::CliResult;

pub type Outputs = Vec<(&'static str, Vec<u8>)>;

pub fn dispatch(cfg: &Config) -> CliResult<Outputs> {
    match cfg.command.as_str() {
        "simulate" => simulate(cfg),
        "oracle" => oracle(cfg),
        "sweep" => run_sweep(cfg),
        "couple" => couple(cfg),
        "graph-stats" => graph_stats(cfg),
        other => unreachable!("command `{other}` passed resolution"),
    }
}

fn unknown_model(tag: &str, valid: &[&str]) -> Error {
    Error::UnknownTag {
        kind: "model",
        tag: tag.to_string(),
        valid: valid.join(", "),
    }
}

fn diffusion_model(cfg: &Config, valid: &[&str]) -> CliResult<Box<dyn DiffusionModel<f64> + Sync>> {
    let sigma: f64 = cfg.get("sigma")?;
    Ok(match cfg.raw("model") {
        "kuramoto" => Box::new(kuramoto_model(cfg.get("k0")?, sigma)?),
        "linear-drift" => Box::new(linear_drift_model(1, sigma)?),
        other => return Err(unknown_model(other, valid).into()),
    })
}

fn categorical(p: &[f64], g: &mut StreamRng) -> usize {
    let u: f64 = g.uniform();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

const SIMULATE_MODELS: &[&str] = &["kuramoto", "linear-drift", "choose-leader", "kac"];

fn simulate(cfg: &Config) -> CliResult<Outputs> {
    let n: usize = cfg.get("n")?;
    let reps: usize = cfg.get("reps")?;
    let t: f64 = cfg.get("t")?;
    let root = RngStream::new(cfg.get("seed")?);
    let (mean, sd): (f64, f64) = (cfg.get("init_mean")?, cfg.get("init_sd")?);
    let bundles: Vec<propchaos::Result<Bundle>> = match cfg.raw("model") {
        "kuramoto" | "linear-drift" => {
            let model = diffusion_model(cfg, SIMULATE_MODELS)?;
            let run = DiffusionRun::new(t, cfg.get("dt")?, cfg.get("stride")?);
            let init = wrapped_normal_init(mean, sd);
            run_replicas(&root, reps, |_, rs| {
                let mut xs = vec![0.0; n];
                for (i, x) in xs.chunks_exact_mut(1).enumerate() {
                    init(&mut rs.split(i as u64).split(purpose::INIT).rng(), x);
                }
                let start = ParticleState::new(0.0, 1, model.domain(), xs)?;
                simulate_particles(model.as_ref(), &start, &run, &rs, None)
            })
        }
        "choose-leader" => {
            let f0: Vec<f64> = cfg.list("f0")?;
            let model = choose_leader_model(LeaderKernel::Finite {
                m: f0.len(),
                rows: cfg.list("kernel")?,
            })?;
            let run = JumpRun::new(t, cfg.get("grid")?).without_log();
            run_replicas(&root, reps, |_, rs| {
                let mut g = rs.split(purpose::INIT).rng();
                let xs = (0..n).map(|_| categorical(&f0, &mut g) as f64).collect();
                Ok(pdmp_simulate(&model, &ParticleState::from_scalars(0.0, xs)?, &run, &rs, None)?.bundle)
            })
        }
        "kac" => {
            let model = kac_model(cfg.get::<f64>("lambda")?);
            let run = CollisionRun::new(t, cfg.get("grid")?).without_log();
            run_replicas(&root, reps, |_, rs| {
                let mut g = rs.split(purpose::INIT).rng();
                let xs = (0..n).map(|_| mean + sd * g.normal::<f64>()).collect();
                Ok(uniform_clock_simulate(&model, &ParticleState::from_scalars(0.0, xs)?, &run, &rs, None)?.bundle)
            })
        }
        other => return Err(unknown_model(other, SIMULATE_MODELS).into()),
    };
    let bundles = bundles.into_iter().collect::<propchaos::Result<Vec<_>>>()?;
    let mut buf = Vec::new();
    write_trajectories_csv(&bundles, &mut buf)?;
    Ok(vec![("trajectories.csv", buf)])
}

fn oracle(cfg: &Config) -> CliResult<Outputs> {
    let n: usize = cfg.get("n")?;
    let f0: Vec<f64> = cfg.list("f0")?;
    let m = f0.len();
    let model = match cfg.raw("model") {
        "choose-leader" => FiniteModel::choose_leader(cfg.list("kernel")?, n)?,
        "kac-like" => FiniteModel::kac_like(m, n)?,
        other => return Err(unknown_model(other, &["choose-leader", "kac-like"]).into()),
    };
    let q = build_generator(&model)?;
    let f = exact_evolve(&q, &tensor_power(&f0, n), cfg.get("t")?)?;
    let marginal = exact_marginal(&f, m, n, cfg.get("k")?)?;
    let (mut law, mut marg) = (Vec::new(), Vec::new());
    write_distribution_csv(&f, &mut law)?;
    write_distribution_csv(&marginal, &mut marg)?;
    Ok(vec![("distribution.csv", law), ("marginal.csv", marg)])
}

fn run_sweep(cfg: &Config) -> CliResult<Outputs> {
    let sc = SweepConfig {
        model: cfg.raw("model").to_string(),
        metric: cfg.raw("metric").to_string(),
        ns: cfg.list("ns")?,
        reps: cfg.get("reps")?,
        seed: cfg.get("seed")?,
        t_end: cfg.get("t")?,
        dt: cfg.get("dt")?,
        k0: cfg.get("k0")?,
        sigma: cfg.get("sigma")?,
        init_mean: cfg.get("init_mean")?,
        init_sd: cfg.get("init_sd")?,
        p: cfg.get("p")?,
        q: cfg.get("q")?,
        k: cfg.get("k")?,
        reference_size: cfg.optional("reference_size")?,
        kernel: cfg.list("kernel")?,
        f0: cfg.list("f0")?,
        levels: cfg.get("levels")?,
    };
    let report = sweep(&sc)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    Ok(vec![("report.csv", buf)])
}

fn couple(cfg: &Config) -> CliResult<Outputs> {
    let model = diffusion_model(cfg, &["kuramoto", "linear-drift"])?;
    let ns: Vec<usize> = cfg.list("ns")?;
    let n_max = ns.iter().copied().max().ok_or(Error::InvalidInput("coupling needs at least one N".into()))?;
    let m_ref = cfg.optional("reference_size")?.unwrap_or(16 * n_max);
    let root = RngStream::new(cfg.get("seed")?);
    let run = DiffusionRun::new(cfg.get("t")?, cfg.get("dt")?, cfg.get("stride")?);
    let init = wrapped_normal_init(cfg.get("init_mean")?, cfg.get("init_sd")?);
    let reference = nonlinear_reference(
        model.as_ref(),
        init,
        m_ref,
        &run,
        &ReferenceConfig::default(),
        &root.split(purpose::REFERENCE),
    )?;
    let sync = SyncConfig {
        replicas: cfg.get("reps")?,
        p: cfg.get("p")?,
    };
    let reports = ns
        .iter()
        .map(|&n| synchronous_coupling(model.as_ref(), n, &reference, &run, init, &sync, &root.split(n as u64)))
        .collect::<propchaos::Result<Vec<_>>>()?;
    let mut buf = Vec::new();
    CouplingReport::write_csv(&reports, &mut buf)?;
    Ok(vec![("coupling.csv", buf)])
}

fn graph_stats(cfg: &Config) -> CliResult<Outputs> {
    let ns: Vec<usize> = cfg.list("ns")?;
    let lambda: f64 = cfg.get("lambda")?;
    let t: f64 = cfg.get("t")?;
    let reps: usize = cfg.get("reps")?;
    if reps == 0 {
        return Err(Error::InvalidInput("graph statistics need at least one replica".into()).into());
    }
    let root = RngStream::new(cfg.get("seed")?);
    let mut buf = b"N,reps,mean_routes,mean_collected,recollision_prob\n".to_vec();
    for &n in &ns {
        let stats = run_replicas(&root.split(n as u64), reps, |_, rs| {
            let g = sample_interaction_graph(n, lambda, t, 0, &rs)?;
            Ok((g.routes.len(), g.collected().len(), count_recollisions(&g) > 0))
        })
        .into_iter()
        .collect::<propchaos::Result<Vec<_>>>()?;
        let r = reps as f64;
        let routes = stats.iter().map(|s| s.0 as f64).sum::<f64>() / r;
        let collected = stats.iter().map(|s| s.1 as f64).sum::<f64>() / r;
        let recollided = stats.iter().filter(|s| s.2).count() as f64 / r;
        buf.extend(format!("{n},{reps},{},{},{}\n", fmt_f64(routes), fmt_f64(collected), fmt_f64(recollided)).bytes());
    }
    Ok(vec![("graph_stats.csv", buf)])
}
