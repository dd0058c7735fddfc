use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use reorient_core::cbf::{filter_with_terms, BarrierTerms};
use reorient_core::config::RunConfig;
use reorient_core::dynamics::RigidBodyState;
use reorient_core::envserver::{serve_stdio, serve_tcp, Session};
use reorient_core::montecarlo::{
    batch_csv, run_batch, run_episode, trace_csv, write_atomic, BatchPlan,
};
use reorient_core::policy::{BaselinePolicy, MlpPolicy, Policy};
use reorient_core::svg::episode_charts;
use reorient_core::{Quaternion, Vec3};

#[derive(Parser)]
#[command(name = "reorient", version, about = "Keep-out constrained spacecraft reorientation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(clap::Args)]
struct PolicyArgs {
    /// Policy weights JSON. The quaternion-feedback baseline is used when omitted.
    #[arg(long, conflicts_with = "baseline")]
    policy: Option<PathBuf>,
    /// Use the quaternion-feedback baseline controller.
    #[arg(long)]
    baseline: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its trace.
    Simulate {
        /// Run configuration; the bundled example scenario when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, value_enum)]
        filter: Option<Switch>,
        #[arg(long)]
        out: PathBuf,
        /// Also write φ(t) and margin charts as SVG.
        #[arg(long)]
        svg: bool,
    },
    /// Run a batch of randomized scenarios.
    Montecarlo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, value_enum)]
        filter: Option<Switch>,
        /// Barrier parameter override.
        #[arg(long)]
        mu: Option<f64>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; all cores when omitted.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write one trace CSV per episode.
        #[arg(long)]
        traces: bool,
    },
    /// Evaluate the barrier terms and the safety filter at one state.
    FilterCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        /// q0,q1,q2,q3,wx,wy,wz with rates in rad/s.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        state: Vec<f64>,
        /// Requested torque x,y,z in N·m.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        tau: Vec<f64>,
    },
    /// Serve the environment protocol over stdio or TCP.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Listen address, e.g. 127.0.0.1:5555; stdio when omitted.
        #[arg(long)]
        tcp: Option<String>,
    },
    /// Write the default run configuration.
    InitConfig {
        /// Destination file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("invalid config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn load_policy(args: &PolicyArgs, cfg: &RunConfig) -> Result<Box<dyn Policy>> {
    match &args.policy {
        Some(p) => Ok(Box::new(
            MlpPolicy::load(p).with_context(|| format!("invalid policy {}", p.display()))?,
        )),
        None => Ok(Box::new(BaselinePolicy { gains: cfg.baseline, tau_max: cfg.tau_max })),
    }
}

fn apply_overrides(cfg: &mut RunConfig, filter: Option<Switch>, mu: Option<f64>, seed: Option<u64>) -> Result<()> {
    if let Some(f) = filter {
        cfg.filter_enabled = f == Switch::On;
    }
    if let Some(mu) = mu {
        cfg.filter.mu = mu;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().context("invalid settings")?;
    Ok(())
}

/// Writes every file only after all of them have been produced in memory.
fn write_outputs(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for (name, bytes) in files {
        let path = dir.join(name);
        write_atomic(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

fn simulate(
    config: Option<&Path>,
    policy: &PolicyArgs,
    filter: Option<Switch>,
    out: &Path,
    svg: bool,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    apply_overrides(&mut cfg, filter, None, None)?;
    let policy = load_policy(policy, &cfg)?;
    let episode = cfg.episode()?;
    let rec = run_episode(&episode, policy.as_ref(), 0, cfg.seed)?;
    let mut files = vec![
        ("trace.csv".to_string(), trace_csv(&rec.steps).into_bytes()),
        ("summary.json".to_string(), serde_json::to_vec_pretty(&rec.summary)?),
    ];
    if svg {
        files.push(("trace.svg".to_string(), episode_charts(&rec.steps).into_bytes()));
    }
    write_outputs(out, &files)?;
    let s = &rec.summary;
    let settling = s.settling_time.map_or("not settled".to_string(), |t| format!("{t:.1} s"));
    println!(
        "reward {:.3}, settling {settling}, effort {:.3}, violated {}",
        s.reward, s.effort, s.violated
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn montecarlo(
    config: Option<&Path>,
    policy: &PolicyArgs,
    n: usize,
    filter: Option<Switch>,
    mu: Option<f64>,
    seed: Option<u64>,
    workers: Option<usize>,
    out: &Path,
    traces: bool,
) -> Result<()> {
    if n == 0 {
        bail!("--n must be at least 1");
    }
    if workers == Some(0) {
        bail!("--workers must be at least 1");
    }
    let mut cfg = load_config(config)?;
    apply_overrides(&mut cfg, filter, mu, seed)?;
    let policy = load_policy(policy, &cfg)?;
    let plan = BatchPlan {
        n,
        spec: cfg.curriculum_spec(),
        template: cfg.episode()?,
        master_seed: cfg.seed,
    };
    let result = run_batch(&plan, policy.as_ref(), workers)?;
    let mut files = vec![
        ("batch.csv".to_string(), batch_csv(&result.episodes).into_bytes()),
        ("summary.json".to_string(), serde_json::to_vec_pretty(&result.summary)?),
    ];
    if traces {
        for i in 0..n {
            let rec = plan.run_one(i, policy.as_ref())?;
            files.push((format!("trace_{i:05}.csv"), trace_csv(&rec.steps).into_bytes()));
        }
    }
    write_outputs(out, &files)?;
    println!("{}", result.summary.to_table());
    Ok(())
}

fn filter_check(config: Option<&Path>, state: &[f64], tau: &[f64]) -> Result<()> {
    let cfg = load_config(config)?;
    let episode = cfg.episode()?;
    let Some(zone) = episode.zone.as_ref() else {
        bail!("the configuration has no keep-out zone");
    };
    if state.len() != 7 || tau.len() != 3 {
        bail!("--state needs 7 values and --tau needs 3");
    }
    if state.iter().chain(tau).any(|x| !x.is_finite()) {
        bail!("state and torque must be finite");
    }
    let q = Quaternion::new(state[0], state[1], state[2], state[3]);
    if !q.is_unit(1e-6) {
        bail!("state quaternion must have unit norm (got {})", q.norm());
    }
    let s = RigidBodyState::new(q, Vec3::new(state[4], state[5], state[6]));
    let tau = Vec3::new(tau[0], tau[1], tau[2]);
    let params = &cfg.filter;
    let terms = BarrierTerms::new(&s, zone, &episode.inertia);
    let out = filter_with_terms(&terms, &tau, params);
    let member = terms.in_safe_input_set(&tau, params);
    println!("kappa      {}", terms.kappa);
    println!("kappa_dot  {}", terms.kappa_dot);
    println!("h          {}", terms.h(params));
    println!("p_kappa    {}", terms.p_kappa(&tau, params.period, params));
    println!("p_h        {}", terms.p_h(&tau, params.period, params));
    println!("member     {member}");
    println!(
        "tau_safe   {},{},{}",
        out.tau_safe.x, out.tau_safe.y, out.tau_safe.z
    );
    println!("branch     {}", out.branch.as_str());
    Ok(())
}

fn serve(config: Option<&Path>, tcp: Option<&str>) -> Result<()> {
    let cfg = load_config(config)?;
    let template = reorient_core::env::EpisodeConfig { filter_enabled: false, ..cfg.episode()? };
    let mut session = Session::new(template)?;
    match tcp {
        Some(addr) => serve_tcp(&mut session, addr, |a| eprintln!("listening on {a}"))?,
        None => serve_stdio(&mut session)?,
    }
    Ok(())
}

fn init_config(out: Option<&Path>) -> Result<()> {
    let text = RunConfig::default().to_json() + "\n";
    match out {
        Some(p) => write_atomic(p, text.as_bytes()).with_context(|| format!("cannot write {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate { config, policy, filter, out, svg } => {
            simulate(config.as_deref(), policy, *filter, out, *svg)
        }
        Command::Montecarlo { config, policy, n, filter, mu, seed, workers, out, traces } => montecarlo(
            config.as_deref(),
            policy,
            *n,
            *filter,
            *mu,
            *seed,
            *workers,
            out,
            *traces,
        ),
        Command::FilterCheck { config, state, tau } => filter_check(config.as_deref(), state, tau),
        Command::Serve { config, tcp } => serve(config.as_deref(), tcp.as_deref()),
        Command::InitConfig { out } => init_config(out.as_deref()),
    }
}
