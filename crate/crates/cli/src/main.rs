use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use paradae::harness::{
    evaluate, run_offline, run_online, save_rom, sigma_plot, simulate, Bases, Experiment, ExperimentConfig, Model,
    SystemSource,
};
use paradae::linalg::sparse;
use paradae::lyapunov::{dense_projected_lyap_oracle, quasi_weierstrass_oracle, solve_gramian, AdiOptions, Side};
use paradae::models::{make_stokes, make_triple_chain};
use paradae::param_system::bundle::{load_bundle, save_bundle_with_metadata};
use paradae::param_system::SystemKind;
use serde_json::json;

#[derive(Parser)]
#[command(name = "paradae", version, about = "Reduced basis balanced truncation for parametric DAEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the offline greedy tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Overrides the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parameter sweeps.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Clone)]
struct AtMu {
    #[command(flatten)]
    common: Common,
    /// Parameter as a comma-separated list; repeat for several parameters.
    #[arg(long, value_parser = parse_mu)]
    mu: Vec<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Writes a model generator's system as a bundle.
    Generate {
        /// Generator configuration: `{"stokes": {...}}` or `{"triple_chain": {"chain": {...}}}`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Builds and saves both reduced bases.
    Offline(Common),
    /// Builds reduced models at the given parameters from saved bases.
    Online(AtMu),
    /// Sigma plot of the full model, and of a saved reduced model if given.
    Sigma {
        #[command(flatten)]
        at: AtMu,
        /// Reduced model bundle to compare against.
        #[arg(long)]
        rom: Option<PathBuf>,
    },
    /// Time simulation of the configured scenario.
    Simulate {
        #[command(flatten)]
        at: AtMu,
        /// Simulates this reduced model bundle instead of the full model.
        #[arg(long)]
        rom: Option<PathBuf>,
    },
    /// Online phase plus full-versus-reduced comparison.
    Compare(AtMu),
    /// Dense cross-checks of the low-rank solvers at desk scale.
    Oracle(AtMu),
}

fn parse_mu(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',').map(|v| v.trim().parse::<f64>().map_err(|e| format!("'{v}': {e}"))).collect()
}

fn setup(common: &Common) -> Result<Experiment> {
    if let Some(t) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("configuring the worker pool")?;
    }
    let mut cfg = ExperimentConfig::from_file(&common.config).with_context(|| format!("reading {}", common.config.display()))?;
    if let Some(t) = common.tol {
        cfg.offline.tol = t;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&common.out)?;
    Ok(Experiment::new(cfg)?)
}

fn params(at: &AtMu, exp: &Experiment) -> Result<Vec<Vec<f64>>> {
    let mus = if at.mu.is_empty() { exp.config.mu.clone() } else { at.mu.clone() };
    if mus.is_empty() {
        bail!("no parameter given: use --mu or the config's \"mu\" list");
    }
    Ok(mus)
}

fn bases(exp: &Experiment, out: &Path) -> Result<(Bases, Option<f64>)> {
    if out.join("controllability/basis.json").is_file() && out.join("observability/basis.json").is_file() {
        info!("loading bases from {}", out.display());
        return Ok((Bases::load(out)?, None));
    }
    info!("no saved bases in {}; running the offline phase", out.display());
    let (b, r) = run_offline(exp, Some(out))?;
    Ok((b, Some(r.wall_time)))
}

fn rom_model(dir: &Path) -> Result<Model> {
    let sys = load_bundle(dir)?;
    if sys.kind != SystemKind::General {
        bail!("{} is not a reduced model bundle", dir.display());
    }
    let m = sys.at(&[])?;
    Ok(Model::dense("rom", &sparse::to_dense(&m.e), &sparse::to_dense(&m.a), &m.b, &m.c)?)
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Generate { config, out } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let source: SystemSource = serde_json::from_str(&text)?;
            let (sys, meta) = match &source {
                SystemSource::Stokes(c) => {
                    let (sys, st) = make_stokes(c)?;
                    let (n, q) = c.dimensions();
                    let b2_row = (st.has_improper_input()).then_some(q - 1);
                    (sys, json!({ "generator": source, "n": n, "q": q, "b2_pressure_index": b2_row }))
                }
                SystemSource::TripleChain { chain, .. } => {
                    let (sys, _) = make_triple_chain(chain)?;
                    (sys, json!({ "generator": source, "input_position": chain.input_position() }))
                }
                SystemSource::Bundle { .. } => bail!("generate needs a model generator config"),
            };
            save_bundle_with_metadata(&sys, &out, meta)?;
            info!("wrote {} states to {}", sys.n_state(), out.display());
        }
        Command::Offline(common) => {
            let exp = setup(&common)?;
            let (_, rep) = run_offline(&exp, Some(&common.out))?;
            for s in &rep.sides {
                info!("{:?}: dimension {}, {} greedy iterations, final max {:e}", s.side, s.dim, s.greedy_iterations, s.final_max);
            }
        }
        Command::Online(at) => {
            let exp = setup(&at.common)?;
            let (b, _) = bases(&exp, &at.common.out)?;
            for (k, mu) in params(&at, &exp)?.iter().enumerate() {
                let (rom, rep) = run_online(&exp, &b, mu)?;
                save_rom(&rom, &rep, at.common.out.join(format!("mu_{k}/rom")))?;
                info!("mu = {mu:?}: ROM order {} ({} proper, {} improper) in {:.3e} s", rep.rom_order, rep.r_p, rep.r_i, rep.wall_time);
            }
        }
        Command::Sigma { at, rom } => {
            let exp = setup(&at.common)?;
            let other = rom.as_deref().map(rom_model).transpose()?;
            for (k, mu) in params(&at, &exp)?.iter().enumerate() {
                let fom = exp.full_model(mu)?;
                let t = sigma_plot(&fom, other.as_ref(), &exp.config.frequency.omegas())?;
                let dir = at.common.out.join(format!("mu_{k}"));
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("sigma.csv"), t.to_csv()?)?;
                write_json(&dir.join("sigma.json"), &t)?;
                info!("mu = {mu:?}: {} rows, {} flagged", t.rows.len(), t.flagged_rows());
            }
        }
        Command::Simulate { at, rom } => {
            let exp = setup(&at.common)?;
            let sc = exp.config.time.as_ref().context("config has no \"time\" scenario")?.resolve()?;
            let red = rom.as_deref().map(rom_model).transpose()?;
            for (k, mu) in params(&at, &exp)?.iter().enumerate() {
                let model = match &red {
                    Some(r) => r.clone(),
                    None => exp.full_model(mu)?,
                };
                let tr = simulate(&model, &sc.input, sc.horizon, sc.step)?;
                let dir = at.common.out.join(format!("mu_{k}"));
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join(format!("trajectory_{}.csv", model.label)), tr.to_csv()?)?;
                info!("mu = {mu:?}: {} steps, consistency residual {:e}", tr.t.len() - 1, tr.consistency_residual);
            }
        }
        Command::Compare(at) => {
            let exp = setup(&at.common)?;
            let (b, offline_time) = bases(&exp, &at.common.out)?;
            for (k, mu) in params(&at, &exp)?.iter().enumerate() {
                let (rom, online, rep) = evaluate(&exp, &b, mu, offline_time)?;
                let dir = at.common.out.join(format!("mu_{k}"));
                save_rom(&rom, &online, dir.join("rom"))?;
                rep.write(&dir)?;
                info!(
                    "mu = {mu:?}: ROM order {}, max sigma error {:e}, max output error {:?}",
                    rom.order(),
                    rep.max_sigma_error().unwrap_or(f64::NAN),
                    rep.max_time_error()
                );
            }
        }
        Command::Oracle(at) => {
            let exp = setup(&at.common)?;
            let mut rows = Vec::new();
            for mu in params(&at, &exp)? {
                let fom = exp.full_model(&mu)?;
                let e = sparse::to_dense(&fom.sys.e);
                let a = sparse::to_dense(&fom.sys.a);
                let pib = fom.ctx.apply_left(&fom.sys.b)?;
                let p = dense_projected_lyap_oracle(&e, &a, &pib, &fom.ctx.dense_right())?;
                let z = solve_gramian(&fom.sys, &fom.ctx, Side::Controllability, &AdiOptions::default())?;
                let lyap_rel = (z.gramian() - &p).norm() / p.norm().max(f64::MIN_POSITIVE);
                let qwf = quasi_weierstrass_oracle(&e, &a)?;
                let mut tf_rel: f64 = 0.0;
                for w in [1e-2, 1.0, 1e2] {
                    let s = num_complex::Complex64::new(0.0, w);
                    let g = fom.transfer(s)?;
                    let h = qwf.transfer(&fom.sys.b, &fom.sys.c, s)?;
                    tf_rel = tf_rel.max((&g - &h).norm() / g.norm().max(f64::MIN_POSITIVE));
                }
                info!("mu = {mu:?}: Gramian rel. error {lyap_rel:e}, transfer rel. error {tf_rel:e}, index {}", qwf.nu);
                rows.push(json!({ "mu": mu, "gramian_rel_error": lyap_rel, "transfer_rel_error": tf_rel, "index": qwf.nu, "finite_dim": qwf.n_f }));
            }
            write_json(&at.common.out.join("oracle.json"), &rows)?;
        }
    }
    Ok(())
}
