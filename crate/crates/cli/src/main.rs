//! `semiabc`: run the semi-automatic ABC pipeline stage by stage or in one
//! go, apply marginal adjustment, run experiments and print reports.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semiabc_core::config::{parse_config, RunConfig};
use semiabc_core::experiment::run_experiment;
use semiabc_core::io;
use semiabc_core::marginal;
use semiabc_core::models::ModelFixture;
use semiabc_core::semiauto::Pipeline;
use semiabc_core::Error;

#[derive(Parser)]
#[command(name = "semiabc", version, about = "Semi-automatic ABC with Bayes linear summaries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads. Changes speed only, never results.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the pilot batch from the prior.
    Simulate(Common),
    /// Pilot rejection ABC and truncation region.
    Pilot(Common),
    /// Fit the summary projector on a fresh truncated batch.
    Construct(Common),
    /// Main ABC run in projected-summary space.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Run every stage from scratch instead of reading earlier artifacts.
        #[arg(long)]
        full: bool,
    },
    /// Per-coordinate marginal estimates remapped into the joint posterior.
    Marginal(Common),
    /// Run the configured experiment plan.
    Experiment(Common),
    /// Print the estimates table and write report.csv.
    Report(Common),
}

struct Ctx {
    config: RunConfig,
    dir: PathBuf,
    fixture: ModelFixture,
}

fn setup(common: &Common) -> Result<Ctx, Error> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Error::invalid("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::invalid(e.to_string()))?;
    }
    let mut config = parse_config(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = Some(out.clone());
    }
    let dir = config
        .out_dir
        .clone()
        .ok_or_else(|| Error::invalid("no output directory: pass --out or set out_dir"))?;
    let fixture = ModelFixture::build(&config.model)?;
    Ok(Ctx { config, dir, fixture })
}

fn simulate(ctx: &Ctx) -> Result<(), Error> {
    let pipe = Pipeline::new(&ctx.config, &ctx.fixture)?;
    let batch = pipe.simulate_pilot()?;
    io::write_config(&ctx.dir, &ctx.config)?;
    io::write_batch(&ctx.dir, io::PILOT_BATCH, &batch, &pipe.config_hash)?;
    println!("wrote {} pilot draws to {}", batch.len(), ctx.dir.display());
    Ok(())
}

fn pilot(ctx: &Ctx) -> Result<(), Error> {
    let pipe = Pipeline::new(&ctx.config, &ctx.fixture)?;
    let batch = io::read_batch_checked(&ctx.dir, io::PILOT_BATCH, &ctx.config)?;
    let out = pipe.pilot(&batch)?;
    io::write_posterior(&ctx.dir, io::PILOT_POSTERIOR, &out.posterior)?;
    io::write_truncation(&ctx.dir, &ctx.config, &out.region)?;
    println!("pilot accepted {} draws; truncation {:?}", out.posterior.len(), out.region.bounds);
    Ok(())
}

fn construct(ctx: &Ctx) -> Result<(), Error> {
    let pipe = Pipeline::new(&ctx.config, &ctx.fixture)?;
    let region = io::read_truncation(&ctx.dir, &ctx.config)?;
    let out = pipe.construct(&region)?;
    io::write_batch(&ctx.dir, io::CONSTRUCT_BATCH, &out.batch, &pipe.config_hash)?;
    io::write_projector(&ctx.dir, &ctx.config, &out.projector)?;
    println!(
        "projector {} with {} summaries (condition number {:.3e})",
        out.projector.id,
        out.projector.output_dim(),
        out.projector.diagnostics.condition_number
    );
    Ok(())
}

fn infer(ctx: &Ctx, full: bool) -> Result<(), Error> {
    let pipe = Pipeline::new(&ctx.config, &ctx.fixture)?;
    let estimates = if full {
        let run = pipe.run()?;
        io::write_run(&ctx.dir, &ctx.config, &run)?;
        run.infer.estimates
    } else {
        let region = io::read_truncation(&ctx.dir, &ctx.config)?;
        let projector = io::read_projector(&ctx.dir, &ctx.config)?;
        let out = pipe.infer(&region, &projector)?;
        io::write_batch(&ctx.dir, io::MAIN_BATCH, &out.batch, &pipe.config_hash)?;
        io::write_posterior(&ctx.dir, io::POSTERIOR, &out.posterior)?;
        if let Some(adj) = &out.adjusted {
            io::write_posterior(&ctx.dir, io::ADJUSTED_POSTERIOR, adj)?;
        }
        io::write_estimates(&ctx.dir, &ctx.config, &out.estimates)?;
        out.estimates
    };
    for e in &estimates {
        println!("{}: {:.6}", e.target, e.estimate);
    }
    if ctx.config.adjust.marginal_adjust {
        marginal_cmd(ctx)?;
    }
    Ok(())
}

fn final_posterior_stem(dir: &Path) -> &'static str {
    if dir.join(format!("{}.csv", io::ADJUSTED_POSTERIOR)).exists() {
        io::ADJUSTED_POSTERIOR
    } else {
        io::POSTERIOR
    }
}

fn marginal_cmd(ctx: &Ctx) -> Result<(), Error> {
    let joint = io::read_posterior_checked(&ctx.dir, final_posterior_stem(&ctx.dir), &ctx.config)?;
    let coords: Vec<usize> = (0..joint.thetas.cols()).collect();
    let (margins, remapped) = marginal::run_marginal_adjust(&joint, &coords, &ctx.config, &ctx.fixture)?;
    for m in &margins {
        io::write_json(
            &ctx.dir.join(format!("marginal_{}.json", m.coordinate)),
            &io::Stamped::new("marginal", &ctx.config, m),
        )?;
    }
    io::write_posterior(&ctx.dir, "posterior_marginal", &remapped)?;
    for (j, m) in remapped.mean().iter().enumerate() {
        println!("theta_{}: joint {:.6} -> remapped {:.6}", j + 1, joint.mean()[j], m);
    }
    Ok(())
}

fn experiment(ctx: &Ctx) -> Result<(), Error> {
    let plan = ctx
        .config
        .experiment
        .clone()
        .ok_or_else(|| Error::Config {
            path: "experiment".into(),
            message: "the config has no experiment plan".into(),
        })?;
    let report = run_experiment(&plan, &ctx.config)?;
    report.write(&ctx.dir)?;
    print!("{}", report.tables());
    Ok(())
}

fn report(ctx: &Ctx) -> Result<(), Error> {
    let estimates = io::read_estimates(&ctx.dir, &ctx.config)?;
    // Refuse to report a posterior from a different run than the estimates.
    io::read_posterior_checked(&ctx.dir, final_posterior_stem(&ctx.dir), &ctx.config)?;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    println!("{:<24} {:>12} {:>12} {:>12} {:>12}", "target", "estimate", "oracle", "abs error", "MC sd");
    for e in &estimates {
        println!(
            "{:<24} {:>12.6} {:>12} {:>12} {:>12.6}",
            e.target,
            e.estimate,
            fmt(e.oracle),
            fmt(e.abs_error),
            e.mc_sd
        );
    }
    let src = ctx.dir.join(io::ESTIMATES_CSV);
    let text = io::read_text(&src)?;
    io::write_text(&ctx.dir.join("report.csv"), &text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(c) => simulate(&setup(&c)?),
        Command::Pilot(c) => pilot(&setup(&c)?),
        Command::Construct(c) => construct(&setup(&c)?),
        Command::Infer { common, full } => infer(&setup(&common)?, full),
        Command::Marginal(c) => marginal_cmd(&setup(&c)?),
        Command::Experiment(c) => experiment(&setup(&c)?),
        Command::Report(c) => report(&setup(&c)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
