use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use interval_markets::sim::{mean_curves, run_trace, SimConfig};
use interval_markets::{Dyadic, Interval, LiquiditySchedule, LossAudit, MAX_PRECISION};

use crate::engine::{Engine, EngineSpec};
use crate::error::CliError;
use crate::format::sig12;
use crate::store::{self, log_path, StateLock};
use crate::tradelog::{self, TradeRecord};

#[derive(Debug, Parser)]
#[command(
    name = "imm",
    version,
    about = "Interval-security market makers over [0, 1)"
)]
pub struct Cli {
    /// Snapshot file of the market.
    #[arg(long, global = true, default_value = "market.json")]
    pub state: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a fresh market and print its worst-case loss bound.
    New(EngineArgs),
    /// Price of one share of [LO, HI).
    Price { lo: String, hi: String },
    /// Charge for SHARES of [LO, HI), without trading.
    Cost {
        lo: String,
        hi: String,
        #[arg(allow_negative_numbers = true)]
        shares: f64,
    },
    /// Buy (or sell, if negative) SHARES of [LO, HI) and print the charge.
    Buy {
        lo: String,
        hi: String,
        #[arg(allow_negative_numbers = true)]
        shares: f64,
    },
    /// Realized worst-case loss over all outcomes, from the trade log.
    Audit,
    /// Rebuild a market from a trade log and print the final price of every logged interval.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
        /// Also write the rebuilt snapshot here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a convergence experiment from a key=value config and write CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EngineKind {
    LmsrTree,
    Lcmm,
    Dense,
}

#[derive(Clone, Debug, Args)]
pub struct EngineArgs {
    #[arg(long, value_enum)]
    pub engine: EngineKind,
    /// Liquidity of an LMSR engine.
    #[arg(long)]
    pub b: Option<f64>,
    /// Outcome precision in bits (dense), or the endpoint precision cap (lmsr-tree, default 62).
    #[arg(long = "K")]
    pub k: Option<u32>,
    /// Geometric LCMM schedule `b_k = B1 * RATIO^(k-1)`.
    #[arg(long, num_args = 2, value_names = ["B1", "RATIO"])]
    pub geometric: Option<Vec<f64>>,
    /// Explicit LCMM schedule `b_1,b_2,...,b_K`.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
}

impl EngineArgs {
    pub fn spec(&self) -> anyhow::Result<EngineSpec> {
        let bad = |m: &str| anyhow::Error::from(CliError::BadArgs(m.into()));
        let spec = match self.engine {
            EngineKind::LmsrTree => EngineSpec::LmsrTree {
                b: self.b.ok_or_else(|| bad("lmsr-tree needs --b"))?,
                precision: self.k.unwrap_or(MAX_PRECISION),
            },
            EngineKind::Dense => EngineSpec::Dense {
                b: self.b.ok_or_else(|| bad("dense needs --b"))?,
                k: self.k.ok_or_else(|| bad("dense needs --K"))?,
            },
            EngineKind::Lcmm => {
                let schedule =
                    match (&self.geometric, &self.levels) {
                        (Some(g), None) => LiquiditySchedule::geometric(g[0], g[1])?,
                        (None, Some(levels)) => LiquiditySchedule::explicit(levels.clone())?,
                        _ => return Err(bad(
                            "lcmm needs exactly one of --geometric B1 RATIO or --levels b1,b2,...",
                        )),
                    };
                EngineSpec::Lcmm { schedule }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn interval(lo: &str, hi: &str) -> anyhow::Result<Interval> {
    Ok(Interval::new(Dyadic::parse(lo)?, Dyadic::parse(hi)?)?)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    let state = cli.state.as_path();
    match &cli.command {
        Command::New(args) => cmd_new(args, state, out),
        Command::Price { lo, hi } => {
            let (engine, _) = store::load(state)?;
            writeln!(out, "{}", sig12(engine.price(&interval(lo, hi)?)?))?;
            Ok(())
        }
        Command::Cost { lo, hi, shares } => {
            let (engine, _) = store::load(state)?;
            writeln!(out, "{}", sig12(engine.cost(&interval(lo, hi)?, *shares)?))?;
            Ok(())
        }
        Command::Buy { lo, hi, shares } => cmd_buy(state, &interval(lo, hi)?, *shares, out),
        Command::Audit => cmd_audit(state, out),
        Command::Replay {
            log,
            engine,
            out: dest,
        } => cmd_replay(log, engine, dest.as_deref(), out),
        Command::Simulate { config, out: csv } => cmd_simulate(config, csv, out),
    }
}

pub fn cmd_new(args: &EngineArgs, state: &Path, out: &mut dyn Write) -> anyhow::Result<()> {
    let engine = Engine::fresh(&args.spec()?)?;
    let _lock = StateLock::acquire(state)?;
    let log = log_path(state);
    if log.exists() {
        fs::remove_file(&log).with_context(|| format!("cannot remove {}", log.display()))?;
    }
    store::save(state, &engine.to_snapshot(0))?;
    writeln!(out, "{}", sig12(engine.loss_bound()))?;
    Ok(())
}

/// Appends the trade to the log first, then replaces the snapshot, so a crash
/// in between leaves a snapshot that is a prefix of the log.
pub fn cmd_buy(
    state: &Path,
    iv: &Interval,
    shares: f64,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    let _lock = StateLock::acquire(state)?;
    let (mut engine, seq) = store::load(state)?;
    let cost = engine.buy(iv, shares)?;
    let rec = TradeRecord::new(seq + 1, iv, shares, cost, engine.spec().name());
    tradelog::append(&log_path(state), &rec)?;
    store::save(state, &engine.to_snapshot(rec.seq))?;
    writeln!(out, "{}", sig12(cost))?;
    Ok(())
}

pub fn cmd_audit(state: &Path, out: &mut dyn Write) -> anyhow::Result<()> {
    let snap = store::load_snapshot(state)?;
    let fresh = Engine::fresh(&snap.spec)?;
    let mut audit = LossAudit::new(fresh.market().initial_potential());
    for rec in tradelog::read_log(&log_path(state))? {
        audit.record(rec.interval()?, rec.shares, rec.cost);
    }
    let (outcome, loss) = audit.worst_case_loss();
    let (engine, _) = store::load(state)?;
    writeln!(out, "trades {}", audit.trade_count())?;
    writeln!(out, "collected {}", sig12(audit.collected()))?;
    writeln!(out, "worst_loss {} at {}", sig12(loss), outcome)?;
    writeln!(out, "bound {}", sig12(engine.loss_bound()))?;
    Ok(())
}

pub fn cmd_replay(
    log: &Path,
    args: &EngineArgs,
    dest: Option<&Path>,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    let records = tradelog::read_log(log)?;
    let mut engine = Engine::fresh(&args.spec()?)?;
    store::replay(&mut engine, &records)?;
    let mut seen: Vec<Interval> = Vec::new();
    for rec in &records {
        let iv = rec.interval()?;
        if !seen.contains(&iv) {
            seen.push(iv);
        }
    }
    for iv in &seen {
        writeln!(out, "{} {} {}", iv.lo(), iv.hi(), sig12(engine.price(iv)?))?;
    }
    if let Some(dest) = dest {
        let _lock = StateLock::acquire(dest)?;
        store::save(dest, &engine.to_snapshot(records.len() as u64))?;
    }
    Ok(())
}

pub fn cmd_simulate(config: &Path, csv: &Path, out: &mut dyn Write) -> anyhow::Result<()> {
    let text =
        fs::read_to_string(config).with_context(|| format!("cannot read {}", config.display()))?;
    let cfg = SimConfig::parse(&text)?;
    let file = fs::File::create(csv).with_context(|| format!("cannot create {}", csv.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "trace,step,market,level,kl,cumulative_cost")?;
    let mut records = Vec::new();
    for trace in 0..cfg.n_traces as u64 {
        for spec in &cfg.markets {
            let mut io = Ok(());
            run_trace(&cfg, trace, spec, |r| {
                if io.is_ok() {
                    io = writeln!(
                        w,
                        "{},{},{},{},{},{}",
                        r.trace, r.step, r.market, r.level, r.kl, r.cumulative_cost
                    );
                }
                records.push(r);
            })?;
            io?;
        }
    }
    w.flush()?;
    let means = mean_curves(&records);
    writeln!(out, "market,level,steps,final_mean_kl,final_mean_cost")?;
    for spec in &cfg.markets {
        for level in &cfg.levels {
            let label = spec.label();
            if let Some(last) = means
                .iter()
                .rfind(|p| p.market == label && p.level == *level)
            {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    label, level, last.step, last.kl, last.cumulative_cost
                )?;
            }
        }
    }
    Ok(())
}
