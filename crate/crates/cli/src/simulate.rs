use std::io::Write;
use std::path::PathBuf;

use shuffle_ev::simulation::{
    run_block_sweep, run_reml_comparison, run_sweep, run_timeseries_sweep, write_sweep_table,
};
use shuffle_ev::{Error, Result};

use crate::common::open_output;
use crate::config::{apply, echo, load_simulate_table, Preset};

#[derive(clap::Args)]
pub struct Args {
    /// fig5a (block noise), fig5b (time-series noise), fig6 (shuffle vs REML) or custom.
    #[arg(long)]
    preset: Option<String>,
    /// TOML file with a [simulate] section; its keys override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
}

pub fn run(args: Args) -> Result<()> {
    let table = args.config.as_deref().map(load_simulate_table).transpose()?;
    let from_file = table
        .as_ref()
        .and_then(|t| t.get("preset"))
        .map(|v| v.as_str().ok_or_else(|| Error::Config("`preset` must be a string".into())))
        .transpose()?;
    let preset = match args.preset.as_deref().or(from_file) {
        Some(name) => Preset::parse(name)?,
        None if table.is_some() => Preset::Custom,
        None => return Err(Error::Config("give --preset or --config".into())),
    };
    let mut cfg = preset.defaults();
    if let Some(t) = &table {
        apply(&mut cfg, t)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }

    let result = match preset {
        Preset::Fig5a => run_block_sweep(&cfg)?,
        Preset::Fig5b => run_timeseries_sweep(&cfg)?,
        Preset::Fig6 => run_reml_comparison(&cfg)?,
        Preset::Custom => run_sweep(&cfg)?,
    };
    let mut out = open_output(args.output.as_deref())?;
    writeln!(out, "# shuffle-ev simulate")?;
    for line in echo(preset, &cfg) {
        writeln!(out, "# {line}")?;
    }
    write_sweep_table(&result, &mut out)?;
    out.flush()?;
    Ok(())
}
