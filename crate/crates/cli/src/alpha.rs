use std::io::Write;
use std::path::PathBuf;

use shuffle_ev::io::{format_f64, load_dataset};
use shuffle_ev::permutation::{alpha, is_trivial, noise_conservation_gap};
use shuffle_ev::{CovarianceModel, Result};

use crate::common::{open_output, PermutationArg};

#[derive(clap::Args)]
pub struct Args {
    /// Dataset or schedule CSV (t, stimulus, [block,] ...).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Comma-separated permutations to evaluate.
    #[arg(long, default_value = "reverse")]
    permutation: String,
    /// Noise hypothesis for the conservation gap, e.g. exp_nugget:0.7,30.
    #[arg(long)]
    noise: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn run(args: Args) -> Result<()> {
    let d = load_dataset(&args.input)?.design;
    let noise: Option<CovarianceModel> = args.noise.as_deref().map(str::parse).transpose()?;
    let sigma = noise.as_ref().map(|m| m.matrix(&d)).transpose()?;
    let mut out = open_output(args.output.as_deref())?;
    writeln!(out, "# shuffle-ev alpha")?;
    writeln!(out, "# input = {}", args.input.display())?;
    writeln!(out, "# seed = {}", args.seed)?;
    if let Some(m) = &noise {
        writeln!(out, "# noise = {m}")?;
    }
    for arg in PermutationArg::parse_list(&args.permutation)? {
        let p = arg.build(&d, args.seed)?;
        writeln!(out, "permutation = {arg}")?;
        writeln!(out, "alpha = {}", format_f64(alpha(&d, &p)?))?;
        writeln!(out, "trivial = {}", is_trivial(&p, &d)?)?;
        if let Some(s) = &sigma {
            writeln!(out, "gap = {}", format_f64(noise_conservation_gap(s, &d, &p)?))?;
        }
    }
    out.flush()?;
    Ok(())
}
