use std::io::Write;
use std::path::PathBuf;

use shuffle_ev::estimators::consistency_diagnostic;
use shuffle_ev::io::{format_f64, load_dataset};
use shuffle_ev::permutation::{alpha, is_trivial, noise_conservation_gap};
use shuffle_ev::{CovarianceModel, Result};

use crate::common::{open_output, PermutationArg};

#[derive(clap::Args)]
pub struct Args {
    /// Schedule or dataset CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Noise hypothesis, e.g. iid, exp_nugget:0.7,30, block:0.5,0.7, ar:0.5,-0.2,0.1.
    /// Without it only the mixing coefficients are reported.
    #[arg(long)]
    noise: Option<String>,
    /// Candidate permutations, comma-separated.
    #[arg(long, default_value = "reverse,shift:1,odd-even")]
    permutation: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn run(args: Args) -> Result<()> {
    let d = load_dataset(&args.input)?.design;
    let noise: Option<CovarianceModel> = args.noise.as_deref().map(str::parse).transpose()?;
    let candidates = PermutationArg::parse_list(&args.permutation)?;
    let mut out = open_output(args.output.as_deref())?;
    writeln!(out, "# shuffle-ev diagnose")?;
    writeln!(out, "# input = {}", args.input.display())?;
    writeln!(out, "# seed = {}", args.seed)?;
    writeln!(out, "T = {}", d.len())?;
    writeln!(out, "m = {}", d.num_stimuli())?;
    writeln!(out, "n = {}", d.repeats())?;

    let sigma = match &noise {
        Some(model) => {
            let sigma = model.matrix(&d)?;
            writeln!(out, "noise = {model}")?;
            writeln!(out, "noise_level = {}", format_f64(model.noise_level(&d, 1.0)?))?;
            let diag = consistency_diagnostic(&sigma, d.num_stimuli(), d.repeats())?;
            writeln!(out, "consistency_diagnostic = {}", format_f64(diag))?;
            Some(sigma)
        }
        None => None,
    };
    for arg in candidates {
        writeln!(out, "[{arg}]")?;
        let p = match arg.build(&d, args.seed) {
            Ok(p) => p,
            Err(e) => {
                writeln!(out, "error = {}", e.kind())?;
                continue;
            }
        };
        writeln!(out, "alpha = {}", format_f64(alpha(&d, &p)?))?;
        writeln!(out, "trivial = {}", is_trivial(&p, &d)?)?;
        if let Some(s) = &sigma {
            writeln!(out, "gap = {}", format_f64(noise_conservation_gap(s, &d, &p)?))?;
        }
    }
    out.flush()?;
    Ok(())
}
