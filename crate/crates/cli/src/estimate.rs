use std::path::PathBuf;

use rayon::prelude::*;
use shuffle_ev::estimators::{average_shuffle, mom_estimate, reml_estimate, shuffle_estimate};
use shuffle_ev::io::{load_dataset, write_estimates, EstimateRow};
use shuffle_ev::{DesignSchedule, Error, Method, PermutationSpec, RemlOptions, Result, VarianceEstimate};

use crate::common::{in_pool, join, open_output, warn_if_unblocked, PermutationArg};

#[derive(clap::Args)]
pub struct Args {
    /// Dataset CSV: t, stimulus, [block,] then one column per series.
    #[arg(long)]
    input: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seeds block-random permutations and REML multi-starts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    /// reverse | shift:K | block-random | odd-even | identity | file:PATH. A
    /// comma-separated list feeds shuffle-avg; shuffle uses the first entry.
    #[arg(long, default_value = "reverse")]
    permutation: String,
    /// Comma-separated: shuffle, shuffle-avg, mom, reml:iid, reml:exp_nugget, reml:arP.
    #[arg(long, default_value = "shuffle")]
    estimators: String,
    /// Longest series REML will fit.
    #[arg(long, default_value_t = 4096)]
    reml_max_len: usize,
}

struct Plan {
    methods: Vec<Method>,
    perms: Vec<PermutationSpec>,
    reml: RemlOptions,
}

fn estimate_one(y: &[f64], d: &DesignSchedule, method: &Method, plan: &Plan) -> Result<VarianceEstimate> {
    match method {
        Method::Shuffle => shuffle_estimate(y, d, &plan.perms[0]),
        Method::ShuffleAverage => average_shuffle(y, d, &plan.perms),
        Method::MethodOfMoments => mom_estimate(y, d),
        Method::Reml(family) => reml_estimate(y, d, *family, &plan.reml).map(|(_, e)| e),
    }
}

pub fn run(args: Args) -> Result<()> {
    let ds = load_dataset(&args.input)?;
    let d = &ds.design;
    warn_if_unblocked(d);
    let methods = args
        .estimators
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Method>>>()?;
    if methods.is_empty() {
        return Err(Error::Config("no estimators selected".into()));
    }
    let perm_args = PermutationArg::parse_list(&args.permutation)?;
    let perms = perm_args
        .iter()
        .map(|p| p.build(d, args.seed))
        .collect::<Result<Vec<_>>>()?;
    let plan = Plan {
        methods,
        perms,
        reml: RemlOptions {
            seed: args.seed,
            max_len: args.reml_max_len,
            ..RemlOptions::default()
        },
    };

    let rows: Vec<EstimateRow> = in_pool(args.threads, || {
        ds.series
            .par_iter()
            .map(|s| {
                plan.methods
                    .iter()
                    .map(|m| EstimateRow {
                        series_id: s.id.clone(),
                        method: m.to_string(),
                        outcome: estimate_one(&s.values, d, m, &plan).map_err(|e| e.kind().to_string()),
                    })
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    })?;

    let preamble = vec![
        "shuffle-ev estimate".to_string(),
        format!("input = {}", args.input.display()),
        format!("T = {}, m = {}, n = {}", d.len(), d.num_stimuli(), d.repeats()),
        format!("permutation = {}", join(&perm_args)),
        format!("estimators = {}", join(&plan.methods)),
        format!("seed = {}", args.seed),
        format!("reml_max_len = {}", args.reml_max_len),
    ];
    let mut out = open_output(args.output.as_deref())?;
    write_estimates(&rows, &preamble, &mut out)?;
    out.flush()?;
    Ok(())
}
