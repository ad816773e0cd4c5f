use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use shuffle_ev::io::load_permutation;
use shuffle_ev::simulation::PermutationChoice;
use shuffle_ev::{DesignSchedule, Error, PermutationSpec, Result};

/// A `--permutation` entry: a named family, `identity`, or `file:PATH`.
#[derive(Debug, Clone)]
pub enum PermutationArg {
    Identity,
    Named(PermutationChoice),
    File(PathBuf),
}

impl fmt::Display for PermutationArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => write!(f, "identity"),
            Self::Named(c) => write!(f, "{c}"),
            Self::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl PermutationArg {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "identity" {
            Ok(Self::Identity)
        } else if let Some(path) = s.strip_prefix("file:") {
            Ok(Self::File(PathBuf::from(path)))
        } else {
            s.parse().map(Self::Named)
        }
    }

    /// Comma-separated list.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        let list = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(Self::parse)
            .collect::<Result<Vec<_>>>()?;
        if list.is_empty() {
            return Err(Error::Config("no permutation given".into()));
        }
        Ok(list)
    }

    pub fn build(&self, d: &DesignSchedule, seed: u64) -> Result<PermutationSpec> {
        let p = match self {
            Self::Identity => PermutationSpec::identity(d.len()),
            Self::Named(c) => c.build(d, seed)?,
            Self::File(path) => load_permutation(path)?,
        };
        if p.len() != d.len() {
            return Err(Error::LengthMismatch {
                expected: d.len(),
                actual: p.len(),
            });
        }
        Ok(p)
    }
}

pub fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

pub fn in_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map(|pool| pool.install(job))
            .map_err(|e| Error::Config(format!("thread pool: {e}"))),
    }
}

pub fn warn_if_unblocked(d: &DesignSchedule) {
    if !d.has_blocks() {
        eprintln!("warning: no block column; treating the schedule as a single block");
    }
}
