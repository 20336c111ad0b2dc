pub mod bench;
pub mod decode;
pub mod deform;
pub mod fit;
pub mod spectral;
pub mod synth;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use bodyfit::synth::{rng, SynthRng};

pub fn thread_pool(threads: Option<usize>) -> anyhow::Result<rayon::ThreadPool> {
    let n = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if n == 0 {
        bail!("--threads must be at least 1");
    }
    Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?)
}

/// Independent stream `stream` of the run seed.
pub fn stream_rng(seed: u64, stream: u64) -> SynthRng {
    let mut r = rng(seed);
    r.set_stream(stream);
    r
}

/// Literal paths are kept as given; patterns expand in sorted order.
pub fn expand_paths(patterns: &[String]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for pat in patterns {
        if pat.contains(['*', '?', '[']) {
            let mut hits: Vec<PathBuf> = glob::glob(pat)
                .with_context(|| format!("bad pattern {pat}"))?
                .collect::<Result<_, _>>()?;
            if hits.is_empty() {
                bail!("pattern {pat} matched no files");
            }
            hits.sort();
            out.extend(hits);
        } else {
            out.push(PathBuf::from(pat));
        }
    }
    Ok(out)
}

pub fn create_dir(path: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}
