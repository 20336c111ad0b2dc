use std::time::Instant;

use anyhow::bail;
use bodyfit::fitter::{fit, stratified_subset, FitConfig, FitTarget};
use bodyfit::synth::{random_pose, synth_target};
use bodyfit::toy::make_toy_model;
use bodyfit::PoseParams;
use rayon::prelude::*;
use serde::Serialize;

use super::{mean, stream_rng, thread_pool};
use crate::manifest::{beside, Recorder};
use crate::BenchArgs;

#[derive(Debug, Serialize)]
struct Row {
    batch: usize,
    subset: usize,
    threads: usize,
    seconds: f64,
    fits_per_second: f64,
    /// Full-model vertex RMSE against the noisy target, meters.
    mean_vertex_rmse: f64,
    /// Against the noise-free truth, meters.
    mean_truth_rmse: f64,
}

pub fn run(a: &BenchArgs) -> anyhow::Result<()> {
    if a.batch_sizes.is_empty() || a.batch_sizes.contains(&0) {
        bail!("batch sizes must be positive");
    }
    let mut rec = Recorder::start("bench", a)?;
    let model = make_toy_model(a.seed, a.model.verts, a.model.joints, a.model.betas)?;
    let largest = *a.batch_sizes.iter().max().unwrap();
    let cases: Vec<(PoseParams, FitTarget)> = (0..largest)
        .map(|i| {
            let mut r = stream_rng(a.seed, i as u64 + 1);
            let pose = random_pose(&model, &mut r, std::f64::consts::FRAC_PI_3, 2.0, 1.0);
            let target = synth_target(&model, &pose, a.noise, &mut r);
            (pose, target)
        })
        .collect();
    let pool = thread_pool(a.threads)?;
    let mut writer = csv::Writer::from_path(&a.out)?;
    println!("{:>6} {:>7} {:>10} {:>10} {:>14}", "batch", "subset", "seconds", "fits/s", "RMSE (mm)");
    for &batch in &a.batch_sizes {
        for &subset in &a.subset_sizes {
            let cfg = FitConfig {
                n_iters: a.iters,
                vertex_subset: (subset > 0).then(|| stratified_subset(&model, subset)),
                ..FitConfig::default()
            };
            let started = Instant::now();
            let fits = pool.install(|| {
                cases[..batch]
                    .par_iter()
                    .map(|(_, t)| fit(&model, t, &cfg))
                    .collect::<bodyfit::Result<Vec<_>>>()
            })?;
            let seconds = started.elapsed().as_secs_f64();
            let truth_rmse: Vec<f64> = fits
                .iter()
                .zip(&cases)
                .map(|(f, (pose, _))| {
                    let got = model.forward(&f.pose)?.vertices;
                    let want = model.forward(pose)?.vertices;
                    let sq: f64 = got.iter().zip(&want).map(|(a, b)| (a - b).norm_squared()).sum();
                    Ok((sq / got.len() as f64).sqrt())
                })
                .collect::<bodyfit::Result<_>>()?;
            let row = Row {
                batch,
                subset: if subset == 0 { model.num_vertices() } else { subset.min(model.num_vertices()) },
                threads: pool.current_num_threads(),
                seconds,
                fits_per_second: batch as f64 / seconds,
                mean_vertex_rmse: mean(&fits.iter().map(|f| f.final_vertex_rmse).collect::<Vec<_>>()),
                mean_truth_rmse: mean(&truth_rmse),
            };
            println!(
                "{:>6} {:>7} {:>10.4} {:>10.1} {:>14.4}",
                row.batch,
                row.subset,
                row.seconds,
                row.fits_per_second,
                row.mean_vertex_rmse * 1e3
            );
            writer.serialize(&row)?;
        }
    }
    writer.flush()?;
    rec.output(&a.out);
    rec.finish(&beside(&a.out))?;
    Ok(())
}
