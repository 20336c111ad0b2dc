use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use bodyfit::fitter::{fit, fit_shared_beta, stratified_subset, FitConfig, FitResult, FitTarget, ResultFile};
use bodyfit::BodyModel;
use rayon::prelude::*;
use serde::Serialize;

use super::{create_dir, expand_paths, mean, median, thread_pool};
use crate::manifest::Recorder;
use crate::{FitArgs, Preset};

#[derive(Debug, Serialize)]
struct Summary {
    cases: usize,
    shared_beta: bool,
    mean_vertex_rmse: f64,
    median_vertex_rmse: f64,
    mean_joint_rmse: f64,
    median_joint_rmse: f64,
    /// Mean over cases of the vertex RMSE after each iteration.
    per_iteration_mean_vertex_rmse: Vec<f64>,
}

pub fn config_from_args(a: &FitArgs, model: &BodyModel) -> anyhow::Result<FitConfig> {
    let mut cfg = match a.preset {
        Some(Preset::Transfer) => FitConfig::transfer(model),
        None => FitConfig::default(),
    };
    if let Some(n) = a.iters {
        cfg.n_iters = n;
    }
    if let Some(alpha) = a.alpha {
        cfg.vertex_weight_alpha = alpha;
    }
    if let Some(l) = a.lambda {
        cfg.shape.ridge_lambda = l;
    }
    if let Some(u) = a.unpenalized {
        cfg.shape.unpenalized_prefix = u;
    }
    if let Some(e) = a.uncertainty_exp {
        cfg.uncertainty_exponent = e;
    }
    cfg.use_uncertainty_weights = a.uncertainty_weights;
    if let Some(path) = &a.subset {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let idx: Vec<usize> = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
        cfg.vertex_subset = Some(idx);
    } else if let Some(n) = a.subset_size {
        cfg.vertex_subset = Some(stratified_subset(model, n));
    }
    Ok(cfg)
}

fn result_path(out: &Path, target: &Path) -> PathBuf {
    let stem = target.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "target".into());
    out.join(format!("{stem}.result.json"))
}

pub fn run(a: &FitArgs) -> anyhow::Result<()> {
    let mut rec = Recorder::start("fit", a)?;
    let model = BodyModel::load(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    rec.input(&a.model)?;
    let paths = expand_paths(&a.targets)?;
    let mut seen = HashSet::new();
    let outputs: Vec<PathBuf> = paths.iter().map(|p| result_path(&a.out, p)).collect();
    for o in &outputs {
        if !seen.insert(o.clone()) {
            bail!("two targets would both write {}", o.display());
        }
    }
    let targets = paths
        .iter()
        .map(|p| {
            rec.input(p)?;
            FitTarget::load(p).with_context(|| format!("loading target {}", p.display()))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    if let Some(sub) = &a.subset {
        rec.input(sub)?;
    }
    let cfg = config_from_args(a, &model)?;
    let pool = thread_pool(a.threads)?;
    create_dir(&a.out)?;

    let started = Instant::now();
    let fits: Vec<FitResult> = if a.shared_beta {
        pool.install(|| fit_shared_beta(&model, &targets, &cfg))?.fits
    } else {
        pool.install(|| {
            targets
                .par_iter()
                .map(|t| fit(&model, t, &cfg))
                .collect::<bodyfit::Result<Vec<_>>>()
        })?
    };
    let fit_ms = started.elapsed().as_secs_f64() * 1e3;

    for (f, path) in fits.iter().zip(&outputs) {
        ResultFile::from_fit(&model, f, None).save(path)?;
        rec.output(path);
    }
    let vertex: Vec<f64> = fits.iter().map(|f| f.final_vertex_rmse).collect();
    let joint: Vec<f64> = fits.iter().map(|f| f.final_joint_rmse).collect();
    let iters = fits.first().map_or(0, |f| f.per_iteration_vertex_rmse.len());
    let curve: Vec<f64> = (0..iters)
        .map(|i| mean(&fits.iter().map(|f| f.per_iteration_vertex_rmse[i]).collect::<Vec<_>>()))
        .collect();
    let summary = Summary {
        cases: fits.len(),
        shared_beta: a.shared_beta,
        mean_vertex_rmse: mean(&vertex),
        median_vertex_rmse: median(&vertex),
        mean_joint_rmse: mean(&joint),
        median_joint_rmse: median(&joint),
        per_iteration_mean_vertex_rmse: curve,
    };
    let summary_path = a.out.join("summary.json");
    bodyfit::array_io::write_json(&summary_path, &summary)?;
    rec.output(&summary_path);
    rec.info(
        "resolved_config",
        serde_json::json!({
            "n_iters": cfg.n_iters,
            "vertex_weight_alpha": cfg.vertex_weight_alpha,
            "ridge_lambda": cfg.shape.ridge_lambda,
            "unpenalized_prefix": cfg.shape.unpenalized_prefix,
            "use_uncertainty_weights": cfg.use_uncertainty_weights,
            "uncertainty_exponent": cfg.uncertainty_exponent,
            "vertex_subset_size": cfg.vertex_subset.as_ref().map(Vec::len),
        }),
    )?;
    rec.info("fit_wall_time_ms", fit_ms)?;
    rec.info("threads", pool.current_num_threads())?;
    rec.finish(&a.out.join("manifest.json"))?;

    println!("{} fits in {:.1} ms on {} threads", fits.len(), fit_ms, pool.current_num_threads());
    println!("{:<22}{:>14}{:>14}", "", "mean (mm)", "median (mm)");
    println!("{:<22}{:>14.4}{:>14.4}", "vertex RMSE", summary.mean_vertex_rmse * 1e3, summary.median_vertex_rmse * 1e3);
    println!("{:<22}{:>14.4}{:>14.4}", "joint RMSE", summary.mean_joint_rmse * 1e3, summary.median_joint_rmse * 1e3);
    println!("mean vertex RMSE per iteration (mm):");
    for (i, v) in summary.per_iteration_mean_vertex_rmse.iter().enumerate() {
        println!("  {:>3}  {:.5}", i + 1, v * 1e3);
    }
    Ok(())
}
