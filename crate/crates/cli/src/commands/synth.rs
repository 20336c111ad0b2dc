use anyhow::bail;
use bodyfit::fitter::ResultFile;
use bodyfit::synth::{random_pose, synth_heteroscedastic_target, synth_target};
use bodyfit::toy::make_toy_model;

use super::{create_dir, stream_rng};
use crate::manifest::Recorder;
use crate::SynthArgs;

/// Stream offset for per-subject shape draws, clear of the per-case streams.
const SUBJECT_STREAMS: u64 = 1 << 40;

pub fn run(a: &SynthArgs) -> anyhow::Result<()> {
    if a.views == 0 {
        bail!("--views must be at least 1");
    }
    if !(a.noise >= 0.0) {
        bail!("--noise must be nonnegative");
    }
    if let Some(r) = &a.sigma_range {
        if r.len() != 2 || !(r[0] > 0.0 && r[1] >= r[0]) {
            bail!("--sigma-range needs 0 < LO <= HI");
        }
    }
    let mut rec = Recorder::start("synth", a)?;
    let model = make_toy_model(a.seed, a.model.verts, a.model.joints, a.model.betas)?;
    let targets = a.out.join("targets");
    let truth = a.out.join("truth");
    create_dir(&targets)?;
    create_dir(&truth)?;
    let model_path = a.out.join("model.json");
    model.save(&model_path)?;
    rec.output(&model_path);

    let max_angle = a.max_angle_deg.to_radians();
    for case in 0..a.cases {
        let mut r = stream_rng(a.seed, case as u64 + 1);
        let mut pose = random_pose(&model, &mut r, max_angle, a.max_beta, a.max_translation);
        if a.views > 1 {
            let subject = (case / a.views) as u64;
            let mut sr = stream_rng(a.seed, SUBJECT_STREAMS + subject);
            pose.beta = random_pose(&model, &mut sr, 0.0, a.max_beta, 0.0).beta;
        }
        let target = match &a.sigma_range {
            Some(range) => synth_heteroscedastic_target(&model, &pose, range[0], range[1], &mut r),
            None => synth_target(&model, &pose, a.noise, &mut r),
        };
        let name = format!("case_{case:04}.json");
        target.save(&targets.join(&name))?;
        ResultFile::from_pose(&model, &pose, None).save(&truth.join(&name))?;
    }
    rec.output(&targets);
    rec.output(&truth);
    rec.info("noise_m", a.noise)?;
    rec.info("sigma_range_m", &a.sigma_range)?;
    rec.info("subjects", a.cases.div_ceil(a.views))?;
    let manifest = rec.finish(&a.out.join("manifest.json"))?;
    println!(
        "wrote model ({} vertices, {} joints, {} shape components) and {} cases to {}",
        model.num_vertices(),
        model.num_joints(),
        model.num_betas(),
        a.cases,
        a.out.display()
    );
    println!("manifest: {}", manifest.display());
    Ok(())
}
