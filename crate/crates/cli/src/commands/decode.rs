use anyhow::Context;
use bodyfit::heatmap::{fuse_to_camera, DecodeFile, HeatmapFile};
use nalgebra::Matrix3;

use crate::manifest::{beside, Recorder};
use crate::DecodeArgs;

pub fn run(a: &DecodeArgs) -> anyhow::Result<()> {
    let mut rec = Recorder::start("decode", a)?;
    let file = HeatmapFile::load(&a.heatmaps).with_context(|| format!("loading {}", a.heatmaps.display()))?;
    rec.input(&a.heatmaps)?;
    let (stack, grid) = file.into_stack()?;
    let decoded = stack.decode(&grid)?;
    let camera = match &a.intrinsics {
        Some(k) => {
            if k.len() != 4 {
                anyhow::bail!("--intrinsics takes FX,FY,CX,CY");
            }
            let intrinsics = Matrix3::new(k[0], 0.0, k[2], 0.0, k[1], k[3], 0.0, 0.0, 1.0);
            Some(fuse_to_camera(&decoded.points2d, &decoded.points3d, &intrinsics)?)
        }
        None => None,
    };
    DecodeFile::new(&decoded, camera.as_ref().map(|(p, t)| (p.as_slice(), *t))).save(&a.out)?;
    rec.output(&a.out);
    rec.finish(&beside(&a.out))?;

    let mean_sigma = decoded.sigmas.iter().sum::<f64>() / decoded.sigmas.len().max(1) as f64;
    println!("decoded {} points, mean sigma {:.4}", decoded.sigmas.len(), mean_sigma);
    if let Some((_, t)) = camera {
        println!("root translation ({:.4}, {:.4}, {:.4})", t.x, t.y, t.z);
    }
    Ok(())
}
