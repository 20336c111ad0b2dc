use anyhow::Context;
use bodyfit::array_io::PointsFile;
use bodyfit::deform::{deform_points, knn_idw_weights, InteriorWeightSet};
use bodyfit::fitter::ResultFile;
use bodyfit::BodyModel;

use crate::manifest::{beside, Recorder};
use crate::{DeformArgs, WeightsArgs};

pub fn weights(a: &WeightsArgs) -> anyhow::Result<()> {
    let mut rec = Recorder::start("weights", a)?;
    let model = BodyModel::load(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    rec.input(&a.model)?;
    let points = PointsFile::load(&a.points)?;
    rec.input(&a.points)?;
    let w = knn_idw_weights(model.template_vertices(), &points, a.k, a.power)?;
    w.save(&a.out)?;
    rec.output(&a.out);
    rec.finish(&beside(&a.out))?;
    println!("weights for {} points over {} template vertices", w.len(), model.num_vertices());
    Ok(())
}

pub fn deform(a: &DeformArgs) -> anyhow::Result<()> {
    let mut rec = Recorder::start("deform", a)?;
    let w = InteriorWeightSet::load(&a.weights).with_context(|| format!("loading {}", a.weights.display()))?;
    rec.input(&a.weights)?;
    let model = BodyModel::load(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    rec.input(&a.model)?;
    let pose = ResultFile::load(&a.result)?.pose()?;
    rec.input(&a.result)?;
    let posed = model.forward(&pose)?;
    let moved = deform_points(&w, &posed.vertices)?;
    PointsFile::save(&a.out, &moved)?;
    rec.output(&a.out);
    rec.finish(&beside(&a.out))?;
    println!("deformed {} points", moved.len());
    Ok(())
}
