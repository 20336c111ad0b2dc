use anyhow::Context;
use bodyfit::array_io::{write_json, EncodedArray, PointsFile};
use bodyfit::gps::{unit_cube_mesh, Solver, TetEigenbasis, TetMesh};
use serde::Serialize;

use crate::manifest::{beside, Recorder};
use crate::{EigsArgs, GpsArgs, SolverChoice};

pub fn eigs(a: &EigsArgs) -> anyhow::Result<()> {
    let mut rec = Recorder::start("eigs", a)?;
    let mesh = match (&a.mesh, a.cube) {
        (Some(path), _) => {
            rec.input(path)?;
            TetMesh::load(path).with_context(|| format!("loading mesh {}", path.display()))?
        }
        (None, Some(cells)) => unit_cube_mesh(cells)?,
        (None, None) => anyhow::bail!("give --mesh or --cube"),
    };
    if let Some(path) = &a.mesh_out {
        mesh.save(path)?;
        rec.output(path);
    }
    let solver = match a.solver {
        SolverChoice::Auto => Solver::Auto,
        SolverChoice::Dense => Solver::Dense,
        SolverChoice::Sparse => Solver::Sparse,
    };
    let basis = TetEigenbasis::build(&mesh, a.num, solver)?;
    basis.save(&a.out)?;
    rec.output(&a.out);
    rec.info("nodes", mesh.num_nodes())?;
    rec.info("tets", mesh.tets().len())?;
    rec.finish(&beside(&a.out))?;

    println!("{} eigenpairs on {} nodes (zero mode dropped)", basis.len(), mesh.num_nodes());
    for (i, l) in basis.eigenvalues().iter().enumerate() {
        println!("  {:>3}  {:.6}", i + 1, l);
    }
    Ok(())
}

#[derive(Serialize)]
struct GpsFile {
    points: EncodedArray,
    gps: EncodedArray,
}

pub fn gps(a: &GpsArgs) -> anyhow::Result<()> {
    let mut rec = Recorder::start("gps", a)?;
    let mesh = TetMesh::load(&a.mesh).with_context(|| format!("loading mesh {}", a.mesh.display()))?;
    rec.input(&a.mesh)?;
    let basis = TetEigenbasis::load(&a.basis, &mesh).with_context(|| format!("loading basis {}", a.basis.display()))?;
    rec.input(&a.basis)?;
    let points = PointsFile::load(&a.points)?;
    rec.input(&a.points)?;
    let m = basis.len();
    let mut flat = Vec::with_capacity(points.len() * m);
    for p in &points {
        flat.extend(basis.gps(p)?.iter());
    }
    let out = GpsFile {
        points: PointsFile::new(&points).points,
        gps: EncodedArray::from_f64(&[points.len(), m], &flat),
    };
    write_json(&a.out, &out)?;
    rec.output(&a.out);
    rec.finish(&beside(&a.out))?;
    println!("{} signatures of length {m}", points.len());
    Ok(())
}
