use bodyfit::deform::{barycentric_weights, deform_points, knn_idw_weights, InteriorWeightSet, WeightsFile};
use bodyfit::gps::unit_cube_mesh;
use bodyfit::synth::{rng, uniform_rotation};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;

#[test]
fn barycentric_rows_follow_an_affine_deformation() {
    let mesh = unit_cube_mesh(3).unwrap();
    let mut r = rng(21);
    let queries: Vec<Vector3<f64>> =
        (0..200).map(|_| Vector3::new(r.random(), r.random(), r.random())).collect();
    let w = barycentric_weights(&mesh, &queries).unwrap();
    let a = uniform_rotation(&mut r) * Matrix3::from_diagonal(&Vector3::new(1.2, 0.9, 1.1));
    let b = Vector3::new(0.3, -1.0, 2.0);
    let moved_nodes: Vec<Vector3<f64>> = mesh.nodes().iter().map(|p| a * p + b).collect();
    let moved = deform_points(&w, &moved_nodes).unwrap();
    for (q, p) in queries.iter().zip(&moved) {
        assert!((a * q + b - p).norm() < 1e-12);
    }
}

#[test]
fn idw_weights_are_a_partition_of_unity() {
    let mut r = rng(22);
    let verts: Vec<Vector3<f64>> = (0..300).map(|_| Vector3::new(r.random(), r.random(), r.random())).collect();
    let mut queries: Vec<Vector3<f64>> = (0..50).map(|_| Vector3::new(r.random(), r.random(), r.random())).collect();
    queries.push(verts[17]);
    let w = knn_idw_weights(&verts, &queries, 8, 2.0).unwrap();
    assert_eq!(w.len(), 51);
    for i in 0..w.len() {
        let row: Vec<(usize, f64)> = w.row(i).collect();
        assert!(row.len() <= 8);
        assert!((row.iter().map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert_eq!(w.row(50).collect::<Vec<_>>(), vec![(17, 1.0)]);
    // a translation of every vertex moves every interior point by the same amount
    let shift = Vector3::new(0.5, 0.0, -0.25);
    let moved = deform_points(&w, &verts.iter().map(|v| v + shift).collect::<Vec<_>>()).unwrap();
    let rest = deform_points(&w, &verts).unwrap();
    for (m, p) in moved.iter().zip(&rest) {
        assert!((m - p - shift).norm() < 1e-12);
    }
}

#[test]
fn weights_file_round_trip_and_validation() {
    let w = InteriorWeightSet::new(
        vec![0, 2, 3],
        vec![0, 4, 2],
        vec![0.25, 0.75, 1.0],
        vec![Vector3::zeros(), Vector3::x()],
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.json");
    w.save(&path).unwrap();
    assert_eq!(InteriorWeightSet::load(&path).unwrap(), w);
    assert_eq!(WeightsFile::from_weights(&w).into_weights().unwrap(), w);
    assert!(deform_points(&w, &[Vector3::zeros(); 3]).is_err());
    assert!(InteriorWeightSet::new(vec![0, 1], vec![0], vec![0.9], vec![Vector3::zeros()]).is_err());
    assert!(InteriorWeightSet::new(vec![0, 2], vec![0, 1], vec![1.5, -0.5], vec![Vector3::zeros()]).is_err());
}
