//! Recover a random similarity transform with OPA, then run GPA on noisy copies.
//!
//! cargo run --example procrustes

use gaitkit::procrustes::{apply_transform, gpa_fit, opa_fit, GpaOptions, ShapeConfig, SimilarityTransform};
use nalgebra::{DMatrix, DVector, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = ShapeConfig::new(DMatrix::from_fn(33, 3, |_, _| rng.random_range(-1.0..1.0)))?;
    let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), 0.7);
    let t = SimilarityTransform::new(
        2.5,
        DMatrix::from_iterator(3, 3, rot.matrix().iter().copied()),
        DVector::from_vec(vec![1.0, -2.0, 0.5]),
    )?;
    let y = apply_transform(&x, &t)?;
    let (fit, residual) = opa_fit(&x, &y, true)?;
    println!("scale {:.12} (true 2.5), residual {residual:.2e}", fit.scale());
    println!("rotation error {:.2e}", (fit.rotation() - t.rotation()).norm());

    let configs: Vec<ShapeConfig> = (0..20)
        .map(|_| {
            let noisy = ShapeConfig::new(x.points().map(|v| v + rng.random_range(-0.02..0.02)))?;
            apply_transform(&noisy, &t)
        })
        .collect::<Result<_, _>>()?;
    let gpa = gpa_fit(&configs, &GpaOptions::default())?;
    println!("GPA: {} iterations, converged {}", gpa.iterations, gpa.converged);
    for (i, g) in gpa.history.iter().enumerate() {
        println!("  {i:>3}  {g:.6e}");
    }
    Ok(())
}
