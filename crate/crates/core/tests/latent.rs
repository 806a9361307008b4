use std::f64::consts::PI;

use voxlift::azimuth::{sample_azimuth, AzimuthPosterior};
use voxlift::latent::{discriminator_accuracy, reparameterize};
use voxlift::model::Discriminator;
use voxlift::{AzimuthMode, GaussianLatent, NoiseSource, Tensor};

#[test]
fn reparameterized_samples_average_to_the_mean() {
    let n = 200_000;
    let lat = GaussianLatent::new(
        Tensor::<f64>::new(vec![1.0, -1.0], &[1, 2]).unwrap(),
        Tensor::zeros(&[1, 2]),
    )
    .unwrap();
    let tiled = GaussianLatent::new(
        Tensor::<f64>::new(lat.mu.to_vec().repeat(n), &[n, 2]).unwrap(),
        Tensor::zeros(&[n, 2]),
    )
    .unwrap();
    let z = reparameterize(&tiled, &mut NoiseSource::new(1)).unwrap().to_vec();
    for (j, want) in [1.0, -1.0].into_iter().enumerate() {
        let col: Vec<f64> = z.iter().skip(j).step_by(2).copied().collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - want).abs() < 3.0 * se + 1e-12, "dim {j}: {mean}");
        assert!((var - 1.0).abs() < 0.02, "dim {j}: variance {var}");
    }
}

#[test]
fn uniform_azimuth_has_the_moments_of_the_interval() {
    let n = 1_000_000;
    let t = sample_azimuth::<f64>(AzimuthMode::Uniform, None, None, &mut NoiseSource::new(2), n)
        .unwrap()
        .theta
        .to_vec();
    assert!(t.iter().all(|v| (-PI..PI).contains(v)));
    let mean = t.iter().sum::<f64>() / n as f64;
    let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!(mean.abs() < 0.01, "{mean}");
    assert!((var / (PI * PI / 3.0) - 1.0).abs() < 0.01, "{var}");
}

#[test]
fn discriminator_cannot_tell_identical_distributions_apart() {
    let n = 100_000;
    let mut noise = NoiseSource::new(3);
    let disc = Discriminator::<f64>::new("d", 2, [16, 8], &mut noise).unwrap();
    let real = disc.forward(&noise.normal_tensor(&[n, 2])).unwrap();
    let fake = disc.forward(&noise.normal_tensor(&[n, 2])).unwrap();
    let acc = discriminator_accuracy(&real, &fake);
    // Hits are two independent binomials whose rates sum to one.
    let se = (0.25 / (2 * n) as f64).sqrt();
    assert!((acc - 0.5).abs() < 4.0 * se, "{acc}");
}

#[test]
fn posterior_draws_follow_its_parameters() {
    let post = AzimuthPosterior::<f64>::new(&mut NoiseSource::new(4)).unwrap();
    post.mu().tensor().set_data(vec![0.5]).unwrap();
    post.log_sigma().tensor().set_data(vec![0.2f64.ln()]).unwrap();
    let n = 100_000;
    let (z, theta) = post.sample(&mut NoiseSource::new(5), n).unwrap();
    let z = z.to_vec();
    let mean = z.iter().sum::<f64>() / n as f64;
    let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    assert!((mean - 0.5).abs() < 0.005, "{mean}");
    assert!((sd - 0.2).abs() < 0.005, "{sd}");
    assert!(theta.to_vec().iter().all(|t| t.abs() < PI));
}
