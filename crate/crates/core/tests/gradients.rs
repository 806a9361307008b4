use voxlift::gradsuite::run_gradient_suite;
use voxlift::nn::Module;
use voxlift::render::project;
use voxlift::tensor::gradcheck::{grad_check, grad_check_params, DEFAULT_STEP};
use voxlift::{ArchPreset, AzimuthMode, Model, ModelConfig, NoiseSource, Objective, Tensor};

#[test]
fn every_case_of_the_suite_passes() {
    let cases = run_gradient_suite(3).unwrap();
    assert!(cases.len() > 40);
    for c in &cases {
        assert!(c.passed(), "{} at {:e}", c.name, c.max_rel_err);
    }
}

#[test]
fn matmul_sum_matches_central_differences() {
    let mut noise = NoiseSource::new(1);
    let b = Tensor::<f64>::new(noise.uniform_vec(12, -1.0, 1.0), &[4, 3]).unwrap();
    let a = noise.uniform_vec(8, -1.0, 1.0);
    let err = grad_check(|a| Ok(a.matmul(&b)?.sum_all()), &a, &[2, 4], DEFAULT_STEP).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn projection_of_a_random_grid_matches_central_differences() {
    let mut noise = NoiseSource::new(2);
    let v = noise.uniform_vec(2 * 5 * 5 * 5, 0.0, 1.0);
    let r = Tensor::<f64>::new(noise.uniform_vec(2 * 25, -1.0, 1.0), &[2, 5, 5]).unwrap();
    let err = grad_check(|v| Ok(project(v)?.mul(&r)?.sum_all()), &v, &[2, 5, 5, 5], DEFAULT_STEP).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn two_layer_net_matches_central_differences() {
    let mut noise = NoiseSource::new(3);
    let w1 = Tensor::<f64>::parameter(noise.uniform_vec(12, -1.0, 1.0), &[3, 4]).unwrap();
    let w2 = Tensor::<f64>::parameter(noise.uniform_vec(4, -1.0, 1.0), &[4, 1]).unwrap();
    let x = Tensor::<f64>::new(noise.uniform_vec(15, -1.0, 1.0), &[5, 3]).unwrap();
    let y = Tensor::<f64>::new(noise.uniform_vec(5, -1.0, 1.0), &[5, 1]).unwrap();
    let loss = || Ok(x.matmul(&w1)?.tanh().matmul(&w2)?.sub(&y)?.square().mean_all());
    let err = grad_check_params(loss, &[w1.clone(), w2.clone()], DEFAULT_STEP).unwrap();
    assert!(err < 1e-4, "{err}");
}

fn toy(objective: Objective) -> Model<f64> {
    Model::new(ModelConfig {
        arch: ArchPreset::Toy,
        seed: 4,
        ..ModelConfig::new(objective, AzimuthMode::Fixed)
    })
    .unwrap()
}

#[test]
fn encode_decode_render_on_two_images() {
    let model = toy(Objective::Vae);
    let x = Tensor::<f64>::new(NoiseSource::new(5).uniform_vec(2 * 16, 0.0, 1.0), &[2, 4, 4]).unwrap();
    let params: Vec<_> = model.main_parameters().iter().map(|p| p.tensor().clone()).collect();
    let err = grad_check_params(|| Ok(model.forward(&x, &mut NoiseSource::new(6))?.total), &params, DEFAULT_STEP).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn decoder_alone_at_toy_resolution() {
    let model = toy(Objective::MuVae);
    let z = Tensor::<f64>::new(vec![0.3, -0.7, 1.1, 0.2], &[2, 2]).unwrap();
    let r = Tensor::<f64>::new(NoiseSource::new(7).uniform_vec(2 * 64, -1.0, 1.0), &[2, 4, 4, 4]).unwrap();
    let params: Vec<_> = model.decoder.parameters().iter().map(|p| p.tensor().clone()).collect();
    let err = grad_check_params(|| Ok(model.decode(&z)?.mul(&r)?.sum_all()), &params, DEFAULT_STEP).unwrap();
    assert!(err < 1e-4, "{err}");
}
