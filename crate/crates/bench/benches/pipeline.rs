use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gyromix_core::geometry::homography_array_to_flow;
use gyromix_core::gyro::gyro_homography_array;
use gyromix_core::mixtures::{estimate_mixture, MixtureParams};
use gyromix_core::synth::{simulate_sequence, SynthConfig};

fn pipeline(c: &mut Criterion) {
    let mut cfg = SynthConfig::new(7, 3);
    cfg.scene.n_points = 400;
    let bundle = simulate_sequence(&cfg).expect("simulate");
    let cam = *bundle.camera();
    let samples = bundle.gyro_samples();
    let (a, b) = (bundle.frame_stamp(0), bundle.frame_stamp(1));
    let arr = bundle.gyro_homographies(0).expect("gyro array");
    let cs = bundle.pairs[0].correspondences.clone();

    c.bench_function("gyro integration", |bch| {
        bch.iter(|| gyro_homography_array(black_box(&samples), &a, &b, &cam).unwrap())
    });
    c.bench_function("flow synthesis 360x270", |bch| {
        bch.iter(|| homography_array_to_flow(black_box(&arr), cam.width, cam.height).unwrap())
    });
    for n in [1, 6] {
        let params = MixtureParams::new(n, cam.height).with_sigma(0.1 * cam.height as f64);
        c.bench_function(&format!("mixture solve N={n}, 400 points"), |bch| {
            bch.iter(|| estimate_mixture(black_box(&cs), &params).unwrap())
        });
    }
    c.bench_function("simulate 2-frame sequence", |bch| {
        let cfg = SynthConfig::new(7, 2);
        bch.iter(|| simulate_sequence(black_box(&cfg)).unwrap())
    });
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
