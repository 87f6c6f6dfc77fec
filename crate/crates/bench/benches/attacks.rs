use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{RngCore, SeedableRng};

use fairhash::attacks::mga_craft_with;
use fairhash::seeding::UserRng;
use fairhash::{derive_g, BiaAttacker, HashSeed, ObservationSet};

const D: usize = 100;

fn bia(c: &mut Criterion) {
    let g = derive_g(2.0);
    let attacker = BiaAttacker::new(D, g);
    let mut rng = UserRng::seed_from_u64(3);
    let mut group = c.benchmark_group("bia_predict");
    for n in [1usize, 5] {
        let obs = ObservationSet::new(g, (0..n).map(|_| (HashSeed(rng.next_u64()), rng.next_u32() % g)).collect()).unwrap();
        group.bench_function(format!("n{n}"), |b| b.iter(|| attacker.predict(black_box(&obs), &mut rng)));
    }
    group.finish();
}

fn mga(c: &mut Criterion) {
    let g = derive_g(1.0);
    let targets: Vec<u32> = (0..D as u32).step_by(10).collect();
    let mut rng = UserRng::seed_from_u64(4);
    c.bench_function("mga_craft_kappa1000", |b| {
        b.iter(|| mga_craft_with(black_box(&targets), 1000, g, || Ok(HashSeed(rng.next_u64()))).unwrap())
    });
}

criterion_group!(benches, bia, mga);
criterion_main!(benches);
