use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use qhedge::bsde::{loss_and_grad, training_paths};
use qhedge::lrm::FsBsde;
use qhedge::mvh::Bsre;
use qhedge::pde::{build_grid, solve_pde};
use qhedge::riccati::opportunity_process;
use qhedge::{simulate, BsdeModel, BsdeProblem, Claim, HestonParams, Measure, Mlp, PdeMode, SolverConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench_simulate(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    for m in [1usize, 5, 20] {
        let p = HestonParams::table1(m);
        for measure in [Measure::P, Measure::QMv] {
            g.bench_with_input(BenchmarkId::new(format!("{measure}"), m), &p, |b, p| {
                b.iter(|| simulate(black_box(p), 50, 1024, 7, measure).unwrap())
            });
        }
    }
    g.finish();
}

fn bench_mlp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = c.benchmark_group("mlp");
    for m in [1usize, 20] {
        let mut net = Mlp::with_shape(2 * m, 2 * m + 10, 2, 2 * m, &mut rng);
        let x = Array2::from_shape_fn((128, 2 * m), |(i, j)| ((i * 7 + j) % 13) as f64 / 13.0);
        g.bench_function(BenchmarkId::new("forward", m), |b| {
            b.iter(|| net.forward_batch(black_box(x.view())))
        });
        let (out, tape) = net.forward_taped(x.view());
        g.bench_function(BenchmarkId::new("backward", m), |b| {
            b.iter(|| {
                net.zero_grad();
                net.backward(&tape, black_box(out.view()))
            })
        });
    }
    g.finish();
}

fn bench_bsde_gradient(c: &mut Criterion) {
    let p = HestonParams::table1(1);
    let cfg = SolverConfig::default();
    let paths = training_paths(&p, &cfg, 3, 0).unwrap();
    let mut g = c.benchmark_group("loss_and_grad");
    let bsre = Bsre { params: &p };
    let mut model = BsdeModel::init(&p, bsre.control_dim(), bsre.control_scale(), &cfg, 3);
    g.bench_function("bsre", |b| b.iter(|| loss_and_grad(&bsre, &paths, &mut model).unwrap()));
    let fs = FsBsde {
        params: &p,
        claim: Claim::BasketCall,
    };
    let mut model = BsdeModel::init(&p, fs.control_dim(), fs.control_scale(), &cfg, 3);
    g.bench_function("fs", |b| b.iter(|| loss_and_grad(&fs, &paths, &mut model).unwrap()));
    g.finish();
}

fn bench_pde(c: &mut Criterion) {
    let p = HestonParams::table1(1);
    let mut g = c.benchmark_group("pde");
    g.sample_size(10);
    for (ms, my) in [(100usize, 50usize), (200, 100)] {
        let grid = build_grid(p.strike, ms, my).unwrap();
        g.bench_function(BenchmarkId::new("mvh", format!("{ms}x{my}")), |b| {
            b.iter(|| solve_pde(&p, PdeMode::Mvh, black_box(&grid), 100).unwrap())
        });
    }
    g.finish();
}

fn bench_riccati(c: &mut Criterion) {
    let p = HestonParams::table1(20);
    c.bench_function("riccati/l0_m20", |b| {
        b.iter(|| opportunity_process(black_box(&p), 0.0, &p.y0_sq).unwrap())
    });
}

criterion_group!(
    benches,
    bench_simulate,
    bench_mlp,
    bench_bsde_gradient,
    bench_pde,
    bench_riccati
);
criterion_main!(benches);
