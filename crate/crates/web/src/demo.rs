use cfkit::evaluation::{run_experiment, Algorithm, Dataset, ExperimentConfig};
use cfkit::factorization::train;
use cfkit::lsh::{build_lsh, LshConfig};
use cfkit::ratings::{build_ratings, split, RatingsMatrix, SplitSpec};
use cfkit::{Optimizer, Result, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

/// A synthetic rating population: users and items share a low-dimensional
/// taste space, and item tastes are driven by binary genre flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct World {
    pub users: u32,
    pub items: u32,
    pub density: f64,
    pub latent: usize,
    pub genres: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for World {
    fn default() -> Self {
        World {
            users: 300,
            items: 200,
            density: 0.12,
            latent: 3,
            genres: 8,
            noise: 0.5,
            seed: 0,
        }
    }
}

pub struct Generated {
    pub ratings: RatingsMatrix,
    pub features: Vec<Vec<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn generate(world: &World) -> Result<Generated> {
    let mut rng = ChaCha8Rng::seed_from_u64(world.seed);
    let (k, g) = (world.latent, world.genres);
    let mixing: Vec<Vec<f64>> = (0..g).map(|_| gaussian(&mut rng, k)).collect();
    let mut features = Vec::with_capacity(world.items as usize);
    let mut item_taste = Vec::with_capacity(world.items as usize);
    for _ in 0..world.items {
        let mut flags: Vec<f64> = (0..g).map(|_| if rng.random_bool(0.25) { 1.0 } else { 0.0 }).collect();
        if flags.iter().all(|&f| f == 0.0) {
            flags[rng.random_range(0..g)] = 1.0;
        }
        let mut v = gaussian(&mut rng, k).into_iter().map(|x| 0.3 * x).collect::<Vec<_>>();
        for (flag, w) in flags.iter().zip(&mixing) {
            for (vi, wi) in v.iter_mut().zip(w) {
                *vi += flag * wi / (g as f64).sqrt();
            }
        }
        features.push(flags);
        item_taste.push(v);
    }
    let noise = Normal::new(0.0, world.noise.max(0.0)).expect("finite noise");
    let mut triples = Vec::new();
    for u in 0..world.users {
        let p = gaussian(&mut rng, k);
        for (i, q) in item_taste.iter().enumerate() {
            if rng.random_bool(world.density.clamp(0.0, 1.0)) {
                let r = (3.3 + 1.2 * dot(&p, q) + noise.sample(&mut rng))
                    .round()
                    .clamp(1.0, 5.0);
                triples.push((u, i as u32, r));
            }
        }
    }
    let ratings = build_ratings(triples)?.with_scale(cfkit::RatingScale::new(1.0, 5.0));
    Ok(Generated { ratings, features })
}

#[derive(Debug, Clone, Copy)]
pub struct CollisionParams {
    pub dim: usize,
    pub bits: usize,
    pub tables: usize,
    pub pairs: usize,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionPoint {
    pub theta: f64,
    /// Share of (pair, table) combinations whose keys matched.
    pub measured: f64,
    /// `(1 - theta / pi)^bits`.
    pub expected: f64,
}

/// `b`-bit key agreement rate of vector pairs at fixed angles, averaged
/// over fresh hyperplanes for every pair.
pub fn collision_curve(p: &CollisionParams) -> Result<Vec<CollisionPoint>> {
    if p.dim < 2 || p.pairs == 0 || p.steps == 0 {
        return Err(cfkit::Error::InvalidParameter(
            "need dim >= 2, pairs >= 1 and steps >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let pi = std::f64::consts::PI;
    let mut out = Vec::with_capacity(p.steps + 1);
    for s in 0..=p.steps {
        let theta = pi * s as f64 / p.steps as f64;
        let mut hits = 0usize;
        for pair in 0..p.pairs {
            let (a, c) = pair_at_angle(&mut rng, p.dim, theta);
            let config = LshConfig {
                num_tables: p.tables,
                bits_per_table: p.bits,
                seed: p.seed.wrapping_mul(1_000_003).wrapping_add((s * p.pairs + pair) as u64),
                rerank: true,
            };
            let index = build_lsh(&[(0, a.clone())], &config)?;
            hits += (0..p.tables).filter(|&t| index.key(&a, t) == index.key(&c, t)).count();
        }
        out.push(CollisionPoint {
            theta,
            measured: hits as f64 / (p.pairs * p.tables) as f64,
            expected: (1.0 - theta / pi).powi(p.bits as i32),
        });
    }
    Ok(out)
}

/// Two unit vectors exactly `theta` apart.
fn pair_at_angle(rng: &mut ChaCha8Rng, dim: usize, theta: f64) -> (Vec<f64>, Vec<f64>) {
    loop {
        let a = gaussian(rng, dim);
        let b = gaussian(rng, dim);
        let na = dot(&a, &a).sqrt();
        if na == 0.0 {
            continue;
        }
        let u: Vec<f64> = a.iter().map(|x| x / na).collect();
        let proj = dot(&b, &u);
        let w: Vec<f64> = b.iter().zip(&u).map(|(x, y)| x - proj * y).collect();
        let nw = dot(&w, &w).sqrt();
        if nw < 1e-9 {
            continue;
        }
        let c = u
            .iter()
            .zip(&w)
            .map(|(x, y)| theta.cos() * x + theta.sin() * y / nw)
            .collect();
        return (u, c);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainParams {
    pub world: World,
    pub rank: usize,
    pub lambda: f64,
    pub epochs: usize,
    pub als: bool,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub objective: Vec<f64>,
    pub train_rmse: f64,
    pub test_rmse: f64,
    pub ratings: usize,
}

fn rmse_of(model: &cfkit::FactorModel, m: &RatingsMatrix) -> f64 {
    let sq: f64 = m
        .entries()
        .iter()
        .map(|r| (model.predict(r.user, r.item) - r.value).powi(2))
        .sum();
    (sq / m.len().max(1) as f64).sqrt()
}

/// Factorizes an 8:2 split of a generated world.
pub fn train_factors(p: &TrainParams) -> Result<TrainingRun> {
    let data = generate(&p.world)?;
    let (train_m, test_m) = split(&data.ratings, &SplitSpec::eighty_twenty(p.world.seed))?;
    let config = TrainConfig {
        optimizer: if p.als { Optimizer::Als } else { Optimizer::Sgd },
        epochs: p.epochs,
        learning_rate: p.learning_rate,
        lambda: p.lambda,
        rank: p.rank,
        seed: p.world.seed,
        convergence_tol: 0.0,
        ..TrainConfig::default()
    };
    let (model, trace) = train(&train_m, &config)?;
    Ok(TrainingRun {
        objective: trace.objective,
        train_rmse: rmse_of(&model, &train_m),
        test_rmse: rmse_of(&model, &test_m),
        ratings: data.ratings.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub retained: f64,
    /// Test RMSE of user-based CF, factorization and the hybrid.
    pub rmse: [f64; 3],
}

pub const SWEEP_ALGORITHMS: [Algorithm; 3] = [Algorithm::BaselineCf, Algorithm::Mf, Algorithm::Hybrid];

pub fn sparsity_sweep(world: &World, retained: &[f64]) -> Result<Vec<SweepPoint>> {
    let data = generate(world)?;
    let dataset = Dataset {
        name: "synthetic".into(),
        ratings: data.ratings,
        features: Some(data.features),
    };
    let mut config = ExperimentConfig {
        algorithms: SWEEP_ALGORITHMS.to_vec(),
        retained: retained.to_vec(),
        seeds: vec![world.seed],
        warmup: false,
        ..ExperimentConfig::default()
    };
    config.params.mf.optimizer = Optimizer::Als;
    config.params.mf.rank = 4;
    config.params.mf.epochs = 20;
    config.params.mf.lambda = 3.0;
    let report = run_experiment(&dataset, &config)?;
    Ok(retained
        .iter()
        .map(|&r| {
            let mut rmse = [f64::NAN; 3];
            for (slot, alg) in SWEEP_ALGORITHMS.iter().enumerate() {
                if let Some(row) = report
                    .rows
                    .iter()
                    .find(|row| row.algorithm == alg.name() && row.retained_fraction == r)
                {
                    rmse[slot] = row.rmse;
                }
            }
            SweepPoint { retained: r, rmse }
        })
        .collect())
}
