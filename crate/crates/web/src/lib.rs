//! Browser demo bindings. Each export works on data generated in the page,
//! so nothing is fetched.
//!
//! The plain functions in [`demo`] hold the logic and are tested natively;
//! the `#[wasm_bindgen]` wrappers only convert arguments.

pub mod demo;

use wasm_bindgen::prelude::*;

/// Flattened `[theta, measured, expected]` rows, `steps + 1` of them from
/// 0 to pi.
#[wasm_bindgen]
pub fn collision_curve(
    dim: usize,
    bits: usize,
    tables: usize,
    pairs: usize,
    steps: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    let rows = demo::collision_curve(&demo::CollisionParams {
        dim,
        bits,
        tables,
        pairs,
        steps,
        seed: seed as u64,
    })
    .map_err(|e| JsError::new(&e.to_string()))?;
    Ok(rows
        .into_iter()
        .flat_map(|r| [r.theta, r.measured, r.expected])
        .collect())
}

#[wasm_bindgen]
pub struct TrainingRun {
    inner: demo::TrainingRun,
}

#[wasm_bindgen]
impl TrainingRun {
    /// Objective after initialization and after every epoch (SGD) or
    /// half-step (ALS).
    #[wasm_bindgen(getter)]
    pub fn objective(&self) -> Vec<f64> {
        self.inner.objective.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn train_rmse(&self) -> f64 {
        self.inner.train_rmse
    }

    #[wasm_bindgen(getter)]
    pub fn test_rmse(&self) -> f64 {
        self.inner.test_rmse
    }

    #[wasm_bindgen(getter)]
    pub fn ratings(&self) -> usize {
        self.inner.ratings
    }
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen]
pub fn train_factors(
    users: u32,
    items: u32,
    rank: usize,
    lambda: f64,
    epochs: usize,
    als: bool,
    learning_rate: f64,
    seed: u32,
) -> Result<TrainingRun, JsError> {
    let inner = demo::train_factors(&demo::TrainParams {
        world: demo::World {
            users,
            items,
            seed: seed as u64,
            ..demo::World::default()
        },
        rank,
        lambda,
        epochs,
        als,
        learning_rate,
    })
    .map_err(|e| JsError::new(&e.to_string()))?;
    Ok(TrainingRun { inner })
}

/// Flattened `[retained, rmse_cf, rmse_mf, rmse_hybrid]` rows, one per
/// retained fraction.
#[wasm_bindgen]
pub fn sparsity_sweep(users: u32, items: u32, retained: Vec<f64>, seed: u32) -> Result<Vec<f64>, JsError> {
    let world = demo::World {
        users,
        items,
        seed: seed as u64,
        ..demo::World::default()
    };
    let rows = demo::sparsity_sweep(&world, &retained).map_err(|e| JsError::new(&e.to_string()))?;
    Ok(rows
        .into_iter()
        .flat_map(|r| [r.retained, r.rmse[0], r.rmse[1], r.rmse[2]])
        .collect())
}
