//! WebAssembly bindings for the static demo page in `www/`.

use qtps::analysis::{population_transfer, wigner_transform, PhaseGrid};
use qtps::dynamics::{ClassicalState, SimParams, SseOps};
use qtps::fock::{build_hamiltonians, build_position_momentum, build_potential, BasisConfig, QuantumState};
use qtps::pathprob::stationary_state_for;
use qtps::rng::{Purpose, SeedInfo};
use qtps::system::{ClassicalLangevin, Stepper};
use wasm_bindgen::prelude::*;

const GAMMA: f64 = 0.25;

fn js(e: qtps::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Position of a Langevin trajectory started in the left well, recorded every `record_every` steps.
#[wasm_bindgen]
pub fn langevin_trajectory(t_b: f64, dt: f64, steps: u32, record_every: u32, seed: u64) -> Result<Vec<f64>, JsError> {
    let params = SimParams::at_barrier_temperature(GAMMA, t_b, dt);
    let x0 = params.well().minimum();
    let d = ClassicalLangevin::new(params).map_err(js)?;
    let mut rng = SeedInfo::new(seed, Purpose::Simulate, 0).rng();
    let mut s = ClassicalState::new(-x0.abs(), 0.0);
    let every = record_every.max(1);
    let mut out = Vec::with_capacity((steps / every) as usize + 1);
    out.push(s.x);
    for i in 1..=steps {
        s = d.step(&s, &mut rng).map_err(js)?;
        if i % every == 0 {
            out.push(s.x);
        }
    }
    Ok(out)
}

/// Coherent tunneling of a well-localized state.
#[wasm_bindgen]
pub struct Transfer {
    left: Vec<f64>,
    dt: f64,
    full_transfer_time: Option<f64>,
}

#[wasm_bindgen]
impl Transfer {
    /// Population left of the barrier at times `0, dt, 2 dt, ...`.
    #[wasm_bindgen(getter)]
    pub fn left(&self) -> Vec<f64> {
        self.left.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// NaN when the population never crossed over inside the window.
    #[wasm_bindgen(getter, js_name = fullTransferTime)]
    pub fn full_transfer_time(&self) -> f64 {
        self.full_transfer_time.unwrap_or(f64::NAN)
    }
}

#[wasm_bindgen]
pub fn coherent_transfer(dim: usize, t_max: f64, dt: f64) -> Result<Transfer, JsError> {
    let params = SimParams::at_barrier_temperature(GAMMA, 0.3, 1e-3);
    let cfg = BasisConfig::for_well(dim, params.c2);
    let v = build_potential(&cfg, params.c4, params.c2).map_err(js)?;
    let (h, _) = build_hamiltonians(&cfg, &v, 0.0).map_err(js)?;
    let (x, _) = build_position_momentum(&cfg).map_err(js)?;
    let psi = QuantumState::coherent(&cfg, params.well().minimum().abs() * -1.0, 0.0);
    let c = population_transfer(&h, &x, &psi, cfg.hbar, dt, t_max).map_err(js)?;
    Ok(Transfer { left: c.left, dt, full_transfer_time: c.full_transfer_time })
}

/// Wigner function of the dissipative stationary state, row-major in `x`
/// (`nx` rows over [-10, 10], `np` columns over [-6, 6]).
#[wasm_bindgen]
pub fn stationary_wigner(dim: usize, t_b: f64, nx: usize, np: usize) -> Result<Vec<f64>, JsError> {
    let params = SimParams::at_barrier_temperature(GAMMA, t_b, 1e-3);
    let cfg = BasisConfig::for_well(dim, params.c2);
    let ops = SseOps::from_params(&cfg, &params).map_err(js)?;
    let st = stationary_state_for(&ops).map_err(js)?;
    let grid = PhaseGrid::new(-10.0, 10.0, -6.0, 6.0, nx, np).map_err(js)?;
    // Mix the Wigner functions of the leading eigenvectors, which carry all but 1e-3 of the trace.
    let eig = st.rho.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut acc = vec![0.0; nx * np];
    let mut kept = 0.0;
    for k in order {
        if kept >= 1.0 - 1e-3 {
            break;
        }
        let w = eig.eigenvalues[k];
        kept += w;
        let psi = QuantumState::normalized(eig.eigenvectors.column(k).into_owned()).map_err(js)?;
        let f = wigner_transform(&psi, &cfg, &grid).map_err(js)?;
        for i in 0..nx {
            for j in 0..np {
                acc[i * np + j] += w * f.values[(i, j)];
            }
        }
    }
    acc.iter_mut().for_each(|v| *v /= kept);
    Ok(acc)
}
