//! Regenerate the bundled sample dataset under `data/`.
//!
//! The eight series mimic the FRED CSV export format (`DATE,VALUE`, ISO
//! dates, `.` for missing) at realistic scales and frequencies: five monthly
//! series and three quarterly ones, 1959 through 2010. They are synthetic —
//! drawn from a sparse VAR(4) with stochastic volatility and then mapped
//! through the inverse of each series' stationarity transform — so the
//! repository stays fully reproducible offline. Run with:
//!
//! ```text
//! cargo run --example make_dataset [--release] [OUT_DIR]
//! ```

use std::fs;
use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use bvar::experiments::{companion_spectral_radius, simulate_var, NoiseModel};
use bvar::model::CoefTensor;
use bvar::sv::VolatilityState;

const SEED: u64 = 20_100_401;
const N: usize = 8;
const P: usize = 4;
/// Quarters 1959Q1 .. 2010Q4.
const QUARTERS: usize = 208;
/// Simulated stationary steps: one fewer than the level span.
const STEPS: usize = QUARTERS - 1;
const WARMUP: usize = 60;

struct SeriesDef {
    id: &'static str,
    monthly: bool,
    /// log_diff (true) or diff (false) when mapping back to levels
    log_levels: bool,
    /// standard deviation of the transformed series
    scale: f64,
    /// level base and per-quarter drift (log units for log_levels)
    base: f64,
    drift: f64,
}

const SERIES: [SeriesDef; 8] = [
    SeriesDef { id: "GS1", monthly: true, log_levels: false, scale: 0.45, base: 4.6, drift: 0.0 },
    SeriesDef { id: "GDPC96", monthly: false, log_levels: true, scale: 0.0085, base: 3000.0, drift: 0.0078 },
    SeriesDef { id: "GDPDEF", monthly: false, log_levels: true, scale: 0.0055, base: 16.0, drift: 0.0088 },
    SeriesDef { id: "UNRATE", monthly: true, log_levels: false, scale: 0.33, base: 5.6, drift: 0.0 },
    SeriesDef { id: "PAYEMS", monthly: true, log_levels: true, scale: 0.0055, base: 53000.0, drift: 0.0045 },
    SeriesDef { id: "M1SL", monthly: true, log_levels: true, scale: 0.011, base: 140.0, drift: 0.011 },
    SeriesDef { id: "M2SL", monthly: true, log_levels: true, scale: 0.009, base: 290.0, drift: 0.016 },
    SeriesDef { id: "M1V", monthly: false, log_levels: true, scale: 0.012, base: 3.5, drift: 0.002 },
];

/// Sparse VAR(4) coefficients with a persistent own-lag diagonal, rescaled
/// to a comfortably stable spectral radius.
fn make_theta(rng: &mut ChaCha8Rng) -> CoefTensor {
    let mut theta = CoefTensor::zeros(N, P);
    for i in 0..N {
        for j in 0..N {
            for k in 0..P {
                let keep = rng.random::<f64>() < 0.30;
                if keep {
                    let v = 0.20 * rng.sample::<f64, _>(StandardNormal);
                    theta.set(i, j, k, v);
                }
            }
        }
        let own = 0.30 + 0.10 * rng.random::<f64>();
        theta.set(i, i, 0, own);
    }
    for _ in 0..6 {
        let radius = companion_spectral_radius(&theta);
        if radius <= 0.80 {
            break;
        }
        let s = 0.80 / radius;
        for v in theta.as_mut_slice() {
            *v *= s;
        }
    }
    theta
}

/// Moderate random correlation matrix via a normalized factor structure.
fn make_psi(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let f = DMatrix::from_fn(N, 2, |_, _| 0.6 * rng.sample::<f64, _>(StandardNormal));
    let mut cov = &f * f.transpose() + DMatrix::<f64>::identity(N, N);
    for i in 0..N {
        let d = cov[(i, i)].sqrt();
        for j in 0..N {
            cov[(i, j)] /= d;
            cov[(j, i)] /= d;
        }
        // renormalizing rows then columns in-place; finish below
    }
    // symmetrize and force exact unit diagonal
    let mut psi = DMatrix::identity(N, N);
    for i in 0..N {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            psi[(i, j)] = v;
            psi[(j, i)] = v;
        }
    }
    psi
}

/// Random-walk log-volatility paths with recession bumps.
fn make_volatility(rng: &mut ChaCha8Rng, psi: DMatrix<f64>) -> VolatilityState {
    let steps = WARMUP + STEPS;
    let mut vol = VolatilityState::new(N, steps);
    vol.psi = psi;
    for i in 0..N {
        let mut w = -0.15 + 0.2 * rng.sample::<f64, _>(StandardNormal);
        for t in 0..steps {
            w += 0.06 * rng.sample::<f64, _>(StandardNormal);
            w = w.clamp(-1.5, 1.5);
            let mut v = w;
            // elevated volatility around the mid-70s, early 80s, and 2008-09
            // (quarter indices within 1959Q2..2010Q4, shifted by the warmup)
            for (start, end, bump) in [(60, 68, 0.55), (84, 96, 0.65), (197, 203, 0.9)] {
                if t >= WARMUP + start && t <= WARMUP + end {
                    v += bump;
                }
            }
            vol.omega[(i, t)] = v;
        }
    }
    vol
}

fn main() {
    let out_dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"));
    fs::create_dir_all(&out_dir).expect("create output directory");

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let theta = make_theta(&mut rng);
    let psi = make_psi(&mut rng);
    let vol = make_volatility(&mut rng, psi);

    let init = DMatrix::zeros(P, N);
    let path = simulate_var(&theta, &init, WARMUP + STEPS, NoiseModel::Stochastic(&vol), &mut rng)
        .expect("simulation");
    // stationary draws in transformed units, scaled per series
    let z = path.rows(P + WARMUP, STEPS).into_owned();

    for (j, def) in SERIES.iter().enumerate() {
        // quarterly levels, one more row than the stationary steps
        let mut levels = Vec::with_capacity(QUARTERS);
        let mut acc = if def.log_levels { def.base.ln() } else { def.base };
        levels.push(acc);
        for t in 0..STEPS {
            acc += def.scale * z[(t, j)] + def.drift;
            levels.push(acc);
        }
        let mut levels: Vec<f64> = if def.log_levels {
            levels.into_iter().map(f64::exp).collect()
        } else {
            levels
        };
        if !def.log_levels {
            let min = levels.iter().cloned().fold(f64::INFINITY, f64::min);
            if min < 0.4 {
                for v in levels.iter_mut() {
                    *v += 0.4 - min;
                }
            }
        }

        let mut csv = String::from("DATE,VALUE\n");
        if def.monthly {
            for (q, level) in levels.iter().enumerate() {
                let year = 1959 + (q / 4) as i32;
                let month0 = 3 * (q % 4);
                for m in 0..3 {
                    let date = format!("{year}-{:02}-01", month0 + m + 1);
                    // small within-quarter wiggle that averages out
                    let wiggle = 0.002 * rng.sample::<f64, _>(StandardNormal);
                    let v = if def.log_levels {
                        level * (1.0 + wiggle)
                    } else {
                        level + def.scale * wiggle
                    };
                    csv.push_str(&format!("{date},{v:.4}\n"));
                }
            }
        } else {
            for (q, level) in levels.iter().enumerate() {
                let year = 1959 + (q / 4) as i32;
                let month = 3 * (q % 4) + 1;
                csv.push_str(&format!("{year}-{month:02}-01,{level:.4}\n"));
            }
        }
        fs::write(out_dir.join(format!("{}.csv", def.id)), csv).expect("write series");
    }

    let mut conf = String::from(
        "# Eight-series quarterly panel, 1960Q1-2010Q4 after transforms.\n\
         # Paths are relative to this file.\n",
    );
    for def in &SERIES {
        conf.push_str(&format!("series.{id}.path = {id}.csv\n", id = def.id));
        let code = match (def.log_levels, def.id) {
            (false, _) => "diff",
            (true, _) => "log_diff",
        };
        conf.push_str(&format!("series.{id}.transform = {code}\n", id = def.id));
        if def.monthly {
            conf.push_str(&format!("series.{id}.aggregate = mean\n", id = def.id));
        }
    }
    conf.push_str("\nstart = 1959-10-01\nend = 2010-12-31\nlags = 4\nseed = 42\n");
    fs::write(out_dir.join("fred8.conf"), conf).expect("write config");

    eprintln!(
        "wrote 8 series + fred8.conf under {} (theta radius {:.3})",
        out_dir.display(),
        companion_spectral_radius(&theta)
    );
}
