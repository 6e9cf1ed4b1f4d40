use ndarray::{s, Array4};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::burgers::BurgersSolver;
use super::spectral::SpectralGrid;
use super::{sample_initial_condition, Family, InitialConditionSpec, SystemSpec, Trajectory};
use crate::error::{MppError, Result};

/// Generates one trajectory. Coefficients and the initial-condition seed are
/// drawn from a stream seeded by `seed`; each field gets its own initial state.
pub fn generate_trajectory(spec: &SystemSpec, ic: &InitialConditionSpec, seed: u64) -> Result<Trajectory> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coefficients = spec.draw_coefficients(&mut rng);
    let [h, w] = spec.grid_shape();
    let n_fields = spec.fields.len();
    let mut snapshots = Array4::<f64>::zeros((spec.n_steps, n_fields, h, w));

    for f in 0..n_fields {
        let u0 = sample_initial_condition(ic, spec.n, spec.dims, rng.next_u64())?;
        match spec.family {
            Family::Burgers => {
                let solver = BurgersSolver::new(spec.n, spec.length, coefficients.delta)?;
                let mut u = u0;
                snapshots.slice_mut(s![0, f, .., ..]).assign(&u);
                for t in 1..spec.n_steps {
                    u = solver.evolve(&u, spec.dt)?;
                    snapshots.slice_mut(s![t, f, .., ..]).assign(&u);
                }
            }
            _ => {
                let grid = SpectralGrid::new([h, w], spec.length)?;
                let u_hat = grid.forward(&u0);
                snapshots.slice_mut(s![0, f, .., ..]).assign(&u0);
                for t in 1..spec.n_steps {
                    let u = grid.propagate(&u_hat, &coefficients.v, coefficients.delta, t as f64 * spec.dt);
                    snapshots.slice_mut(s![t, f, .., ..]).assign(&u);
                }
            }
        }
    }
    let traj = Trajectory {
        system: spec.name.clone(),
        seed,
        coefficients,
        snapshots,
    };
    if !traj.is_finite() {
        return Err(MppError::NonFinite("trajectory"));
    }
    Ok(traj)
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub spec: SystemSpec,
    pub count: usize,
}

/// Generates `count` trajectories per system with seeds `base_seed + i`,
/// `i` running over the whole corpus so seeds never collide across systems.
pub fn generate_corpus(entries: &[CorpusEntry], ic: &InitialConditionSpec, base_seed: u64) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(entries.iter().map(|e| e.count).sum());
    let mut index = 0u64;
    for entry in entries {
        for _ in 0..entry.count {
            out.push(generate_trajectory(&entry.spec, ic, base_seed.wrapping_add(index))?);
            index += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::{exact_spectral_step, Field};

    #[test]
    fn coefficients_respect_ranges() {
        let ic = InitialConditionSpec::default();
        let adv = SystemSpec::preset("advection").unwrap().with_resolution(32, 1);
        let dif = SystemSpec::preset("diffusion").unwrap().with_resolution(32, 1);
        for seed in 0..50 {
            let a = generate_trajectory(&adv, &ic, seed).unwrap();
            assert!((-3.0..=3.0).contains(&a.coefficients.v[0]));
            assert_eq!(a.coefficients.delta, 0.0);
            let d = generate_trajectory(&dif, &ic, seed).unwrap();
            assert!((1e-3..=1.0).contains(&d.coefficients.delta));
            assert_eq!(d.coefficients.v, vec![0.0]);
        }
    }

    #[test]
    fn snapshots_match_repeated_propagation() {
        let ic = InitialConditionSpec::default();
        let mut spec = SystemSpec::preset("advection_diffusion").unwrap().with_resolution(64, 1);
        spec.n_steps = 17;
        let traj = generate_trajectory(&spec, &ic, 3).unwrap();
        let c = &traj.coefficients;
        let mut u: Field = traj.snapshots.slice(s![0, 0, .., ..]).to_owned();
        for _ in 0..16 {
            u = exact_spectral_step(&u, &c.v, c.delta, spec.dt, spec.length).unwrap();
        }
        let last = traj.snapshots.slice(s![16, 0, .., ..]);
        let err = u.iter().zip(last.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn corpus_is_deterministic_with_disjoint_seeds() {
        let ic = InitialConditionSpec::default();
        let entries = vec![
            CorpusEntry {
                spec: SystemSpec::preset("advection").unwrap().with_resolution(16, 1),
                count: 5,
            },
            CorpusEntry {
                spec: SystemSpec::preset("diffusion").unwrap().with_resolution(16, 1),
                count: 4,
            },
        ];
        let a = generate_corpus(&entries, &ic, 7).unwrap();
        let b = generate_corpus(&entries, &ic, 7).unwrap();
        assert_eq!(a.len(), 9);
        assert_eq!(a, b);
        let mut seeds: Vec<u64> = a.iter().map(|t| t.seed).collect();
        seeds.dedup();
        assert_eq!(seeds.len(), 9);
    }

    #[test]
    fn burgers_trajectory_is_finite() {
        let ic = InitialConditionSpec::default();
        let mut spec = SystemSpec::preset("burgers").unwrap().with_resolution(64, 1);
        spec.n_steps = 17;
        let traj = generate_trajectory(&spec, &ic, 1).unwrap();
        assert!(traj.is_finite());
        let m0 = traj.snapshots.slice(s![0, 0, .., ..]).mean().unwrap();
        let m1 = traj.snapshots.slice(s![16, 0, .., ..]).mean().unwrap();
        assert!((m0 - m1).abs() < 1e-10);
    }
}
