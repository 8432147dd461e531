//! Random small models shared by the integration tests.
#![allow(dead_code)]

use branchlab::model::{ArrivalAtom, BranchingModel, GammaAtom, ImmigrationLaw, MassAtom, NuAtom, OffspringAtom, SpImmigrationLaw, SuperModel, TypeSpace};
use rand::Rng;

fn probabilities<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

/// Dense motion (irreducible for `n > 1`) with an optional killing deficit.
pub fn random_motion<R: Rng>(rng: &mut R, n: usize, killing: bool) -> Vec<Vec<f64>> {
    let mut q = vec![vec![0.0; n]; n];
    for x in 0..n {
        let mut out = 0.0;
        for y in 0..n {
            if y != x {
                q[x][y] = rng.random_range(0.2..1.5);
                out += q[x][y];
            }
        }
        if killing && rng.random_bool(0.3) {
            out += rng.random_range(0.0..0.5);
        }
        q[x][x] = -out;
    }
    q
}

/// At most three types and three offspring atoms per type; with
/// `big_family` one atom of type 0 has at least three children.
pub fn random_branching<R: Rng>(rng: &mut R, max_types: usize, big_family: bool) -> BranchingModel {
    let n = rng.random_range(1..=max_types);
    let motion = random_motion(rng, n, true);
    let beta = (0..n).map(|_| rng.random_range(0.3..1.5)).collect();
    let offspring = (0..n)
        .map(|x| {
            let k = rng.random_range(1..=3);
            let probs = probabilities(rng, k);
            probs
                .into_iter()
                .enumerate()
                .map(|(i, p)| {
                    let lo = if big_family && x == 0 && i == 0 { 3 } else { 0 };
                    let size = rng.random_range(lo..=lo.max(3));
                    OffspringAtom::new(p, (0..size).map(|_| rng.random_range(0..n)).collect::<Vec<_>>())
                })
                .collect()
        })
        .collect();
    BranchingModel {
        space: TypeSpace::new(n),
        motion,
        beta,
        offspring,
    }
}

/// Superprocess with at least one jump atom (local or non-local) per type.
pub fn random_super<R: Rng>(rng: &mut R, max_types: usize) -> SuperModel {
    let n = rng.random_range(1..=max_types);
    let motion = random_motion(rng, n, false);
    let mut m = SuperModel::feller((0..n).map(|_| rng.random_range(-0.5..0.5)).collect(), (0..n).map(|_| rng.random_range(0.0..1.0)).collect());
    m.motion = motion;
    m.beta = (0..n).map(|_| rng.random_range(0.0..1.5)).collect();
    for x in 0..n {
        m.nu[x] = (0..rng.random_range(1..=2))
            .map(|_| NuAtom {
                weight: rng.random_range(0.1..1.0),
                y: rng.random_range(0.1..2.0),
            })
            .collect();
        let mut budget = 1.0;
        for y in 0..n {
            let g = rng.random_range(0.0..0.3);
            m.gamma[x][y] = g;
            budget -= g;
        }
        if rng.random_bool(0.7) {
            let measure: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let total: f64 = measure.iter().sum::<f64>().max(1e-3);
            let weight = rng.random_range(0.0..1.0) * budget / total;
            if weight > 0.0 {
                m.gamma_atoms[x].push(GammaAtom { weight, measure });
            }
        }
    }
    m
}

pub fn random_immigration<R: Rng>(rng: &mut R, n: usize) -> ImmigrationLaw {
    let k = rng.random_range(1..=3);
    let atoms = probabilities(rng, k)
        .into_iter()
        .map(|p| {
            let size = rng.random_range(1..=4);
            ArrivalAtom::new(p, (0..size).map(|_| rng.random_range(0..n)).collect::<Vec<_>>())
        })
        .collect();
    ImmigrationLaw::atoms(rng.random_range(0.1..3.0), atoms)
}

pub fn random_sp_immigration<R: Rng>(rng: &mut R, n: usize) -> SpImmigrationLaw {
    SpImmigrationLaw {
        upsilon: (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
        atoms: (0..rng.random_range(0..=2))
            .map(|_| MassAtom {
                weight: rng.random_range(0.1..2.0),
                measure: (0..n).map(|_| rng.random_range(0.0..3.0)).collect(),
            })
            .collect(),
    }
}

/// Critical by construction: conservative motion and every type has mean
/// offspring number one, so `phi = 1` and `lambda = 0`.
pub fn random_critical_branching<R: Rng>(rng: &mut R, max_types: usize) -> BranchingModel {
    let n = rng.random_range(1..=max_types);
    let motion = random_motion(rng, n, false);
    let beta = (0..n).map(|_| rng.random_range(0.3..1.5)).collect();
    let offspring = (0..n)
        .map(|_| {
            let p1 = rng.random_range(0.0..0.6);
            let q = (1.0 - p1) / 2.0;
            let mut atoms = vec![OffspringAtom::new(q, vec![]), OffspringAtom::new(q, vec![rng.random_range(0..n), rng.random_range(0..n)])];
            if p1 > 0.0 {
                atoms.push(OffspringAtom::new(p1, vec![rng.random_range(0..n)]));
            }
            atoms
        })
        .collect();
    BranchingModel {
        space: TypeSpace::new(n),
        motion,
        beta,
        offspring,
    }
}
