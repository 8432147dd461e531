//! The bundled model corpus: small models with closed-form or well
//! understood behaviour, used by tests, examples and the CLI configs.

use crate::model::{ArrivalAtom, BranchingModel, GammaAtom, ImmigrationLaw, NuAtom, OffspringAtom, SpImmigrationLaw, SuperModel};

/// Single type, rate 1, zero or two children with probability ½ each.
pub fn critical_binary() -> BranchingModel {
    BranchingModel::without_motion(1, vec![1.0], vec![vec![OffspringAtom::new(0.5, vec![]), OffspringAtom::new(0.5, vec![0, 0])]])
}

/// Single type, rate 1, `p0 = 3/4`, `p2 = 1/4`; `lambda = -1/2`.
pub fn subcritical_binary() -> BranchingModel {
    BranchingModel::without_motion(1, vec![1.0], vec![vec![OffspringAtom::new(0.75, vec![]), OffspringAtom::new(0.25, vec![0, 0])]])
}

/// Two types; each branches into two particles of the other type or none.
pub fn swap_model() -> BranchingModel {
    BranchingModel::without_motion(
        2,
        vec![1.0, 1.0],
        vec![
            vec![OffspringAtom::new(0.5, vec![1, 1]), OffspringAtom::new(0.5, vec![])],
            vec![OffspringAtom::new(0.5, vec![0, 0]), OffspringAtom::new(0.5, vec![])],
        ],
    )
}

/// Critical three-type model with cyclic motion and non-local offspring.
pub fn three_type_nonlocal() -> BranchingModel {
    BranchingModel {
        space: crate::model::TypeSpace::new(3),
        motion: vec![vec![-1.0, 1.0, 0.0], vec![0.0, -0.5, 0.5], vec![2.0, 0.0, -2.0]],
        beta: vec![1.0, 1.0, 1.0],
        offspring: vec![
            vec![OffspringAtom::new(0.5, vec![]), OffspringAtom::new(0.25, vec![1, 2]), OffspringAtom::new(0.25, vec![0, 1])],
            vec![OffspringAtom::new(2.0 / 3.0, vec![]), OffspringAtom::new(1.0 / 3.0, vec![0, 2, 2])],
            vec![OffspringAtom::new(0.5, vec![]), OffspringAtom::new(0.5, vec![0, 1])],
        ],
    }
}

/// Single-type Feller diffusion `psi(z) = z^2`.
pub fn feller() -> SuperModel {
    SuperModel::feller(vec![0.0], vec![1.0])
}

/// Single-type Feller diffusion with drift `b = -1/2`.
pub fn subcritical_feller() -> SuperModel {
    SuperModel::feller(vec![-0.5], vec![1.0])
}

/// Critical two-type superprocess with local jumps and non-local branching.
pub fn sp_nonlocal() -> SuperModel {
    let mut m = SuperModel::feller(vec![0.0, 0.0], vec![0.5, 1.0]);
    m.motion = vec![vec![-1.0, 1.0], vec![1.0, -1.0]];
    m.nu[0] = vec![NuAtom { weight: 1.0, y: 0.5 }];
    m.beta = vec![1.0, 1.0];
    m.gamma = vec![vec![0.0, 0.5], vec![0.5, 0.0]];
    m.gamma_atoms = vec![
        vec![GammaAtom {
            weight: 0.5,
            measure: vec![1.0, 0.0],
        }],
        vec![GammaAtom {
            weight: 0.5,
            measure: vec![0.0, 1.0],
        }],
    ];
    m
}

/// Rate-1 immigration of one type-0 particle per event.
pub fn single_immigrant() -> ImmigrationLaw {
    ImmigrationLaw::atoms(1.0, vec![ArrivalAtom::new(1.0, vec![0])])
}

/// Rate-1 immigration with the logarithmic-tail batch law of exponent `p`.
pub fn heavy_tail(p: f64) -> ImmigrationLaw {
    ImmigrationLaw::log_tail(1.0, p, 0)
}

/// `chi[f] = f(0)`: pure drift immigration at unit rate.
pub fn linear_chi() -> SpImmigrationLaw {
    SpImmigrationLaw {
        upsilon: vec![1.0],
        atoms: Vec::new(),
    }
}

pub fn heavy_tail_exponents() -> [f64; 3] {
    [1.0, 1.5, 2.0]
}
