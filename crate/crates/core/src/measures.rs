//! Overlap measures `m_x = 1/2 [m ^ (delta_x * m)]` and their Radon–Nikodym
//! ratios against `m`.

use crate::error::Result;
use crate::levy::{Atom, LevyMeasure};
use crate::mechanisms::ModelSpec;
use crate::quadrature::QuadConfig;

/// Slack for pairing atoms after a shift.
pub const ATOM_SLACK: f64 = 1e-12;

fn atom_mass_at(atoms: &[Atom], z: f64) -> f64 {
    atoms
        .iter()
        .filter(|a| (a.loc - z).abs() <= ATOM_SLACK * a.loc.abs().max(1.0))
        .map(|a| a.mass)
        .sum()
}

/// Density of `m_x` at `z`: `1/2 min(f(z), f(z - x))`.
pub fn overlap_density(base: &LevyMeasure, x: f64, z: f64) -> f64 {
    if !(z > 0.0) || !(z - x > 0.0) {
        return 0.0;
    }
    0.5 * base.density(z).min(base.density(z - x))
}

/// Atoms of `m_x`: an atom at `z` pairs with an atom at `z - x`.
pub fn overlap_atoms(base: &LevyMeasure, x: f64) -> Vec<Atom> {
    let atoms = base.atoms();
    let mut out = Vec::new();
    for a in &atoms {
        let partner = a.loc - x;
        if partner <= 0.0 {
            continue;
        }
        let m = atom_mass_at(&atoms, partner);
        if m > 0.0 {
            out.push(Atom {
                loc: a.loc,
                mass: 0.5 * a.mass.min(m),
            });
        }
    }
    out
}

/// Total mass `m_x(0, inf)`; `inf` for `x = 0` and infinite activity.
pub fn overlap_mass(base: &LevyMeasure, x: f64, cfg: &QuadConfig) -> Result<f64> {
    let atoms: f64 = overlap_atoms(base, x).iter().map(|a| a.mass).sum();
    if !base.has_density() {
        return Ok(atoms);
    }
    let cont = if base.density_decreasing() {
        // min(f(z), f(z - x)) = f(z v (z - x)) for nonincreasing f
        0.5 * base.density_tail_mass(x.abs(), cfg)?
    } else {
        let mut bps = base.breakpoints();
        let shifted: Vec<f64> = bps.iter().map(|b| b + x).collect();
        bps.extend(shifted);
        bps.push(1.0);
        let lo = x.max(0.0);
        crate::quadrature::integrate_value(
            |z| overlap_density(base, x, z),
            lo,
            f64::INFINITY,
            &bps,
            cfg,
        )?
    };
    Ok(cont + atoms)
}

/// `int h dm_x` over the density part plus paired atoms.
pub fn overlap_integrate<H: Fn(f64) -> f64>(
    base: &LevyMeasure,
    x: f64,
    h: H,
    extra: &[f64],
    cfg: &QuadConfig,
) -> Result<f64> {
    let atoms: f64 = overlap_atoms(base, x)
        .iter()
        .map(|a| a.mass * h(a.loc))
        .sum();
    if !base.has_density() {
        return Ok(atoms);
    }
    let mut bps = base.breakpoints();
    let shifted: Vec<f64> = bps.iter().map(|b| b + x).collect();
    bps.extend(shifted);
    bps.push(1.0);
    bps.extend_from_slice(extra);
    let lo = x.max(0.0);
    let cont = crate::quadrature::integrate_value(
        |z| {
            let d = overlap_density(base, x, z);
            if d == 0.0 {
                0.0
            } else {
                d * h(z)
            }
        },
        lo,
        f64::INFINITY,
        &bps,
        cfg,
    )?;
    Ok(cont + atoms)
}

/// `kappa(x) = [mu ^ delta_x*mu](0,inf) + [nu ^ delta_x*nu](0,inf)`.
pub fn kappa(model: &ModelSpec, x: f64) -> Result<f64> {
    let cfg = model.quad();
    let m = overlap_mass(&model.branching.mu, x, cfg)?;
    let n = overlap_mass(&model.immigration.nu, x, cfg)?;
    Ok(2.0 * m + 2.0 * n)
}

/// `1/2 min(1, f(z - x) / f(z))` for the density part.
pub fn rn_ratio_density(base: &LevyMeasure, x: f64, z: f64) -> f64 {
    if !(z > 0.0) || !(z - x > 0.0) {
        return 0.0;
    }
    let fz = base.density(z);
    if !(fz > 0.0) {
        return 0.0;
    }
    0.5 * (base.density(z - x) / fz).min(1.0)
}

/// Atom-to-atom ratio `1/2 min(1, m{z - x} / m{z})`.
pub fn rn_ratio_atom(base: &LevyMeasure, x: f64, z: f64) -> f64 {
    if !(z > 0.0) || !(z - x > 0.0) {
        return 0.0;
    }
    let atoms = base.atoms();
    let here = atom_mass_at(&atoms, z);
    if here == 0.0 {
        return 0.0;
    }
    0.5 * (atom_mass_at(&atoms, z - x) / here).min(1.0)
}

/// Radon–Nikodym derivative `d m_x / d m` at `z`, in `[0, 1/2]`.
pub fn rn_ratio(base: &LevyMeasure, x: f64, z: f64) -> f64 {
    if atom_mass_at(&base.atoms(), z) > 0.0 {
        rn_ratio_atom(base, x, z)
    } else {
        rn_ratio_density(base, x, z)
    }
}

/// `rho_2(x, y, z) = rho_1(x - y, z) + rho_1(y - x, z)`.
pub fn rn_ratio_pair(base: &LevyMeasure, x: f64, y: f64, z: f64) -> f64 {
    rn_ratio(base, x - y, z) + rn_ratio(base, y - x, z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unif() -> LevyMeasure {
        LevyMeasure::uniform(1.0, 0.0, 1.0)
    }

    #[test]
    fn density_examples() {
        assert_eq!(overlap_density(&unif(), 0.0, 0.3), 0.5);
        assert_eq!(overlap_density(&unif(), 0.4, 0.2), 0.0);
        assert_eq!(overlap_density(&unif(), 0.4, 0.7), 0.5);
    }

    #[test]
    fn mass_examples() {
        let cfg = QuadConfig::default();
        assert!((overlap_mass(&unif(), 0.0, &cfg).unwrap() - 0.5).abs() < 1e-12);
        assert!((overlap_mass(&unif(), 0.4, &cfg).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(overlap_mass(&unif(), 1.5, &cfg).unwrap(), 0.0);
        let shifted = LevyMeasure::uniform(1.0, 0.5, 2.0);
        let q = overlap_mass(&shifted, 0.4, &cfg).unwrap();
        assert!((q - 0.55).abs() < 1e-9, "{q}");
        assert!((overlap_mass(&shifted, -0.4, &cfg).unwrap() - q).abs() < 1e-9);
    }

    #[test]
    fn atoms_pair_exactly() {
        let cfg = QuadConfig::default();
        let m = LevyMeasure::Atoms(vec![
            Atom {
                loc: 1.0,
                mass: 2.0,
            },
            Atom {
                loc: 1.5,
                mass: 1.0,
            },
        ]);
        assert!((overlap_mass(&m, 0.5, &cfg).unwrap() - 0.5).abs() < 1e-15);
        assert!((overlap_mass(&m, -0.5, &cfg).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(overlap_mass(&m, 0.49, &cfg).unwrap(), 0.0);
        assert_eq!(rn_ratio(&m, 0.5, 1.5), 0.5);
        assert_eq!(rn_ratio(&m, -0.5, 1.0), 0.25);
    }

    #[test]
    fn rn_ratio_examples() {
        let s = LevyMeasure::stable(1.5, 1.0).unwrap();
        assert_eq!(rn_ratio(&s, 1.0, 0.5), 0.0);
        assert_eq!(rn_ratio(&s, 0.0, 0.5), 0.5);
        assert_eq!(rn_ratio(&s, 1.0, 2.0), 0.5);
        let expect = 0.5 * (3.0f64 / 2.0).powf(-2.5);
        assert!((rn_ratio(&s, -1.0, 2.0) - expect).abs() < 1e-15);
    }

    #[test]
    fn kappa_examples() {
        use crate::mechanisms::*;
        let m = ModelSpec::new(
            BranchingMechanism::new(1.0, 0.0, unif()).unwrap(),
            ImmigrationMechanism::new(0.0, unif()).unwrap(),
            CompetitionMechanism::none(),
        )
        .unwrap();
        assert!((kappa(&m, 0.0).unwrap() - 2.0).abs() < 1e-12);
        let m = ModelSpec::new(
            BranchingMechanism::new(1.0, 0.0, unif()).unwrap(),
            ImmigrationMechanism::none(),
            CompetitionMechanism::none(),
        )
        .unwrap();
        assert!((kappa(&m, 0.4).unwrap() - 0.6).abs() < 1e-12);
        let m = ModelSpec::new(
            BranchingMechanism::new(1.0, 0.5, LevyMeasure::zero()).unwrap(),
            ImmigrationMechanism::none(),
            CompetitionMechanism::none(),
        )
        .unwrap();
        assert_eq!(kappa(&m, 0.7).unwrap(), 0.0);
    }
}
