use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Protein,
    Ligand,
}

impl Role {
    pub fn index(self) -> usize {
        match self {
            Role::Protein => 0,
            Role::Ligand => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub pos: [f64; 3],
    pub element: usize,
    pub role: Role,
}

/// Coefficients of the planted affinity:
/// `intercept + a * contacts - b * mean_nearest`, clamped to `[0, 12]`,
/// where `contacts` counts protein-ligand pairs closer than
/// `contact_cutoff` and `mean_nearest` is the mean over ligand atoms of the
/// distance to the closest protein atom.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelParams {
    pub a: f64,
    pub b: f64,
    pub intercept: f64,
    pub contact_cutoff: f64,
}

impl Default for LabelParams {
    fn default() -> Self {
        Self { a: 0.02, b: 0.8, intercept: 6.0, contact_cutoff: 4.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    /// Edge length of the cubic bounding box, Å.
    pub box_size: f64,
    pub elements: usize,
    pub protein_atoms: (usize, usize),
    pub ligand_atoms: (usize, usize),
    /// Bond length of the random-walk chains, Å.
    pub step: f64,
    /// Label noise standard deviation, pK units.
    pub sigma: f64,
    pub label: LabelParams,
}

impl Default for GenParams {
    fn default() -> Self {
        Self { box_size: 16.0, elements: 4, protein_atoms: (20, 60), ligand_atoms: (5, 20), step: 1.5, sigma: 0.1, label: LabelParams::default() }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidParams(m.to_string()));
        if !(self.box_size > 0.0 && self.box_size.is_finite()) {
            return bad("box size must be positive");
        }
        if self.elements == 0 {
            return bad("element count must be positive");
        }
        if self.protein_atoms.0 == 0 || self.ligand_atoms.0 == 0 {
            return bad("atom counts must be positive");
        }
        if self.protein_atoms.0 > self.protein_atoms.1 || self.ligand_atoms.0 > self.ligand_atoms.1 {
            return bad("atom count ranges must satisfy min <= max");
        }
        if !(self.step > 0.0) || !(self.sigma >= 0.0) || !(self.label.contact_cutoff > 0.0) {
            return bad("step, cutoff must be positive and sigma non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenMeta {
    pub seed: u64,
    pub params: GenParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticComplex {
    pub complex_id: String,
    pub atoms: Vec<Atom>,
    pub label_pk: f64,
    pub meta: GenMeta,
}

impl SyntheticComplex {
    pub fn role_count(&self, role: Role) -> usize {
        self.atoms.iter().filter(|a| a.role == role).count()
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// The noise-free label of a set of atoms. Needs at least one atom of each role.
pub fn planted_affinity(atoms: &[Atom], p: &LabelParams) -> Result<f64, DataError> {
    let protein: Vec<&Atom> = atoms.iter().filter(|a| a.role == Role::Protein).collect();
    let ligand: Vec<&Atom> = atoms.iter().filter(|a| a.role == Role::Ligand).collect();
    if protein.is_empty() || ligand.is_empty() {
        return Err(DataError::InvalidParams("need at least one protein and one ligand atom".into()));
    }
    let mut contacts = 0usize;
    let mut nearest_sum = 0.0;
    for l in &ligand {
        let mut nearest = f64::INFINITY;
        for pr in &protein {
            let d = dist(&l.pos, &pr.pos);
            if d < p.contact_cutoff {
                contacts += 1;
            }
            nearest = nearest.min(d);
        }
        nearest_sum += nearest;
    }
    let mean_nearest = nearest_sum / ligand.len() as f64;
    Ok((p.intercept + p.a * contacts as f64 - p.b * mean_nearest).clamp(0.0, 12.0))
}

fn clamp_to_box(p: [f64; 3], size: f64) -> [f64; 3] {
    // keep strictly inside so floor-based voxel indices stay in range
    let hi = size * (1.0 - 1e-9);
    [p[0].clamp(0.0, hi), p[1].clamp(0.0, hi), p[2].clamp(0.0, hi)]
}

fn walk(rng: &mut ChaCha8Rng, start: [f64; 3], n: usize, step: f64, size: f64) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(n);
    let mut cur = clamp_to_box(start, size);
    out.push(cur);
    while out.len() < n {
        let d: [f64; 3] = UnitSphere.sample(rng);
        cur = clamp_to_box([cur[0] + step * d[0], cur[1] + step * d[1], cur[2] + step * d[2]], size);
        out.push(cur);
    }
    out
}

/// Deterministic in `seed`. A protein chain is grown from a random point in
/// the central half of the box, then a ligand chain is started at a random
/// distance from a random protein atom so contact counts vary widely.
pub fn generate_complex(seed: u64, params: &GenParams) -> Result<SyntheticComplex, DataError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = params.box_size;
    let n_p = rng.random_range(params.protein_atoms.0..=params.protein_atoms.1);
    let n_l = rng.random_range(params.ligand_atoms.0..=params.ligand_atoms.1);
    let start = [rng.random_range(0.25 * s..0.75 * s), rng.random_range(0.25 * s..0.75 * s), rng.random_range(0.25 * s..0.75 * s)];
    let protein = walk(&mut rng, start, n_p, params.step, s);
    let anchor = protein[rng.random_range(0..n_p)];
    let offset = rng.random_range(2.0..8.0);
    let dir: [f64; 3] = UnitSphere.sample(&mut rng);
    let lstart = [anchor[0] + offset * dir[0], anchor[1] + offset * dir[1], anchor[2] + offset * dir[2]];
    let ligand = walk(&mut rng, lstart, n_l, params.step, s);

    let mut atoms = Vec::with_capacity(n_p + n_l);
    for (pos, role) in protein.into_iter().map(|p| (p, Role::Protein)).chain(ligand.into_iter().map(|p| (p, Role::Ligand))) {
        atoms.push(Atom { pos, element: rng.random_range(0..params.elements), role });
    }
    let clean = planted_affinity(&atoms, &params.label)?;
    let noise = if params.sigma > 0.0 { Normal::new(0.0, params.sigma).map_err(|e| DataError::InvalidParams(e.to_string()))?.sample(&mut rng) } else { 0.0 };
    Ok(SyntheticComplex { complex_id: format!("cx-{seed:016x}"), atoms, label_pk: clean + noise, meta: GenMeta { seed, params: params.clone() } })
}

/// `count` complexes with per-complex seeds derived from `seed`, named by
/// position (`cx0000000`, `cx0000001`, ...).
pub fn generate_dataset(count: usize, seed: u64, params: &GenParams) -> Result<Vec<SyntheticComplex>, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..count).map(|_| rng.random()).collect();
    seeds
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut c = generate_complex(s, params)?;
            c.complex_id = format!("cx{i:07}");
            Ok(c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_complex() {
        let p = GenParams::default();
        assert_eq!(generate_complex(42, &p).unwrap(), generate_complex(42, &p).unwrap());
        assert_ne!(generate_complex(42, &p).unwrap().atoms, generate_complex(43, &p).unwrap().atoms);
    }

    #[test]
    fn invariants_hold() {
        let p = GenParams::default();
        for seed in 0..200 {
            let c = generate_complex(seed, &p).unwrap();
            assert!(c.role_count(Role::Protein) >= 20 && c.role_count(Role::Protein) <= 60);
            assert!(c.role_count(Role::Ligand) >= 5 && c.role_count(Role::Ligand) <= 20);
            for a in &c.atoms {
                assert!(a.pos.iter().all(|&x| (0.0..16.0).contains(&x)));
                assert!(a.element < 4);
            }
            assert!(c.label_pk.is_finite());
        }
    }

    #[test]
    fn two_atom_geometry_noise_free() {
        let lp = LabelParams::default();
        let atoms = [Atom { pos: [5.0, 5.0, 5.0], element: 0, role: Role::Protein }, Atom { pos: [8.0, 5.0, 5.0], element: 1, role: Role::Ligand }];
        // one contact at 3 Å, mean nearest distance 3 Å
        let expected = lp.intercept + lp.a * 1.0 - lp.b * 3.0;
        assert_eq!(planted_affinity(&atoms, &lp).unwrap(), expected);
        let far = [atoms[0], Atom { pos: [10.0, 5.0, 5.0], ..atoms[1] }];
        assert_eq!(planted_affinity(&far, &lp).unwrap(), lp.intercept - lp.b * 5.0);
    }

    #[test]
    fn degenerate_parameters_rejected() {
        let mut p = GenParams { box_size: 0.0, ..GenParams::default() };
        assert!(generate_complex(1, &p).is_err());
        p = GenParams { protein_atoms: (0, 0), ..GenParams::default() };
        assert!(generate_complex(1, &p).is_err());
        p = GenParams { ligand_atoms: (0, 3), ..GenParams::default() };
        assert!(generate_complex(1, &p).is_err());
    }
}
