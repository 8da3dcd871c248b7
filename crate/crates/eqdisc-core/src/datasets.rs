//! Bundled measurement tables and synthetic data generators used by the
//! command-line `gen` subcommand and by the test suites.

use crate::dataset::{Column, Dataset};
use crate::Result;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Planetary bodies of the solar system (nine rows, SI units): mass,
/// diameter, density, surface gravity, escape velocity, rotation period,
/// solar day length, orbital radii, orbital period, orbital speed.
pub fn solar_system() -> Dataset {
    static CSV: &str = include_str!("../../../data/solar_system.csv");
    Dataset::from_csv_bytes(CSV.as_bytes()).expect("bundled table is well-formed")
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Series RLC circuit impedance magnitude on a full factorial grid. Six
/// input columns; `U` and `phi1` do not enter the response. Shape 9604 x 7.
pub fn rlc_grid() -> Dataset {
    let r_axis = linspace(0.25, 1.4, 7);
    let l_axis = linspace(0.4, 1.35, 7);
    let c_axis = linspace(1.45, 2.55, 7);
    let w_axis = linspace(0.875, 1.08, 7);
    let u_axis = [1.0, 2.0];
    let p_axis = [0.3, 0.7];
    let n = r_axis.len() * l_axis.len() * c_axis.len() * w_axis.len() * u_axis.len() * p_axis.len();
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); 7];
    for &r in &r_axis {
        for &l in &l_axis {
            for &c in &c_axis {
                for &u in &u_axis {
                    for &w in &w_axis {
                        for &p1 in &p_axis {
                            let react = w * l - 1.0 / (w * c);
                            cols[0].push(r);
                            cols[1].push(l);
                            cols[2].push(c);
                            cols[3].push(u);
                            cols[4].push(w);
                            cols[5].push(p1);
                            cols[6].push((r * r + react * react).sqrt());
                        }
                    }
                }
            }
        }
    }
    let mut it = cols.into_iter();
    from_triples(vec![
        ("R", "kg*m^2/(s^3*A^2)", it.next().unwrap()),
        ("L", "kg*m^2/(s^2*A^2)", it.next().unwrap()),
        ("C", "s^4*A^2/(kg*m^2)", it.next().unwrap()),
        ("U", "kg*m^2/(s^3*A)", it.next().unwrap()),
        ("omega", "s^-1", it.next().unwrap()),
        ("phi1", "1", it.next().unwrap()),
        ("Z", "kg*m^2/(s^3*A^2)", it.next().unwrap()),
    ])
    .expect("generated table is well-formed")
}

/// Orbital radius and period for twenty circular orbits around the Sun,
/// spanning Mercury's orbit to beyond Pluto's. Periods follow
/// t = 2 pi r^1.5 / sqrt(G M_sun) exactly.
pub fn kepler() -> Dataset {
    const GM_SUN: f64 = 1.327_124_400_18e20;
    let n = 20;
    let (lo, hi) = (5.79e10_f64, 5.906_4e12_f64);
    let radii: Vec<f64> = (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect();
    let periods: Vec<f64> = radii
        .iter()
        .map(|&r| 2.0 * std::f64::consts::PI * r.powf(1.5) / GM_SUN.sqrt())
        .collect();
    from_triples(vec![("r", "m", radii), ("t", "s", periods)])
        .expect("generated table is well-formed")
}

/// Synthetic thermal-transpiration pressure gaps for rarefied-gas channels.
/// Five inputs sampled uniformly at random; the channel length column is
/// inert. The response carries 1% multiplicative Gaussian noise.
pub fn knudsen(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 200;
    let mut draw = |lo: f64, hi: f64| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    };
    let dt = draw(10.0, 100.0);
    let lambda2 = draw(5e-6, 5e-5);
    let h = draw(1e-5, 1e-4);
    let t_c = draw(250.0, 350.0);
    let l = draw(1e-3, 1e-2);
    let dp: Vec<f64> = (0..n)
        .map(|i| {
            let clean =
                4.13e4 * (dt[i] * lambda2[i].powi(3) / (h[i].powi(3) * t_c[i])).sqrt() - 43.8;
            let noise: f64 = StandardNormal.sample(&mut rng);
            clean * (1.0 + 0.01 * noise)
        })
        .collect();
    from_triples(vec![
        ("dT", "K", dt),
        ("lambda2", "m", lambda2),
        ("H", "m", h),
        ("T_c", "K", t_c),
        ("L", "m", l),
        ("dp", "kg/(m*s^2)", dp),
    ])
    .expect("generated table is well-formed")
}

/// Builds a dataset from parallel (name, unit, values) triples.
pub fn from_triples(cols: Vec<(&str, &str, Vec<f64>)>) -> Result<Dataset> {
    let columns = cols
        .into_iter()
        .map(|(name, unit, values)| {
            Ok(Column {
                name: name.to_string(),
                unit: crate::units::parse_unit(unit)?,
                values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_columns(columns)
}
