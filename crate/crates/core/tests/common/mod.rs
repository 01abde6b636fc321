//! Shared builders for randomized oracle tests.

#![allow(dead_code)]

use armsynth::geom::Point3;
use armsynth::model::{ActuatorSpec, Configuration, Design, LinkSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn actuator() -> ActuatorSpec {
    ActuatorSpec {
        mass: 0.34,
        body_radius: 0.035,
        body_height: 0.055,
        d: 0.08,
        tau_max: 8.0,
        omega_max: None,
    }
}

pub fn link() -> LinkSpec {
    LinkSpec { density: 2700.0, rad_inner: 0.0143, rad_outer: 0.0159, delta: 0.032 }
}

/// Random design with `n` modules drawn from `rng`.
pub fn random_design(rng: &mut ChaCha8Rng, n: usize) -> Design {
    let mut r: Vec<f64> = (0..n).map(|_| rng.random_range(0.08..0.4)).collect();
    r.sort_by(f64::total_cmp);
    Design {
        origin: Point3::new(
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.1..0.1),
        ),
        n_dof: n,
        alpha: (0..n).map(|_| rng.random_range(0.0..2.0 * std::f64::consts::PI)).collect(),
        r,
        actuator: actuator(),
        link: link(),
    }
}

pub fn random_configuration(rng: &mut ChaCha8Rng, n: usize) -> Configuration {
    Configuration::new(
        (0..n).map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)).collect(),
    )
}
