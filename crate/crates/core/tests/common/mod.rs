#![allow(dead_code)]

use phasegen::numerics::{dot, norm, RngStream};
use phasegen::{random_generator, GeneratorNetwork};

/// Central finite-difference gradient of `f` at `z`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, z: &[f64], h: f64) -> Vec<f64> {
    let mut zp = z.to_vec();
    (0..z.len())
        .map(|i| {
            zp[i] = z[i] + h;
            let up = f(&zp);
            zp[i] = z[i] - h;
            let down = f(&zp);
            zp[i] = z[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let diff: Vec<f64> = got.iter().zip(want).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(want).max(1e-300)
}

/// Smallest |pre-activation| over all hidden ReLU units at `z`.
pub fn kink_margin(g: &GeneratorNetwork, z: &[f64]) -> f64 {
    let cache = g.forward_cached(z).unwrap();
    g.layers()
        .iter()
        .zip(&cache.pre_activations)
        .filter(|(l, _)| l.activation == phasegen::Activation::Relu)
        .flat_map(|(_, pre)| pre.iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min)
}

/// A random net with 1–3 layers and a point at least `margin` from every kink.
pub fn random_net_and_point(rng: &mut RngStream, margin: f64) -> (GeneratorNetwork, Vec<f64>) {
    let k = 2 + rng.below(7);
    let n = 4 + rng.below(29);
    let depth = rng.below(3);
    let hidden: Vec<usize> = (0..depth).map(|_| 3 + rng.below(14)).collect();
    let g = random_generator(k, &hidden, n, rng).unwrap();
    loop {
        let z = rng.normal_vec(k, 1.0);
        if kink_margin(&g, &z) > margin {
            return (g, z);
        }
    }
}

pub fn linear_functional<'a>(g: &'a GeneratorNetwork, c: &[f64]) -> impl Fn(&[f64]) -> f64 + 'a {
    let c = c.to_vec();
    move |z| dot(&c, &g.forward(z).unwrap())
}

/// Gram–Schmidt on a Gaussian `n × k` matrix; returns columns.
pub fn orthonormal_columns(n: usize, k: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    while cols.len() < k {
        let mut v = rng.normal_vec(n, 1.0);
        for _ in 0..2 {
            for c in &cols {
                let p = dot(&v, c);
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
            }
        }
        let nv = norm(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|a| *a /= nv);
            cols.push(v);
        }
    }
    cols
}
