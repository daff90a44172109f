//! Exact Euclidean distance transform (separable lower-envelope method).

use super::image::Image;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Pixel distance to the nearest object pixel; zero inside the mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMap<T: Real> {
    pub values: Image<T>,
}

/// Squared distance transform of a 1D sampled function via the lower
/// envelope of parabolas rooted at each sample.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            let p = v[k];
            if f[p].is_infinite() {
                // first finite sample replaces an infinite root
                v[k] = q;
                z[k + 1] = f64::INFINITY;
                break;
            }
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Exact Euclidean distance transform of the mask complement.
pub fn distance_map<T: Real>(mask: &Image<bool>) -> Result<DistanceMap<T>> {
    if !mask.data().iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    let (w, h) = mask.dims();
    let mut grid: Vec<f64> = mask
        .data()
        .iter()
        .map(|&m| if m { 0.0 } else { f64::INFINITY })
        .collect();
    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    let values = Image::from_vec(w, h, grid.into_iter().map(|d| T::lit(d.sqrt())).collect())?;
    Ok(DistanceMap { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(mask: &Image<bool>) -> Image<f64> {
        let pts: Vec<(usize, usize)> = mask.enumerate().filter(|e| *e.2).map(|e| (e.0, e.1)).collect();
        Image::from_fn(mask.width(), mask.height(), |u, v| {
            pts.iter()
                .map(|&(a, b)| {
                    let du = a as f64 - u as f64;
                    let dv = b as f64 - v as f64;
                    (du * du + dv * dv).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
    }

    #[test]
    fn examples() {
        let all = Image::filled(5, 4, true);
        let d = distance_map::<f64>(&all).unwrap();
        assert!(d.values.data().iter().all(|&x| x == 0.0));

        let single = Image::from_fn(12, 12, |u, v| u == 5 && v == 5);
        let d = distance_map::<f64>(&single).unwrap();
        assert_eq!(*d.values.get(5, 8), 3.0);
        assert_eq!(*d.values.get(8, 9), 5.0);

        assert!(matches!(
            distance_map::<f64>(&Image::filled(3, 3, false)),
            Err(Error::EmptyMask)
        ));
    }

    proptest! {
        #[test]
        fn matches_brute_force(w in 1usize..64, h in 1usize..64, seed in any::<u64>(), density in 0.005f64..0.3) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut mask = Image::from_fn(w, h, |_, _| rng.random::<f64>() < density);
            if !mask.data().iter().any(|&m| m) {
                mask.set(w / 2, h / 2, true);
            }
            let fast = distance_map::<f64>(&mask).unwrap();
            let slow = brute_force(&mask);
            for (a, b) in fast.values.data().iter().zip(slow.data()) {
                prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
            }
        }
    }
}
