//! Exact Euclidean distance transform (separable lower-envelope method).

use crate::grid::{Grid2, Mask2};

const INF: f64 = 1e20;

/// Squared distance transform of a 1-D sampled function.
fn dt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let intersect = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = intersect(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Distance from every set pixel to the nearest unset pixel centre, in
/// pixels. Everything outside the grid counts as unset. Unset pixels map to 0.
pub fn distance_to_background(mask: &Mask2) -> Grid2<f64> {
    let (rows, cols) = mask.shape();
    // one pixel of background padding on every side
    let (pr, pc) = (rows + 2, cols + 2);
    let mut g = vec![0.0f64; pr * pc];
    for ((r, c), &v) in mask.indexed() {
        if v {
            g[(r + 1) * pc + c + 1] = INF;
        }
    }
    let n = pr.max(pc);
    let (mut f, mut out) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    for c in 0..pc {
        for r in 0..pr {
            f[r] = g[r * pc + c];
        }
        dt_1d(&f[..pr], &mut out[..pr], &mut v, &mut z);
        for r in 0..pr {
            g[r * pc + c] = out[r];
        }
    }
    for r in 0..pr {
        let row = &mut g[r * pc..(r + 1) * pc];
        f[..pc].copy_from_slice(row);
        dt_1d(&f[..pc], &mut out[..pc], &mut v, &mut z);
        row.copy_from_slice(&out[..pc]);
    }
    Grid2::from_fn(rows, cols, |r, c| g[(r + 1) * pc + c + 1].sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::disk;
    use proptest::prelude::*;

    fn brute(mask: &Mask2) -> Grid2<f64> {
        let (rows, cols) = mask.shape();
        let mut bg = Vec::new();
        for r in -1..=rows as isize {
            for c in -1..=cols as isize {
                if !matches!(mask.get_signed(r, c), Some(&true)) {
                    bg.push((r, c));
                }
            }
        }
        Grid2::from_fn(rows, cols, |r, c| {
            if !*mask.get(r, c) {
                return 0.0;
            }
            bg.iter()
                .map(|&(br, bc)| {
                    let (dr, dc) = ((r as isize - br) as f64, (c as isize - bc) as f64);
                    (dr * dr + dc * dc).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
    }

    #[test]
    fn disk_matches_brute_force() {
        let m = disk(25, 31, (12.0, 14.3), 9.5);
        let a = distance_to_background(&m);
        let b = brute(&m);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    proptest! {
        #[test]
        fn random_masks_match_brute_force(bits in proptest::collection::vec(any::<bool>(), 12 * 9)) {
            let m = Grid2::from_vec(12, 9, bits).unwrap();
            let a = distance_to_background(&m);
            let b = brute(&m);
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
