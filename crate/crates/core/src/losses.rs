//! Reconstruction, appearance-consistency and depth-consistency losses with
//! their gradients with respect to the per-MPI renders.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub appearance: f64,
    pub depth: f64,
    /// Depth consistency on input-view rays.
    pub input_depth: f64,
    /// Epoch at which the consistency terms switch on.
    pub schedule_epoch: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            appearance: 1.0,
            depth: 1.0,
            input_depth: 1.0,
            schedule_epoch: 15,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub mse: f64,
    pub appearance: f64,
    pub depth: f64,
    pub input_depth: f64,
}

/// Weighted total; consistency terms are dropped before `schedule_epoch`.
pub fn total_loss(c: &LossComponents, weights: &LossWeights, epoch: usize) -> f64 {
    if epoch < weights.schedule_epoch {
        return c.mse;
    }
    c.mse + weights.appearance * c.appearance + weights.depth * c.depth + weights.input_depth * c.input_depth
}

fn check_batch<T>(renders: &[Vec<T>], rays: usize) -> Result<()> {
    match renders.iter().position(|r| r.len() != rays) {
        Some(i) => Err(Error::ShapeMismatch(format!(
            "render {i} has {} rays, expected {rays}",
            renders[i].len()
        ))),
        None => Ok(()),
    }
}

fn sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|j| (a[j] - b[j]).powi(2)).sum()
}

pub fn loss_mse(renders: &[Vec<[f64; 3]>], gt: &[[f64; 3]]) -> Result<f64> {
    Ok(loss_mse_grad(renders, gt)?.0)
}

/// `(1/N)(1/|R|) Σ_i Σ_r |C_i(r) - C_gt(r)|²` and its gradient per render.
pub fn loss_mse_grad(renders: &[Vec<[f64; 3]>], gt: &[[f64; 3]]) -> Result<(f64, Vec<Vec<[f64; 3]>>)> {
    if renders.is_empty() || gt.is_empty() {
        return Err(Error::ShapeMismatch("empty render batch".into()));
    }
    check_batch(renders, gt.len())?;
    let scale = 1.0 / (renders.len() * gt.len()) as f64;
    let mut loss = 0.0;
    let grads = renders
        .iter()
        .map(|render| {
            render
                .iter()
                .zip(gt)
                .map(|(c, g)| {
                    loss += sq(c, g);
                    [
                        2.0 * scale * (c[0] - g[0]),
                        2.0 * scale * (c[1] - g[1]),
                        2.0 * scale * (c[2] - g[2]),
                    ]
                })
                .collect()
        })
        .collect();
    Ok((loss * scale, grads))
}

pub fn loss_ac(renders: &[Vec<[f64; 3]>]) -> Result<f64> {
    Ok(loss_ac_grad(renders)?.0)
}

/// `2/(N(N-1)) (1/|R|) Σ_{i<j} Σ_r |C_i(r) - C_j(r)|²` and its gradient.
pub fn loss_ac_grad(renders: &[Vec<[f64; 3]>]) -> Result<(f64, Vec<Vec<[f64; 3]>>)> {
    let n = renders.len();
    if n < 2 {
        return Err(Error::TooFewViews(n));
    }
    let rays = renders[0].len();
    check_batch(renders, rays)?;
    if rays == 0 {
        return Ok((0.0, vec![Vec::new(); n]));
    }
    let scale = 2.0 / (n * (n - 1) * rays) as f64;
    let mut loss = 0.0;
    let mut grads = vec![vec![[0.0; 3]; rays]; n];
    for i in 0..n {
        for j in i + 1..n {
            for r in 0..rays {
                let (a, b) = (renders[i][r], renders[j][r]);
                loss += sq(&a, &b);
                for c in 0..3 {
                    let g = 2.0 * scale * (a[c] - b[c]);
                    grads[i][r][c] += g;
                    grads[j][r][c] -= g;
                }
            }
        }
    }
    Ok((loss * scale, grads))
}

pub fn loss_dc(depths: &[Vec<f64>]) -> Result<f64> {
    Ok(loss_dc_grad(depths, None)?.0)
}

/// Depth analogue of [`loss_ac_grad`]. With `mask`, pairs where either
/// render's ray is flagged `false` contribute nothing (normalization keeps
/// the full `|R|`).
pub fn loss_dc_grad(depths: &[Vec<f64>], mask: Option<&[Vec<bool>]>) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = depths.len();
    if n < 2 {
        return Err(Error::TooFewViews(n));
    }
    let rays = depths[0].len();
    check_batch(depths, rays)?;
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::ShapeMismatch("mask count differs from render count".into()));
        }
        check_batch(m, rays)?;
    }
    if rays == 0 {
        return Ok((0.0, vec![Vec::new(); n]));
    }
    let scale = 2.0 / (n * (n - 1) * rays) as f64;
    let mut loss = 0.0;
    let mut grads = vec![vec![0.0; rays]; n];
    for i in 0..n {
        for j in i + 1..n {
            for r in 0..rays {
                if let Some(m) = mask {
                    if !(m[i][r] && m[j][r]) {
                        continue;
                    }
                }
                let diff = depths[i][r] - depths[j][r];
                loss += diff * diff;
                grads[i][r] += 2.0 * scale * diff;
                grads[j][r] -= 2.0 * scale * diff;
            }
        }
    }
    Ok((loss * scale, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_renders(rng: &mut impl Rng, n: usize, rays: usize) -> Vec<Vec<[f64; 3]>> {
        (0..n)
            .map(|_| (0..rays).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect())
            .collect()
    }

    #[test]
    fn mse_examples() {
        let gt = vec![[0.2, 0.3, 0.4]; 3];
        assert_eq!(loss_mse(&[gt.clone(), gt.clone()], &gt).unwrap(), 0.0);
        assert_eq!(loss_mse(&[vec![[1.0, 0.0, 0.0]]], &[[0.0; 3]]).unwrap(), 1.0);
        assert!(matches!(
            loss_mse(&[vec![[0.0; 3]; 2]], &[[0.0; 3]]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn mse_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let renders = random_renders(&mut rng, 3, 17);
        let gt: Vec<[f64; 3]> = (0..17).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let mut naive = 0.0;
        for r in &renders {
            for (c, g) in r.iter().zip(&gt) {
                for j in 0..3 {
                    naive += (c[j] - g[j]) * (c[j] - g[j]);
                }
            }
        }
        naive /= (3 * 17) as f64;
        assert!((loss_mse(&renders, &gt).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn ac_examples() {
        let same = vec![vec![[0.3, 0.1, 0.9]; 4]; 3];
        assert_eq!(loss_ac(&same).unwrap(), 0.0);
        assert_eq!(loss_ac(&[vec![[1.0, 0.0, 0.0]], vec![[0.0; 3]]]).unwrap(), 1.0);
        assert!(matches!(loss_ac(&same[..1]), Err(Error::TooFewViews(1))));
    }

    #[test]
    fn ac_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let renders = random_renders(&mut rng, 3, 11);
        let mut naive = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if j <= i {
                    continue;
                }
                for r in 0..11 {
                    for c in 0..3 {
                        naive += (renders[i][r][c] - renders[j][r][c]).powi(2);
                    }
                }
            }
        }
        naive *= 2.0 / (3.0 * 2.0) / 11.0;
        assert!((loss_ac(&renders).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn dc_examples() {
        assert_eq!(loss_dc(&[vec![2.0, 3.0], vec![2.0, 3.0]]).unwrap(), 0.0);
        assert_eq!(loss_dc(&[vec![2.0], vec![5.0]]).unwrap(), 9.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let depths: Vec<Vec<f64>> = (0..4).map(|_| (0..9).map(|_| rng.gen_range(1.0..6.0)).collect()).collect();
        let mut naive = 0.0;
        for i in 0..4 {
            for j in i + 1..4 {
                for r in 0..9 {
                    naive += (depths[i][r] - depths[j][r]).powi(2);
                }
            }
        }
        naive *= 2.0 / 12.0 / 9.0;
        assert!((loss_dc(&depths).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn dc_mask_drops_pairs() {
        let depths = vec![vec![1.0, 2.0], vec![4.0, 2.0]];
        let mask = vec![vec![false, true], vec![true, true]];
        let (l, g) = loss_dc_grad(&depths, Some(&mask)).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn total_loss_schedule() {
        let w = LossWeights::default();
        let c = LossComponents {
            mse: 0.5,
            appearance: 0.2,
            depth: 0.3,
            input_depth: 0.0,
        };
        assert_eq!(total_loss(&c, &w, 0), 0.5);
        assert_eq!(total_loss(&c, &w, 15), 1.0);
        let off = LossWeights {
            appearance: 0.0,
            depth: 0.0,
            input_depth: 0.0,
            ..w
        };
        for e in 0..40 {
            assert_eq!(total_loss(&c, &off, e), 0.5);
        }
    }

    #[test]
    fn gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let renders = random_renders(&mut rng, 3, 5);
        let gt: Vec<[f64; 3]> = (0..5).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let (_, gm) = loss_mse_grad(&renders, &gt).unwrap();
        let (_, ga) = loss_ac_grad(&renders).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for r in 0..5 {
                for c in 0..3 {
                    let mut p = renders.clone();
                    p[i][r][c] += h;
                    let mut m = renders.clone();
                    m[i][r][c] -= h;
                    let fd = (loss_mse(&p, &gt).unwrap() - loss_mse(&m, &gt).unwrap()) / (2.0 * h);
                    assert!((fd - gm[i][r][c]).abs() < 1e-8);
                    let fd = (loss_ac(&p).unwrap() - loss_ac(&m).unwrap()) / (2.0 * h);
                    assert!((fd - ga[i][r][c]).abs() < 1e-8);
                }
            }
        }
        let depths: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.gen_range(1.0..5.0)).collect()).collect();
        let (_, gd) = loss_dc_grad(&depths, None).unwrap();
        for i in 0..3 {
            for r in 0..5 {
                let mut p = depths.clone();
                p[i][r] += h;
                let mut m = depths.clone();
                m[i][r] -= h;
                let fd = (loss_dc(&p).unwrap() - loss_dc(&m).unwrap()) / (2.0 * h);
                assert!((fd - gd[i][r]).abs() < 1e-7);
            }
        }
    }

    proptest! {
        #[test]
        fn symmetric_nonnegative_homogeneous(
            seed in 0u64..1000,
            n in 2usize..5,
            rays in 1usize..8,
            s in 0.1f64..10.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let renders = random_renders(&mut rng, n, rays);
            let depths: Vec<Vec<f64>> = (0..n).map(|_| (0..rays).map(|_| rng.gen_range(0.0..8.0)).collect()).collect();
            let gt: Vec<[f64; 3]> = (0..rays).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();

            let ac = loss_ac(&renders).unwrap();
            let dc = loss_dc(&depths).unwrap();
            let mse = loss_mse(&renders, &gt).unwrap();
            prop_assert!(ac >= 0.0 && dc >= 0.0 && mse >= 0.0);

            let mut rev = renders.clone();
            rev.reverse();
            prop_assert!((loss_ac(&rev).unwrap() - ac).abs() < 1e-12);
            let mut drev = depths.clone();
            drev.reverse();
            prop_assert!((loss_dc(&drev).unwrap() - dc).abs() < 1e-12);

            // Ray permutation.
            let rot = |v: &Vec<[f64; 3]>| { let mut v = v.clone(); v.rotate_left(1); v };
            let perm: Vec<_> = renders.iter().map(rot).collect();
            prop_assert!((loss_ac(&perm).unwrap() - ac).abs() < 1e-12);
            prop_assert!((loss_mse(&perm, &rot(&gt)).unwrap() - mse).abs() < 1e-12);

            // Residuals scaled by s about the reference (gt, or render 0).
            let scaled: Vec<Vec<[f64; 3]>> = renders.iter().map(|r| r.iter().zip(&gt).map(|(c, g)| {
                [g[0] + s * (c[0] - g[0]), g[1] + s * (c[1] - g[1]), g[2] + s * (c[2] - g[2])]
            }).collect()).collect();
            prop_assert!((loss_mse(&scaled, &gt).unwrap() - s * s * mse).abs() < 1e-9 * (1.0 + s * s * mse));
            prop_assert!((loss_ac(&scaled).unwrap() - s * s * ac).abs() < 1e-9 * (1.0 + s * s * ac));
            let dscaled: Vec<Vec<f64>> = depths.iter().map(|r| r.iter().map(|z| s * z).collect()).collect();
            prop_assert!((loss_dc(&dscaled).unwrap() - s * s * dc).abs() < 1e-9 * (1.0 + s * s * dc));
        }
    }
}
