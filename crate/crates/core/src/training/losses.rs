use log::debug;
use ndarray::Array2;

use crate::error::{contract, domain, Result};

/// `(1/n) Σ ‖c − c_gt‖²` and its gradient with respect to each color.
pub fn recon_loss(colors: &[[f64; 3]], targets: &[[f64; 3]]) -> Result<(f64, Vec<[f64; 3]>)> {
    if colors.is_empty() {
        return Err(domain("reconstruction loss over an empty batch"));
    }
    if colors.len() != targets.len() {
        return Err(contract("color and target counts differ"));
    }
    let n = colors.len() as f64;
    let mut loss = 0.0;
    let grads = colors
        .iter()
        .zip(targets)
        .map(|(c, t)| {
            let d = [c[0] - t[0], c[1] - t[1], c[2] - t[2]];
            loss += d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            d.map(|v| 2.0 * v / n)
        })
        .collect();
    Ok((loss / n, grads))
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `Σ w(r) CE(softmax(G(r)), S(r)) / denominator` with its gradient on the
/// logits (`n x C`).
pub fn semantic_loss(logits: &Array2<f64>, targets: &[u8], weights: &[f64], denominator: usize) -> Result<(f64, Array2<f64>)> {
    let (n, classes) = logits.dim();
    if targets.len() != n || weights.len() != n {
        return Err(contract("logit, target, and weight counts differ"));
    }
    if denominator == 0 {
        return Err(domain("semantic loss needs a positive ray count"));
    }
    let denom = denominator as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros((n, classes));
    for (i, row) in logits.rows().into_iter().enumerate() {
        let t = targets[i] as usize;
        if t >= classes {
            return Err(domain(format!("class {t} out of range for {classes} classes")));
        }
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let row = row.as_slice().expect("standard layout");
        let lse = log_sum_exp(row);
        loss += w * (lse - row[t]);
        for c in 0..classes {
            let p = (row[c] - lse).exp();
            grad[(i, c)] = w * (p - if c == t { 1.0 } else { 0.0 }) / denom;
        }
    }
    Ok((loss / denom, grad))
}

/// Scale and shift aligning one patch of rendered depth to its target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub scale: f64,
    pub shift: f64,
    /// Rendered depth was constant; the scale was pinned to 1.
    pub shift_only: bool,
}

/// Least-squares `argmin_{w,q} Σ (w D + q − D̄)²`.
pub fn align_depth(depth: &[f64], target: &[f64]) -> Result<Alignment> {
    if depth.len() < 2 {
        return Err(domain("depth patches need at least two pixels"));
    }
    if depth.len() != target.len() {
        return Err(contract("patch depth and target sizes differ"));
    }
    let n = depth.len() as f64;
    let md = depth.iter().sum::<f64>() / n;
    let mt = target.iter().sum::<f64>() / n;
    let (mut sdd, mut sdt) = (0.0, 0.0);
    for (d, t) in depth.iter().zip(target) {
        sdd += (d - md) * (d - md);
        sdt += (d - md) * (t - mt);
    }
    let spread = depth.iter().map(|d| d.abs()).fold(0.0, f64::max).max(1.0);
    if sdd <= 1e-24 * n * spread * spread {
        debug!("constant rendered depth patch, shift-only alignment");
        return Ok(Alignment { scale: 1.0, shift: mt - md, shift_only: true });
    }
    let scale = sdt / sdd;
    Ok(Alignment { scale, shift: mt - scale * md, shift_only: false })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonoLoss {
    pub loss: f64,
    /// Gradient with respect to each rendered depth of the patch.
    pub grad: Vec<f64>,
    pub alignment: Alignment,
}

/// Mean squared residual after the optimal affine alignment.
///
/// The alignment is a stationary point of the inner objective, so the total
/// derivative through `(w, q)` reduces to the partial at fixed `(w, q)`:
/// `∂L/∂D_k = (2/n) w r_k`.
pub fn mono_depth_loss(depth: &[f64], target: &[f64]) -> Result<MonoLoss> {
    let alignment = align_depth(depth, target)?;
    let n = depth.len() as f64;
    let mut loss = 0.0;
    let grad = depth
        .iter()
        .zip(target)
        .map(|(d, t)| {
            let r = alignment.scale * d + alignment.shift - t;
            loss += r * r;
            2.0 * alignment.scale * r / n
        })
        .collect();
    Ok(MonoLoss { loss: loss / n, grad, alignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Vector2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recon_examples() {
        let (l, g) = recon_loss(&[[0.2, 0.4, 0.6]], &[[0.2, 0.4, 0.6]]).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![[0.0; 3]]);
        let (l, _) = recon_loss(&[[1.0, 0.0, 0.0]], &[[0.0; 3]]).unwrap();
        assert_eq!(l, 1.0);
        let (_, g) = recon_loss(&[[0.5, 0.0, 0.0], [0.0, 1.0, 0.0]], &[[0.0; 3], [0.0; 3]]).unwrap();
        assert_eq!(g, vec![[0.5, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert!(recon_loss(&[], &[]).is_err());
    }

    #[test]
    fn semantic_examples() {
        let mut big = Array2::zeros((1, 4));
        big[(0, 2)] = 1e6;
        let (l, _) = semantic_loss(&big, &[2], &[1.0], 1).unwrap();
        assert!(l.abs() < 1e-12);
        let (l, _) = semantic_loss(&Array2::zeros((3, 5)), &[0, 1, 4], &[1.0; 3], 3).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
        let (l, g) = semantic_loss(&Array2::from_elem((3, 5), 0.7), &[0, 1, 4], &[0.0; 3], 3).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(semantic_loss(&Array2::zeros((1, 3)), &[3], &[1.0], 1).is_err());
    }

    #[test]
    fn semantic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits = Array2::from_shape_simple_fn((4, 3), || rng.random_range(-3.0..3.0));
        let (targets, weights) = ([0u8, 2, 1, 1], [1.0, 0.0, 1.0, 1.0]);
        let (_, g) = semantic_loss(&logits, &targets, &weights, 7).unwrap();
        let eps = 1e-6;
        for i in 0..4 {
            for c in 0..3 {
                let mut up = logits.clone();
                up[(i, c)] += eps;
                let mut dn = logits.clone();
                dn[(i, c)] -= eps;
                let fd = (semantic_loss(&up, &targets, &weights, 7).unwrap().0 - semantic_loss(&dn, &targets, &weights, 7).unwrap().0) / (2.0 * eps);
                assert!((fd - g[(i, c)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn mono_exact_affine_and_constant() {
        let d: Vec<f64> = (0..16).map(|i| 1.0 + 0.3 * i as f64).collect();
        let t: Vec<f64> = d.iter().map(|v| 2.0 * v + 1.0).collect();
        let m = mono_depth_loss(&d, &t).unwrap();
        assert!(m.loss < 1e-20);
        assert!((m.alignment.scale - 2.0).abs() < 1e-12);
        let m = mono_depth_loss(&[3.0; 8], &[5.0; 8]).unwrap();
        assert!(m.alignment.shift_only);
        assert!(m.loss.abs() < 1e-20);
        assert!(mono_depth_loss(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn mono_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let d: Vec<f64> = (0..512).map(|_| rng.random_range(0.5..6.0)).collect();
            let t: Vec<f64> = d.iter().map(|v| 0.4 * v - 0.2 + rng.random_range(-0.3..0.3)).collect();
            // [Σd² Σd; Σd n] [w q]ᵀ = [Σdt Σt]ᵀ
            let sdd: f64 = d.iter().map(|v| v * v).sum();
            let sd: f64 = d.iter().sum();
            let sdt: f64 = d.iter().zip(&t).map(|(a, b)| a * b).sum();
            let st: f64 = t.iter().sum();
            let sol = Matrix2::new(sdd, sd, sd, d.len() as f64).lu().solve(&Vector2::new(sdt, st)).unwrap();
            let m = mono_depth_loss(&d, &t).unwrap();
            assert!((m.alignment.scale - sol[0]).abs() < 1e-10);
            assert!((m.alignment.shift - sol[1]).abs() < 1e-10);
            for (di, ti) in d.iter().zip(&t) {
                let (ours, theirs) = (m.alignment.scale * di + m.alignment.shift - ti, sol[0] * di + sol[1] - ti);
                assert!((ours - theirs).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mono_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d: Vec<f64> = (0..12).map(|_| rng.random_range(1.0..4.0)).collect();
        let t: Vec<f64> = (0..12).map(|_| rng.random_range(1.0..4.0)).collect();
        let m = mono_depth_loss(&d, &t).unwrap();
        let eps = 1e-6;
        for k in 0..12 {
            let mut up = d.clone();
            up[k] += eps;
            let mut dn = d.clone();
            dn[k] -= eps;
            let fd = (mono_depth_loss(&up, &t).unwrap().loss - mono_depth_loss(&dn, &t).unwrap().loss) / (2.0 * eps);
            assert!((fd - m.grad[k]).abs() < 1e-8, "{k}: {fd} vs {}", m.grad[k]);
        }
    }
}
