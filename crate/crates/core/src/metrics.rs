//! Image and label quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{contract, domain, Result};
use crate::image::{LabelMap, Map, Mask, RgbImage};

pub const PSNR_CAP: f64 = 100.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

pub fn mse(img: &RgbImage, reference: &RgbImage) -> Result<f64> {
    img.check_shape(reference, "image")?;
    let sum: f64 = img
        .data
        .iter()
        .zip(&reference.data)
        .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / (3 * img.len()) as f64)
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr(img: &RgbImage, reference: &RgbImage) -> Result<f64> {
    let m = mse(img, reference)?;
    Ok(if m == 0.0 { PSNR_CAP } else { (-10.0 * m.log10()).min(PSNR_CAP) })
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable gaussian filter over the valid region.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity over 11×11 gaussian windows (σ = 1.5) that
/// fit inside the image, averaged over channels.
pub fn ssim(img: &RgbImage, reference: &RgbImage) -> Result<f64> {
    img.check_shape(reference, "image")?;
    let (w, h) = (img.width, img.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(domain(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}")));
    }
    let k = gaussian_kernel();
    let mut total = 0.0;
    for c in 0..3 {
        let a: Vec<f64> = img.data.iter().map(|p| p[c]).collect();
        let b: Vec<f64> = reference.data.iter().map(|p| p[c]).collect();
        let prod = |f: &dyn Fn(usize) -> f64| (0..a.len()).map(f).collect::<Vec<f64>>();
        let (mu_a, ..) = filter_valid(&a, w, h, &k);
        let (mu_b, ..) = filter_valid(&b, w, h, &k);
        let (aa, ..) = filter_valid(&prod(&|i| a[i] * a[i]), w, h, &k);
        let (bb, ..) = filter_valid(&prod(&|i| b[i] * b[i]), w, h, &k);
        let (ab, ..) = filter_valid(&prod(&|i| a[i] * b[i]), w, h, &k);
        let n = mu_a.len();
        let mut sum = 0.0;
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += sum / n as f64;
    }
    Ok(total / 3.0)
}

/// Fraction of pixels (inside `mask`, if given) whose label matches.
pub fn semantic_accuracy(labels: &LabelMap, gt: &LabelMap, mask: Option<&Mask>) -> Result<f64> {
    labels.check_shape(gt, "labels")?;
    if let Some(m) = mask {
        m.check_shape(gt, "mask")?;
    }
    let (mut hit, mut n) = (0usize, 0usize);
    for i in 0..labels.len() {
        if mask.is_none_or(|m| m.data[i]) {
            n += 1;
            hit += usize::from(labels.data[i] == gt.data[i]);
        }
    }
    if n == 0 {
        return Err(domain("accuracy over an empty mask"));
    }
    Ok(hit as f64 / n as f64)
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    /// `P(correct | valid)`, NaN when nothing is valid (null in JSON).
    #[serde(with = "nan_as_null")]
    pub precision: f64,
    /// `P(valid | correct)`.
    pub recall: f64,
    /// Label accuracy over every pixel.
    pub overall_accuracy: f64,
    pub valid_pixels: usize,
    pub correct_pixels: usize,
}

pub fn validity_report(validity: &Mask, rendered: &LabelMap, gt: &LabelMap) -> Result<ValidityReport> {
    rendered.check_shape(gt, "labels")?;
    validity.check_shape(gt, "validity")?;
    let (mut valid, mut correct, mut both) = (0usize, 0usize, 0usize);
    for i in 0..gt.len() {
        let ok = rendered.data[i] == gt.data[i];
        valid += usize::from(validity.data[i]);
        correct += usize::from(ok);
        both += usize::from(ok && validity.data[i]);
    }
    let ratio = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    Ok(ValidityReport {
        precision: ratio(both, valid),
        recall: if correct == 0 { 0.0 } else { both as f64 / correct as f64 },
        overall_accuracy: correct as f64 / gt.len() as f64,
        valid_pixels: valid,
        correct_pixels: correct,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub sem_accuracy: f64,
}

/// Per-view metrics on held-out poses with their means and PSNR median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub psnr: f64,
    pub median_psnr: f64,
    pub ssim: f64,
    pub sem_accuracy: f64,
    pub views: Vec<ViewMetrics>,
    /// Training-view PSNR, when measured.
    pub source_psnr: Option<f64>,
    /// Pooled validity statistics over the novel set, when present.
    pub validity: Option<ValidityReport>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl EvalReport {
    pub fn from_views(name: impl Into<String>, views: Vec<ViewMetrics>) -> Result<Self> {
        if views.is_empty() {
            return Err(contract("report needs at least one view"));
        }
        let n = views.len() as f64;
        let psnrs: Vec<f64> = views.iter().map(|v| v.psnr).collect();
        Ok(Self {
            name: name.into(),
            psnr: psnrs.iter().sum::<f64>() / n,
            median_psnr: median(&psnrs),
            ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
            sem_accuracy: views.iter().map(|v| v.sem_accuracy).sum::<f64>() / n,
            views,
            source_psnr: None,
            validity: None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let mut s = format!("{}\n  view    PSNR    SSIM   sem-acc\n", self.name);
        for v in &self.views {
            s += &format!("  {:>4}  {:>6.2}  {:>6.4}  {:>7.4}\n", v.view, v.psnr, v.ssim, v.sem_accuracy);
        }
        s += &format!("  mean  {:>6.2}  {:>6.4}  {:>7.4}   (median PSNR {:.2})\n", self.psnr, self.ssim, self.sem_accuracy, self.median_psnr);
        if let Some(p) = self.source_psnr {
            s += &format!("  source-view PSNR {p:.2}\n");
        }
        if let Some(v) = &self.validity {
            s += &format!(
                "  validity: precision {:.4} recall {:.4} overall {:.4} ({} valid px)\n",
                v.precision, v.recall, v.overall_accuracy, v.valid_pixels
            );
        }
        s
    }
}

/// Per-pixel squared-error map, handy for debugging renders.
pub fn error_map(img: &RgbImage, reference: &RgbImage) -> Result<Map<f64>> {
    img.check_shape(reference, "image")?;
    let data = img.data.iter().zip(&reference.data).map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum()).collect();
    Map::from_vec(img.width, img.height, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Map::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    /// Direct per-window evaluation with centered moments.
    fn reference_ssim(a: &RgbImage, b: &RgbImage) -> f64 {
        let g: Vec<Vec<f64>> = (0..11)
            .map(|i| (0..11).map(|j| (-(((i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2)) / 4.5)).exp()).collect())
            .collect();
        let z: f64 = g.iter().flatten().sum();
        let (w, h) = (a.width, a.height);
        let mut acc = 0.0;
        let mut count = 0;
        for c in 0..3 {
            for y0 in 0..=h - 11 {
                for x0 in 0..=w - 11 {
                    let at = |img: &RgbImage, i: usize, j: usize| img.data[(y0 + i) * w + x0 + j][c];
                    let (mut ma, mut mb) = (0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            ma += g[i][j] / z * at(a, i, j);
                            mb += g[i][j] / z * at(b, i, j);
                        }
                    }
                    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let wgt = g[i][j] / z;
                            va += wgt * (at(a, i, j) - ma).powi(2);
                            vb += wgt * (at(b, i, j) - mb).powi(2);
                            cov += wgt * (at(a, i, j) - ma) * (at(b, i, j) - mb);
                        }
                    }
                    let c1 = 1e-4;
                    let c2 = 9e-4;
                    acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
        acc / count as f64
    }

    #[test]
    fn psnr_examples() {
        let a = random_image(1, 8, 8);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let base = Map::filled(4, 4, [0.3; 3]);
        let shifted = Map::filled(4, 4, [0.4; 3]);
        assert!((psnr(&base, &shifted).unwrap() - 20.0).abs() < 1e-9);
        let b = random_image(2, 8, 8);
        let mut s = 0.0;
        for (p, q) in a.data.iter().zip(&b.data) {
            for c in 0..3 {
                s += (p[c] - q[c]) * (p[c] - q[c]);
            }
        }
        let want = 10.0 * (1.0 / (s / 192.0)).log10();
        assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &random_image(3, 4, 4)).is_err());
    }

    #[test]
    fn ssim_examples() {
        let a = random_image(4, 16, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = Map::from_vec(16, 16, a.data.iter().map(|p| p.map(|v| 1.0 - v)).collect()).unwrap();
        assert!(ssim(&a, &inv).unwrap() < 1.0);
        let b = random_image(5, 16, 16);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-9);
        assert!(ssim(&random_image(6, 10, 10), &random_image(7, 10, 10)).is_err());
    }

    #[test]
    fn ssim_matches_reference() {
        for seed in 0..4 {
            let a = random_image(10 + seed, 16, 16);
            // a correlated partner: blend with noise
            let n = random_image(20 + seed, 16, 16);
            let b = Map::from_vec(16, 16, a.data.iter().zip(&n.data).map(|(p, q)| [0, 1, 2].map(|c| 0.7 * p[c] + 0.3 * q[c])).collect()).unwrap();
            assert!((ssim(&a, &b).unwrap() - reference_ssim(&a, &b)).abs() < 1e-6);
        }
    }

    #[test]
    fn accuracy_and_validity() {
        let gt = Map::from_vec(2, 2, vec![0u8, 1, 1, 0]).unwrap();
        assert_eq!(semantic_accuracy(&gt, &gt, None).unwrap(), 1.0);
        let comp = Map::from_vec(2, 2, vec![1u8, 0, 0, 1]).unwrap();
        assert_eq!(semantic_accuracy(&comp, &gt, None).unwrap(), 0.0);
        assert!(semantic_accuracy(&gt, &gt, Some(&Map::filled(2, 2, false))).is_err());

        let all = Map::filled(2, 2, true);
        let r = validity_report(&all, &gt, &gt).unwrap();
        assert_eq!((r.precision, r.recall), (1.0, 1.0));
        let r = validity_report(&Map::filled(2, 2, false), &gt, &gt).unwrap();
        assert!(r.precision.is_nan());
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.valid_pixels, 0);

        let half = Map::from_vec(2, 2, vec![1u8, 1, 1, 1]).unwrap();
        let mask = Map::from_vec(2, 2, vec![false, true, true, false]).unwrap();
        assert_eq!(semantic_accuracy(&half, &gt, Some(&mask)).unwrap(), 1.0);
        assert_eq!(semantic_accuracy(&half, &gt, None).unwrap(), 0.5);
    }

    #[test]
    fn report_summaries() {
        let views = vec![
            ViewMetrics { view: 0, psnr: 20.0, ssim: 0.5, sem_accuracy: 0.9 },
            ViewMetrics { view: 1, psnr: 30.0, ssim: 0.7, sem_accuracy: 0.8 },
            ViewMetrics { view: 2, psnr: 22.0, ssim: 0.6, sem_accuracy: 0.7 },
        ];
        let r = EvalReport::from_views("t", views).unwrap();
        assert_eq!(r.median_psnr, 22.0);
        assert!((r.psnr - 24.0).abs() < 1e-12);
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.table().contains("median PSNR 22.00"));
    }
}
