use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p: f64,
    pub means: Vec<f64>,
    /// Unbiased (n − 1) sample variances.
    pub variances: Vec<f64>,
}

impl AnovaResult {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p < alpha
    }
}

/// One-way ANOVA across `groups`.
///
/// `F = MS_between / MS_within` with `df = (k − 1, N − k)` and `p` the upper
/// tail of the F distribution. When both sums of squares vanish the groups
/// are indistinguishable and `F = 0, p = 1`; zero within-group variance with
/// distinct means gives `F = ∞, p = 0`.
pub fn one_way_anova<G: AsRef<[f64]>>(groups: &[G]) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "ANOVA needs at least 2 groups, got {}",
            groups.len()
        )));
    }
    let mut means = Vec::with_capacity(groups.len());
    let mut variances = Vec::with_capacity(groups.len());
    let mut total_n = 0usize;
    let mut total_sum = 0.0;
    for (i, g) in groups.iter().enumerate() {
        let g = g.as_ref();
        if g.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "group {i} has {} samples, need at least 2",
                g.len()
            )));
        }
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        let ss = g.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
        means.push(mean);
        variances.push(ss / (g.len() - 1) as f64);
        total_n += g.len();
        total_sum += g.iter().sum::<f64>();
    }
    let grand = total_sum / total_n as f64;
    let k = groups.len();
    let ss_between: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.as_ref().len() as f64 * (m - grand) * (m - grand))
        .sum();
    let ss_within: f64 = groups
        .iter()
        .zip(&variances)
        .map(|(g, v)| v * (g.as_ref().len() - 1) as f64)
        .sum();
    let (df_b, df_w) = (k - 1, total_n - k);
    let ms_b = ss_between / df_b as f64;
    let ms_w = ss_within / df_w as f64;

    // Relative guard: sums of squares that are pure rounding noise count as 0.
    let scale = groups
        .iter()
        .flat_map(|g| g.as_ref().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    let negligible = |ss: f64| ss <= scale * 1e-24;
    let (f, p) = if negligible(ss_within) {
        if negligible(ss_between) {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else {
        let f = ms_b / ms_w;
        let dist = FisherSnedecor::new(df_b as f64, df_w as f64)
            .map_err(|e| Error::InsufficientData(e.to_string()))?;
        (f, dist.sf(f).clamp(0.0, 1.0))
    };
    Ok(AnovaResult {
        f,
        df_between: df_b,
        df_within: df_w,
        p,
        means,
        variances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_three_groups() {
        let r = one_way_anova(&[vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0], vec![3.0, 4.0, 5.0]]).unwrap();
        assert!((r.f - 3.0).abs() < 1e-12);
        assert_eq!((r.df_between, r.df_within), (2, 6));
        // F(2, d2) has the closed-form tail (1 + 2F/d2)^(-d2/2)
        let exact = (1.0f64 + 2.0 * 3.0 / 6.0).powf(-3.0);
        assert!((r.p - exact).abs() < 1e-6, "{} vs {exact}", r.p);
        assert_eq!(r.means, vec![2.0, 3.0, 4.0]);
        assert_eq!(r.variances, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn identical_constant_groups() {
        let r = one_way_anova(&[vec![5.0; 3], vec![5.0; 3]]).unwrap();
        assert_eq!((r.f, r.p), (0.0, 1.0));
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            one_way_anova(&[vec![1.0, 2.0], vec![3.0]]),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(one_way_anova(&[vec![1.0, 2.0]]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn two_groups_match_pooled_t_squared() {
        let a = [3.1, 4.7, 5.0, 2.2, 6.3];
        let b = [7.9, 6.1, 8.8, 7.2];
        let r = one_way_anova(&[&a[..], &b[..]]).unwrap();
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let var = |x: &[f64]| {
            let m = mean(x);
            x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
        };
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let sp2 = ((na - 1.0) * var(&a) + (nb - 1.0) * var(&b)) / (na + nb - 2.0);
        let t = (mean(&a) - mean(&b)) / (sp2 * (1.0 / na + 1.0 / nb)).sqrt();
        assert!((r.f - t * t).abs() < 1e-9 * r.f);
    }

    proptest! {
        #[test]
        fn invariant_under_shift_and_scale(
            g1 in proptest::collection::vec(-50.0f64..50.0, 3..12),
            g2 in proptest::collection::vec(-50.0f64..50.0, 3..12),
            g3 in proptest::collection::vec(-50.0f64..50.0, 3..12),
            shift in -1000.0f64..1000.0,
            scale in 0.1f64..10.0,
        ) {
            let base = one_way_anova(&[g1.clone(), g2.clone(), g3.clone()]).unwrap();
            prop_assume!(base.f.is_finite() && base.f > 1e-6);
            let t = |g: &Vec<f64>| g.iter().map(|x| x * scale + shift).collect::<Vec<_>>();
            let moved = one_way_anova(&[t(&g1), t(&g2), t(&g3)]).unwrap();
            prop_assert!((moved.f - base.f).abs() <= 1e-6 * base.f.max(1.0));
            prop_assert!((moved.p - base.p).abs() <= 1e-6);
            prop_assert!(moved.p > 0.0 && moved.p <= 1.0);
        }
    }
}
