mod common;

use common::{normals, rng};
use proptest::prelude::*;
use stjpda::coupling::CoregionalizationMatrix;
use stjpda::kernels::{gram, KernelFamily, KernelHyperparams};
use stjpda::linalg::{psd_factor, Mat};
use stjpda::training::{nlml, nlml_with_grad, pack, unpack, TargetSamples, TrainingSet};

fn dataset(d: usize, n: usize, seed: u64) -> TrainingSet {
    let k = KernelHyperparams::matern32(1.0, 2.0).unwrap();
    let u: Vec<f64> = (0..n).map(|i| i as f64 * 0.7).collect();
    let f = psd_factor(&gram(&k, &u, &u));
    let mut r = rng(seed);
    TrainingSet {
        targets: (0..d)
            .map(|t| TargetSamples {
                u: u.clone(),
                z: (&f * normals(&mut r, n))
                    .iter()
                    .map(|v| v + t as f64 * 0.1)
                    .collect(),
            })
            .collect(),
        noise_var: 0.05,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradient_matches_finite_differences(
        s2 in 0.3f64..3.0,
        ell in 0.5f64..5.0,
        l21 in -0.8f64..0.8,
        l22 in 0.2f64..1.5,
        rbf in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let family = if rbf { KernelFamily::Rbf } else { KernelFamily::Matern32 };
        let data = dataset(2, 12, seed);
        let l = Mat::from_row_slice(2, 2, &[1.0, 0.0, l21, l22]);
        let theta = pack(&KernelHyperparams::new(family, s2, ell).unwrap(), &l);
        let (f, g) = nlml_with_grad(&theta, family, &data).unwrap();
        let (hp, lb) = unpack(&theta, family, 2);
        prop_assert!((hp.sigma2 - s2).abs() < 1e-12 && (&lb - &l).amax() < 1e-12);
        let b = CoregionalizationMatrix::from_cholesky(&lb).unwrap();
        prop_assert!((nlml(&hp, &b, &data).unwrap() - f).abs() < 1e-9 * f.abs().max(1.0));
        for i in 0..theta.len() {
            let h = 1e-5;
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fd = (nlml_with_grad(&tp, family, &data).unwrap().0 - nlml_with_grad(&tm, family, &data).unwrap().0) / (2.0 * h);
            prop_assert!((g[i] - fd).abs() <= 1e-4 * fd.abs().max(1.0), "component {}: {} vs {}", i, g[i], fd);
        }
    }
}

#[test]
fn ragged_training_data_is_rejected() {
    let mut data = dataset(1, 5, 0);
    data.targets[0].z.pop();
    assert!(data.validate().is_err());
}
