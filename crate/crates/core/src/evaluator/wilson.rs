use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum WilsonError {
    #[error("wilson interval needs n >= 1")]
    ZeroTrials,
    #[error("k = {k} exceeds n = {n}")]
    KExceedsN { k: u64, n: u64 },
    #[error("confidence must be in (0, 1), got {0}")]
    BadConfidence(f64),
    #[error("rate must be in [0, 1], got {0}")]
    BadRate(f64),
}

/// Inverse of the standard normal CDF (Wichura's AS241, PPND16).
/// Relative error is about 1e-16 over (0, 1).
#[allow(clippy::excessive_precision)]
pub fn inverse_normal_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "inverse_normal_cdf needs p in (0, 1), got {p}");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_812_8e4) * r + 6.726_577_092_700_870_1e4) * r
                + 4.592_195_393_154_987_1e4)
                * r
                + 1.373_169_376_550_946_1e4)
                * r
                + 1.971_590_950_306_551_4e3)
                * r
                + 1.331_416_678_917_843_8e2)
                * r
                + 3.387_132_872_796_366_6)
            / (((((((5.226_495_278_852_854_6e3 * r + 2.872_908_573_572_194_3e4) * r + 3.930_789_580_009_271e4) * r
                + 2.121_379_430_158_659_6e4)
                * r
                + 5.394_196_021_424_751e3)
                * r
                + 6.871_870_074_920_579e2)
                * r
                + 4.231_333_070_160_091e1)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r + 2.417_807_251_774_506e-1) * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_6)
            / (((((((1.050_750_071_644_416_8e-9 * r + 5.475_938_084_995_345e-4) * r + 1.519_866_656_361_645_7e-2)
                * r
                + 1.481_039_764_274_800_8e-1)
                * r
                + 6.897_673_349_851e-1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r + 1.242_660_947_388_078_4e-3) * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_445_9e-7) * r + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_132_6e-4)
                * r
                + 1.487_536_129_085_061_5e-2)
                * r
                + 1.369_298_809_227_358e-1)
                * r
                + 5.998_322_065_558_879e-1)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Two-sided critical value for `confidence`.
pub fn z_for_confidence(confidence: f64) -> Result<f64, WilsonError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(WilsonError::BadConfidence(confidence));
    }
    Ok(inverse_normal_cdf(0.5 + confidence / 2.0))
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson_interval(k: u64, n: u64, confidence: f64) -> Result<(f64, f64), WilsonError> {
    if n == 0 {
        return Err(WilsonError::ZeroTrials);
    }
    if k > n {
        return Err(WilsonError::KExceedsN { k, n });
    }
    wilson_from_rate(k as f64 / n as f64, n, confidence)
}

/// Wilson interval from a rate rather than a count, for published figures
/// that only report the rounded rate.
pub fn wilson_from_rate(p: f64, n: u64, confidence: f64) -> Result<(f64, f64), WilsonError> {
    if n == 0 {
        return Err(WilsonError::ZeroTrials);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(WilsonError::BadRate(p));
    }
    let z = z_for_confidence(confidence)?;
    let n = n as f64;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if p == 0.0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if p == 1.0 { 1.0 } else { (center + half).min(1.0) };
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn pinned_z() {
        let z = z_for_confidence(0.95).unwrap();
        assert!((z - 1.959964).abs() < 5e-7, "{z}");
        assert!((inverse_normal_cdf(0.5)).abs() < 1e-15);
        assert!(z_for_confidence(1.0).is_err());
    }

    #[test]
    fn inverse_normal_matches_reference() {
        let n = Normal::new(0.0, 1.0).unwrap();
        for i in 1..2000 {
            let p = i as f64 / 2000.0;
            assert!((inverse_normal_cdf(p) - n.inverse_cdf(p)).abs() < 1e-8, "p={p}");
        }
        for p in [1e-12, 1e-8, 1e-5, 1.0 - 1e-9] {
            let x = inverse_normal_cdf(p);
            assert!((n.cdf(x) - p).abs() / p.min(1.0 - p) < 1e-7, "p={p}");
        }
    }

    #[test]
    fn boundaries() {
        let (lo, hi) = wilson_interval(0, 10, 0.95).unwrap();
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0);
        assert_eq!(wilson_interval(10, 10, 0.95).unwrap().1, 1.0);
        assert_eq!(wilson_interval(1, 0, 0.95), Err(WilsonError::ZeroTrials));
        assert!(matches!(wilson_interval(5, 4, 0.95), Err(WilsonError::KExceedsN { .. })));
    }

    proptest! {
        #[test]
        fn contains_rate_and_is_symmetric(n in 1u64..2000, frac in 0.0f64..=1.0) {
            let k = ((n as f64) * frac).floor() as u64;
            let (lo, hi) = wilson_interval(k, n, 0.95).unwrap();
            let p = k as f64 / n as f64;
            prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
            let (lo2, hi2) = wilson_interval(n - k, n, 0.95).unwrap();
            prop_assert!((lo - (1.0 - hi2)).abs() < 1e-12 && (hi - (1.0 - lo2)).abs() < 1e-12);
        }

        #[test]
        fn shrinks_with_n(n in 1u64..500, frac in 0.0f64..=1.0) {
            let k = ((n as f64) * frac).floor() as u64;
            let (lo, hi) = wilson_interval(k, n, 0.95).unwrap();
            let (lo4, hi4) = wilson_interval(4 * k, 4 * n, 0.95).unwrap();
            prop_assert!(hi4 - lo4 < hi - lo);
        }
    }
}
