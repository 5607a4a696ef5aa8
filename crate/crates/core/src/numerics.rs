//! Special functions and seeded random variate generation.
//!
//! Every sampler draws from an explicit [`RngHandle`]; there is no global
//! generator, so a chain is a deterministic function of its seed and the
//! order of calls made against its handle.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Seeded generator owned by a single chain.
///
/// Backed by ChaCha20, whose output stream is fixed by the seed and stream id
/// independently of platform and crate version.
#[derive(Debug, Clone)]
pub struct RngHandle {
    seed: u64,
    stream: u64,
    rng: ChaCha20Rng,
}

impl RngHandle {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent stream for the same seed, e.g. one per parallel chain.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform draw on the half-open interval `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform draw on `(0, 1]`, safe to take the logarithm of.
    pub fn uniform_positive(&mut self) -> f64 {
        1.0 - self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

impl RngCore for RngHandle {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Gamma distribution parametrised by shape and rate (mean `shape / rate`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaShapeRate {
    shape: f64,
    rate: f64,
}

impl GammaShapeRate {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
            return domain(format!("gamma requires shape > 0 and rate > 0, got ({shape}, {rate})"));
        }
        Ok(Self { shape, rate })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        ln_gamma_pdf(x, self.shape, self.rate)
    }
}

const STIRLING_CUTOFF: f64 = 10.0;

/// Natural logarithm of the gamma function for `x > 0`.
///
/// Uses the asymptotic Stirling series for `x >= 10` and the recurrence
/// `ln Γ(x) = ln Γ(x + n) - ln(x (x+1) ... (x+n-1))` below that.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return domain(format!("log_gamma requires a finite positive argument, got {x}"));
    }
    Ok(ln_gamma_unchecked(x))
}

pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    if x >= STIRLING_CUTOFF {
        return stirling(x);
    }
    let mut shifted = x;
    let mut product = 1.0;
    while shifted < STIRLING_CUTOFF {
        product *= shifted;
        shifted += 1.0;
    }
    stirling(shifted) - product.ln()
}

fn stirling(x: f64) -> f64 {
    // Bernoulli-number coefficients B_{2j} / (2j (2j-1)).
    const C: [f64; 7] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360_360.0,
        1.0 / 156.0,
    ];
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    for c in C.iter().rev() {
        series = series * inv2 + c;
    }
    (x - 0.5) * x.ln() - x + HALF_LN_2PI + series * inv
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Inverse of the standard normal CDF (Wichura's AS 241, PPND16).
///
/// `p = 0` and `p = 1` map to `-inf` and `+inf`, which is what the partition
/// layer expects at the outermost boundaries.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return domain(format!("normal_quantile requires p in [0, 1], got {p}"));
    }
    if p == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if p == 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(ppnd16(p))
}

fn poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn ppnd16(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let value = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

/// Log density of `N(mean, precision)` at `x`.
pub fn ln_normal_pdf(x: f64, mean: f64, precision: f64) -> f64 {
    let d = x - mean;
    0.5 * (precision.ln() - LN_2PI) - 0.5 * precision * d * d
}

/// Log density of `Ga(shape, rate)` at `x`; `-inf` outside the support.
pub fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma_unchecked(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max == f64::INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn sample_gamma(params: GammaShapeRate, rng: &mut RngHandle) -> f64 {
    // Shape and scale were validated by GammaShapeRate.
    let dist = Gamma::new(params.shape, 1.0 / params.rate).expect("validated gamma parameters");
    dist.sample(rng)
}

/// Logarithm of a `Ga(shape, 1)` draw, stable for very small shapes.
///
/// For `shape < 1` this uses `G(a) = G(a + 1) U^{1/a}` so that the draw
/// never underflows to zero before the logarithm is taken.
pub fn sample_ln_gamma_unit(shape: f64, rng: &mut RngHandle) -> f64 {
    if shape >= 1.0 {
        let dist = Gamma::new(shape, 1.0).expect("positive shape");
        let g: f64 = dist.sample(rng);
        g.ln()
    } else {
        let dist = Gamma::new(shape + 1.0, 1.0).expect("positive shape");
        let g: f64 = dist.sample(rng);
        g.ln() + rng.uniform_positive().ln() / shape
    }
}

pub fn sample_normal(mean: f64, precision: f64, rng: &mut RngHandle) -> Result<f64> {
    if !(precision > 0.0) || !precision.is_finite() {
        return domain(format!("normal precision must be positive, got {precision}"));
    }
    Ok(mean + rng.standard_normal() / precision.sqrt())
}

pub fn sample_dirichlet(alphas: &[f64], rng: &mut RngHandle) -> Result<Vec<f64>> {
    let mut probs = vec![0.0; alphas.len()];
    let mut logs = vec![0.0; alphas.len()];
    sample_dirichlet_into(alphas, rng, &mut probs, &mut logs)?;
    Ok(probs)
}

/// Dirichlet draw written into `probs`, with the log-probabilities in `logs`.
///
/// Normalisation happens in log space, so the log-probabilities stay finite
/// even when a component is far below the smallest positive `f64`.
pub fn sample_dirichlet_into(
    alphas: &[f64],
    rng: &mut RngHandle,
    probs: &mut [f64],
    logs: &mut [f64],
) -> Result<()> {
    if alphas.len() < 2 {
        return domain(format!("dirichlet needs at least two components, got {}", alphas.len()));
    }
    if let Some(bad) = alphas.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
        return domain(format!("dirichlet parameters must be positive, got {bad}"));
    }
    debug_assert_eq!(probs.len(), alphas.len());
    debug_assert_eq!(logs.len(), alphas.len());
    for (slot, &a) in logs.iter_mut().zip(alphas) {
        *slot = sample_ln_gamma_unit(a, rng);
    }
    let norm = log_sum_exp(logs);
    for (p, l) in probs.iter_mut().zip(logs.iter_mut()) {
        *l -= norm;
        *p = l.exp();
    }
    Ok(())
}
