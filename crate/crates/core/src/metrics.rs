//! Overlap metrics, summary statistics and paired t-tests.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::image::{check_same_dims, BinaryMask, GrayImage, SoftMask};
use crate::model::{Mode, Network, Real};
use crate::postprocess::{binarize, postprocess, PostprocessConfig};

/// `2|P ∩ T| / (|P| + |T|)`, and 1 when both masks are empty.
pub fn dice(pred: &BinaryMask, target: &BinaryMask) -> Result<f64> {
    check_same_dims(pred.dims(), target.dims())?;
    let (mut inter, mut total) = (0usize, 0usize);
    for (&p, &t) in pred.pixels().iter().zip(target.pixels()) {
        inter += (p & t) as usize;
        total += (p + t) as usize;
    }
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

/// Fraction of agreeing pixels.
pub fn accuracy(pred: &BinaryMask, target: &BinaryMask) -> Result<f64> {
    check_same_dims(pred.dims(), target.dims())?;
    let same = pred.pixels().iter().zip(target.pixels()).filter(|(p, t)| p == t).count();
    Ok(same as f64 / pred.pixels().len() as f64)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    Float::sqrt(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64)
}

/// Five-number summary for box plots; quartiles by linear interpolation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let mut s = xs.to_vec();
        s.sort_by(|a, b| a.total_cmp(b));
        let q = |f: f64| {
            let pos = f * (s.len() - 1) as f64;
            let lo = Float::floor(pos) as usize;
            let hi = (lo + 1).min(s.len() - 1);
            s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
        };
        Some(Self { min: s[0], q1: q(0.25), median: q(0.5), q3: q(0.75), max: s[s.len() - 1] })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

/// Two-sided paired-sample t-test on `a - b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::DegenerateComparison);
    }
    let t = m / Float::sqrt(var / n as f64);
    let df = n - 1;
    Ok(TTest { t, p: student_t_two_sided(t, df as f64), df })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    inc_beta(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// Lanczos approximation (g = 7, 9 terms) of `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = core::f64::consts::PI;
        return Float::ln(pi / Float::sin(pi * x)) - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * Float::ln(2.0 * core::f64::consts::PI) + (x + 0.5) * Float::ln(t) - t + Float::ln(a)
}

/// Regularized incomplete beta `I_x(a, b)` via Lentz's continued fraction.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * Float::ln(x) + b * Float::ln(1.0 - x);
    if x < (a + 1.0) / (a + b + 2.0) {
        Float::exp(ln_front) * beta_cf(a, b, x) / a
    } else {
        1.0 - Float::exp(ln_front) * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if Float::abs(d) < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if Float::abs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if Float::abs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if Float::abs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if Float::abs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if Float::abs(del - 1.0) < 1e-15 {
            break;
        }
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub dice: f64,
    pub accuracy: f64,
    /// Scores of the thresholded prediction before component removal and closing.
    pub raw_dice: f64,
    pub raw_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub config_a: String,
    pub config_b: String,
    pub metric: String,
    pub t_statistic: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_image: Vec<ImageScore>,
    pub dice_mean: f64,
    pub dice_std: f64,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub raw_dice_mean: f64,
    pub raw_acc_mean: f64,
    pub dice_quartiles: Quartiles,
    pub acc_quartiles: Quartiles,
    pub comparisons: Vec<Comparison>,
}

impl EvalReport {
    pub fn from_scores(per_image: Vec<ImageScore>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let dice: Vec<f64> = per_image.iter().map(|s| s.dice).collect();
        let acc: Vec<f64> = per_image.iter().map(|s| s.accuracy).collect();
        let raw_dice: Vec<f64> = per_image.iter().map(|s| s.raw_dice).collect();
        let raw_acc: Vec<f64> = per_image.iter().map(|s| s.raw_accuracy).collect();
        Ok(Self {
            dice_mean: mean(&dice),
            dice_std: std_dev(&dice),
            acc_mean: mean(&acc),
            acc_std: std_dev(&acc),
            raw_dice_mean: mean(&raw_dice),
            raw_acc_mean: mean(&raw_acc),
            dice_quartiles: Quartiles::of(&dice).unwrap(),
            acc_quartiles: Quartiles::of(&acc).unwrap(),
            per_image,
            comparisons: Vec::new(),
        })
    }

    pub fn dice_values(&self) -> Vec<f64> {
        self.per_image.iter().map(|s| s.dice).collect()
    }

    pub fn accuracy_values(&self) -> Vec<f64> {
        self.per_image.iter().map(|s| s.accuracy).collect()
    }
}

/// Scores `predict` on every item after postprocessing.
pub fn evaluate_with<F>(mut predict: F, ds: &Dataset, post: &PostprocessConfig) -> Result<EvalReport>
where
    F: FnMut(&GrayImage) -> Result<SoftMask>,
{
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    post.validate()?;
    let scores = ds
        .items()
        .iter()
        .map(|s| {
            let soft = predict(&s.image)?;
            let raw = binarize(&soft, post.threshold);
            let clean = postprocess(&soft, post);
            Ok(ImageScore {
                id: s.id.clone(),
                dice: dice(&clean, &s.mask)?,
                accuracy: accuracy(&clean, &s.mask)?,
                raw_dice: dice(&raw, &s.mask)?,
                raw_accuracy: accuracy(&raw, &s.mask)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_scores(scores)
}

/// Eval-mode forward (latent code at the posterior mean) plus postprocessing.
pub fn evaluate<T: Real>(net: &Network<T>, ds: &Dataset, post: &PostprocessConfig) -> Result<EvalReport> {
    // Eval mode draws no noise; the generator is never consulted.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    evaluate_with(|x| Ok(net.forward(x, Mode::Eval, &mut rng)?.soft_mask), ds, post)
}

/// Paired comparison of two reports over the same ids, in order.
pub fn compare(a: &EvalReport, b: &EvalReport, name_a: &str, name_b: &str, metric: &str) -> Result<Comparison> {
    let pick = |r: &EvalReport| match metric {
        "accuracy" => r.accuracy_values(),
        _ => r.dice_values(),
    };
    let test = paired_ttest(&pick(a), &pick(b))?;
    Ok(Comparison {
        config_a: name_a.into(),
        config_b: name_b.into(),
        metric: metric.into(),
        t_statistic: test.t,
        p_value: test.p,
    })
}
