//! Differential-privacy primitives: Gaussian calibration and noise,
//! per-node feature sensitivity, gradient clipping and perturbation,
//! budget composition, and the iteration accountant.

mod audit;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use audit::{empirical_privacy_audit, AuditBin, AuditConfig, AuditReport};

/// Euclidean norm, summed in index order.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Splits `total` into `(fraction * total, rest)` so the two parts add back
/// to `total` exactly in floating point.
pub fn split_budget(total: f64, fraction: f64) -> Result<(f64, f64)> {
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Privacy(format!("total budget must be positive and finite, got {total}")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Privacy(format!("budget fraction must lie in (0,1), got {fraction}")));
    }
    let mut f = total * fraction;
    for _ in 0..64 {
        let mut s = total - f;
        for _ in 0..4 {
            let sum = f + s;
            if sum == total {
                return Ok((f, s));
            }
            s = if sum > total { s.next_down() } else { s.next_up() };
        }
        f = f.next_down();
    }
    Err(Error::Numeric(format!("cannot split {total} at {fraction} exactly")))
}

/// Sequential composition: running an `(eps_f, delta)` and an `(eps_s, delta)`
/// mechanism on the same data is `(eps_f + eps_s, delta)`-DP.
pub fn compose(epsilon_f: f64, epsilon_s: f64, delta: f64) -> (f64, f64) {
    (epsilon_f + epsilon_s, delta)
}

/// Every knob of the two mechanisms plus the accountant constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    pub epsilon: f64,
    pub epsilon_f: f64,
    pub epsilon_s: f64,
    pub delta: f64,
    /// Scale applied to the feature noise.
    pub lambda: f64,
    /// Per-example gradient norm bound `C`.
    pub clip_bound: f64,
    /// Gradient noise multiplier `sigma`.
    pub noise_multiplier: f64,
    pub c2: f64,
    pub sampling_probability: f64,
    /// Iteration budget `T` (optimizer steps).
    pub iterations: u64,
    /// Permit the classical Gaussian calibration outside `eps < 1`.
    pub allow_large_epsilon: bool,
}

impl PrivacySpec {
    pub const DEFAULT_DELTA: f64 = 1e-5;
    pub const DEFAULT_LAMBDA: f64 = 0.01;
    pub const DEFAULT_C2: f64 = 1.0;

    pub fn new(epsilon_f: f64, epsilon_s: f64, delta: f64) -> Result<Self> {
        let (epsilon, delta) = compose(epsilon_f, epsilon_s, delta);
        let spec = Self {
            epsilon,
            epsilon_f,
            epsilon_s,
            delta,
            lambda: Self::DEFAULT_LAMBDA,
            clip_bound: 1.0,
            noise_multiplier: 0.0,
            c2: Self::DEFAULT_C2,
            sampling_probability: 1.0,
            iterations: 0,
            allow_large_epsilon: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Equal-or-fractional split of a global budget.
    pub fn from_total(epsilon: f64, feature_fraction: f64, delta: f64) -> Result<Self> {
        let (f, s) = split_budget(epsilon, feature_fraction)?;
        let mut spec = Self::new(f, s, delta)?;
        spec.epsilon = epsilon;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_f > 0.0) || !(self.epsilon_s > 0.0) {
            return Err(Error::Privacy(format!(
                "budgets must be positive (eps_f = {}, eps_s = {})",
                self.epsilon_f, self.epsilon_s
            )));
        }
        if self.epsilon_f + self.epsilon_s != self.epsilon {
            return Err(Error::Privacy(format!(
                "budget not conserved: {} + {} != {}",
                self.epsilon_f, self.epsilon_s, self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Privacy(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        if !(self.clip_bound > 0.0) {
            return Err(Error::Privacy(format!("clip bound must be positive, got {}", self.clip_bound)));
        }
        if !(self.noise_multiplier >= 0.0) {
            return Err(Error::Privacy(format!(
                "noise multiplier must be nonnegative, got {}",
                self.noise_multiplier
            )));
        }
        if !(self.sampling_probability > 0.0 && self.sampling_probability <= 1.0) {
            return Err(Error::Privacy(format!(
                "sampling probability must lie in (0,1], got {}",
                self.sampling_probability
            )));
        }
        if !(self.lambda >= 0.0) || !(self.c2 > 0.0) {
            return Err(Error::Privacy("lambda must be >= 0 and c2 > 0".into()));
        }
        Ok(())
    }

    /// Feature noise multiplier `sigma_{eps_f}` (Gaussian calibration at unit sensitivity).
    pub fn feature_sigma(&self) -> Result<f64> {
        gaussian_sigma_with(self.epsilon_f, self.delta, 1.0, self.allow_large_epsilon)
    }
}

/// `sqrt(2 ln(1.25/delta)) * sensitivity / epsilon`, valid for `epsilon` in (0,1).
pub fn gaussian_sigma(epsilon: f64, delta: f64, sensitivity: f64) -> Result<f64> {
    gaussian_sigma_with(epsilon, delta, sensitivity, false)
}

/// As [`gaussian_sigma`]; `allow_large_epsilon` keeps the same formula for
/// `epsilon >= 1` where the classical guarantee no longer holds, and logs a warning.
pub fn gaussian_sigma_with(epsilon: f64, delta: f64, sensitivity: f64, allow_large_epsilon: bool) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Privacy(format!("delta must lie in (0,1), got {delta}")));
    }
    if !(sensitivity >= 0.0) || !sensitivity.is_finite() {
        return Err(Error::Privacy(format!("sensitivity must be finite and >= 0, got {sensitivity}")));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Privacy(format!("epsilon must be positive and finite, got {epsilon}")));
    }
    if epsilon >= 1.0 {
        if !allow_large_epsilon {
            return Err(Error::Privacy(format!(
                "epsilon = {epsilon} is outside (0,1), where the classical Gaussian calibration holds; \
                 set allow_large_epsilon to use it anyway"
            )));
        }
        log::warn!("Gaussian calibration used at epsilon = {epsilon} >= 1; the (epsilon, delta) guarantee is not established there");
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt() * sensitivity / epsilon)
}

/// Adds i.i.d. `N(0, (sensitivity * sigma)^2)` noise to each coordinate.
pub fn gaussian_mechanism<R: Rng>(value: &[f64], sensitivity: f64, sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !(sensitivity >= 0.0) {
        return Err(Error::Argument(format!(
            "sigma and sensitivity must be >= 0 (got {sigma}, {sensitivity})"
        )));
    }
    if value.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite input to the Gaussian mechanism".into()));
    }
    let std = sensitivity * sigma;
    if std == 0.0 {
        return Ok(value.to_vec());
    }
    Ok(value
        .iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(rng);
            x + std * z
        })
        .collect())
}

/// How the per-meta-path products `beta_m * alpha_u^m` reduce to one sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityReduce {
    #[default]
    Sum,
    Max,
}

/// Per-node feature sensitivity `C_f * reduce_m(beta_m * alpha[u][m])`.
pub fn feature_sensitivity(alpha: &[Vec<f64>], beta: &[f64], clip_bound: f64, reduce: SensitivityReduce) -> Result<Vec<f64>> {
    if !(clip_bound > 0.0) {
        return Err(Error::Argument(format!("embedding bound must be positive, got {clip_bound}")));
    }
    let total: f64 = beta.iter().sum();
    if beta.is_empty() || beta.iter().any(|b| !(*b >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("beta {beta:?} is not a point of the simplex")));
    }
    alpha
        .iter()
        .enumerate()
        .map(|(u, a)| {
            if a.len() != beta.len() {
                return Err(Error::Argument(format!(
                    "node {u}: {} alpha values for {} meta-paths",
                    a.len(),
                    beta.len()
                )));
            }
            if a.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::Argument(format!("node {u}: alpha outside [0,1]")));
            }
            let terms = a.iter().zip(beta).map(|(x, b)| x * b);
            let r = match reduce {
                SensitivityReduce::Sum => terms.sum::<f64>(),
                SensitivityReduce::Max => terms.fold(0.0, f64::max),
            };
            Ok(clip_bound * r.min(1.0))
        })
        .collect()
}

/// Scales `g` in place to norm `min(|g|, bound)`; returns the factor applied.
/// The resulting norm never exceeds `bound`.
pub fn clip_in_place(g: &mut [f64], bound: f64) -> f64 {
    let norm = l2_norm(g);
    if !(norm > bound) {
        return 1.0;
    }
    let original: Vec<f64> = g.to_vec();
    let mut factor = bound / norm;
    loop {
        for (x, o) in g.iter_mut().zip(&original) {
            *x = o * factor;
        }
        if l2_norm(g) <= bound {
            return factor;
        }
        factor = factor.next_down();
    }
}

/// `g / max(1, |g| / bound)`.
pub fn clip_gradient(g: &[f64], bound: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, bound);
    out
}

/// Running sum of clipped per-example gradients for one batch.
#[derive(Debug, Clone)]
pub struct ClippedSum {
    sum: Vec<f64>,
    count: usize,
    bound: f64,
}

impl ClippedSum {
    pub fn new(dim: usize, bound: f64) -> Self {
        Self {
            sum: vec![0.0; dim],
            count: 0,
            bound,
        }
    }

    /// Clips `g` in place and adds it; returns its norm before clipping.
    pub fn add(&mut self, g: &mut [f64]) -> Result<f64> {
        if g.len() != self.sum.len() {
            return Err(Error::Shape(format!("gradient of length {} into sum of {}", g.len(), self.sum.len())));
        }
        let raw = l2_norm(g);
        if self.bound.is_finite() {
            clip_in_place(g, self.bound);
        }
        let norm = l2_norm(g);
        if !norm.is_finite() {
            return Err(Error::Numeric("non-finite per-example gradient".into()));
        }
        assert!(norm <= self.bound, "post-clip norm {norm} exceeds bound {}", self.bound);
        for (s, x) in self.sum.iter_mut().zip(g.iter()) {
            *s += x;
        }
        self.count += 1;
        Ok(raw)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `(sum + N(0, (sigma * C)^2 I)) / count`.
    pub fn finish<R: Rng>(mut self, sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(Error::Argument("empty batch".into()));
        }
        let std = sigma * self.bound;
        if sigma > 0.0 {
            if !std.is_finite() {
                return Err(Error::Argument("gradient noise needs a finite clip bound".into()));
            }
            for s in &mut self.sum {
                let z: f64 = StandardNormal.sample(rng);
                *s += std * z;
            }
        }
        let n = self.count as f64;
        for s in &mut self.sum {
            *s /= n;
        }
        Ok(self.sum)
    }
}

/// `(1/|B|) * (sum_i clip(g_i, C) + N(0, sigma^2 C^2 I))`.
pub fn perturb_gradients<R: Rng>(per_example: &[Vec<f64>], clip_bound: f64, sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    let first = per_example.first().ok_or_else(|| Error::Argument("empty batch".into()))?;
    let mut acc = ClippedSum::new(first.len(), clip_bound);
    for g in per_example {
        let mut g = g.clone();
        acc.add(&mut g)?;
    }
    acc.finish(sigma, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountantVerdict {
    pub feasible: bool,
    /// Largest `T` satisfying the inequality; `u64::MAX` when unbounded.
    pub max_iterations: u64,
}

fn accountant_holds(spec: &PrivacySpec, t: u64) -> bool {
    spec.noise_multiplier * spec.epsilon_s >= spec.c2 * spec.sampling_probability * (t as f64 * (1.0 / spec.delta).ln()).sqrt()
}

/// Checks `sigma * eps_s >= c2 * P * sqrt(T * ln(1/delta))` and finds the largest feasible `T`.
pub fn accountant_feasible(spec: &PrivacySpec) -> Result<AccountantVerdict> {
    if !(spec.delta > 0.0 && spec.delta < 1.0) {
        return Err(Error::Argument(format!("delta must lie in (0,1), got {}", spec.delta)));
    }
    let ratio = spec.noise_multiplier * spec.epsilon_s / (spec.c2 * spec.sampling_probability);
    let estimate = ratio * ratio / (1.0 / spec.delta).ln();
    let max_iterations = if !estimate.is_finite() || estimate >= 9.0e15 {
        u64::MAX
    } else {
        let mut t = estimate.floor() as u64;
        while t > 0 && !accountant_holds(spec, t) {
            t -= 1;
        }
        while accountant_holds(spec, t + 1) {
            t += 1;
        }
        t
    };
    Ok(AccountantVerdict {
        feasible: spec.iterations <= max_iterations,
        max_iterations,
    })
}

/// Smallest noise multiplier the accountant accepts for `iterations` steps.
pub fn calibrate_noise_multiplier(epsilon_s: f64, delta: f64, c2: f64, sampling_probability: f64, iterations: u64) -> f64 {
    let mut sigma = c2 * sampling_probability * (iterations as f64 * (1.0 / delta).ln()).sqrt() / epsilon_s;
    let holds = |s: f64| s * epsilon_s >= c2 * sampling_probability * (iterations as f64 * (1.0 / delta).ln()).sqrt();
    while !holds(sigma) {
        sigma = sigma.next_up();
    }
    sigma
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub noise_multiplier: f64,
    pub sampling_probability: f64,
    pub steps: u64,
}

/// Iterations consumed so far, run-length encoded by `(sigma, P)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccountantLedger {
    pub iterations: u64,
    pub entries: Vec<LedgerEntry>,
    pub within_budget: bool,
}

impl AccountantLedger {
    pub fn new() -> Self {
        Self {
            iterations: 0,
            entries: Vec::new(),
            within_budget: true,
        }
    }

    /// Charges one step; fails once the accountant bound would be passed.
    pub fn charge(&mut self, spec: &PrivacySpec) -> Result<()> {
        let mut probe = spec.clone();
        probe.iterations = self.iterations + 1;
        let verdict = accountant_feasible(&probe)?;
        if !verdict.feasible {
            self.within_budget = false;
            return Err(Error::BudgetExceeded(format!(
                "step {} exceeds the accountant bound of {} iterations (sigma = {}, eps_s = {}, P = {})",
                self.iterations + 1,
                verdict.max_iterations,
                spec.noise_multiplier,
                spec.epsilon_s,
                spec.sampling_probability
            )));
        }
        self.iterations += 1;
        match self.entries.last_mut() {
            Some(e) if e.noise_multiplier == spec.noise_multiplier && e.sampling_probability == spec.sampling_probability => {
                e.steps += 1
            }
            _ => self.entries.push(LedgerEntry {
                noise_multiplier: spec.noise_multiplier,
                sampling_probability: spec.sampling_probability,
                steps: 1,
            }),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use proptest::prelude::*;

    #[test]
    fn sigma_closed_form() {
        // sqrt(2 ln 125000) / 0.5 = 9.6896105...
        let s = gaussian_sigma(0.5, 1e-5, 1.0).unwrap();
        assert!((s - 9.689_610_525).abs() < 1e-8, "{s}");
        assert_eq!(gaussian_sigma(0.5, 1e-5, 0.0).unwrap(), 0.0);
        assert_eq!(gaussian_sigma(0.3, 1e-5, 2.0).unwrap(), 2.0 * gaussian_sigma(0.3, 1e-5, 1.0).unwrap());
    }

    #[test]
    fn sigma_rejects_large_epsilon_without_opt_in() {
        assert!(matches!(gaussian_sigma(1.0, 1e-5, 1.0), Err(Error::Privacy(_))));
        assert!(gaussian_sigma_with(1.0, 1e-5, 1.0, true).is_ok());
        assert!(gaussian_sigma(0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn mechanism_identity_and_determinism() {
        let v = vec![1.0, -2.0, 3.5];
        let mut rng = SeedTree::new(1).stream("t", 0);
        assert_eq!(gaussian_mechanism(&v, 1.0, 0.0, &mut rng).unwrap(), v);
        let a = gaussian_mechanism(&v, 1.0, 2.0, &mut SeedTree::new(4).stream("t", 0)).unwrap();
        let b = gaussian_mechanism(&v, 1.0, 2.0, &mut SeedTree::new(4).stream("t", 0)).unwrap();
        assert_eq!(a, b);
        assert!(gaussian_mechanism(&[f64::NAN], 1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn sensitivity_examples() {
        let d = feature_sensitivity(&[vec![1.0]], &[1.0], 1.0, SensitivityReduce::Sum).unwrap();
        assert_eq!(d, vec![1.0]);
        let d = feature_sensitivity(&[vec![0.5, 0.5]], &[0.2, 0.8], 2.0, SensitivityReduce::Sum).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12);
        let d = feature_sensitivity(&[vec![1e-12, 1e-12]], &[0.5, 0.5], 1.0, SensitivityReduce::Sum).unwrap();
        assert!(d[0] < 1e-11);
        let d = feature_sensitivity(&[vec![0.5, 0.9]], &[0.5, 0.5], 1.0, SensitivityReduce::Max).unwrap();
        assert!((d[0] - 0.45).abs() < 1e-12);
        assert!(feature_sensitivity(&[vec![0.5]], &[0.7], 1.0, SensitivityReduce::Sum).is_err());
    }

    #[test]
    fn clipping_examples() {
        let g = vec![0.3, 0.4];
        assert_eq!(clip_gradient(&g, 1.0), g);
        let g = vec![0.0, 4.0];
        assert_eq!(clip_gradient(&g, 2.0), vec![0.0, 2.0]);
    }

    #[test]
    fn perturbation_without_noise_is_the_clipped_mean() {
        let batch = vec![vec![0.1, 0.2], vec![0.3, -0.1]];
        let mut rng = SeedTree::new(0).stream("t", 0);
        let g = perturb_gradients(&batch, 1.0, 0.0, &mut rng).unwrap();
        assert_eq!(g, vec![(0.1 + 0.3) / 2.0, (0.2 + -0.1) / 2.0]);
        let g = perturb_gradients(&[vec![2.0, 0.0]], 1.0, 0.0, &mut rng).unwrap();
        assert_eq!(g, vec![1.0, 0.0]);
        assert!(perturb_gradients(&[], 1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn perturbation_moments_monte_carlo() {
        let batch = vec![vec![3.0, 4.0, 0.0], vec![0.2, -0.1, 0.3], vec![0.0, 0.0, -2.5], vec![-0.4, 0.5, 0.1]];
        let (c, sigma, reps) = (1.0, 1.5, 100_000);
        // Hand-clipped: (3,4,0)/5 and (0,0,-1); the other two are inside the ball.
        let clipped_mean = [(0.6 + 0.2 - 0.4) / 4.0, (0.8 - 0.1 + 0.5) / 4.0, (0.3 - 1.0 + 0.1) / 4.0];
        let sd = sigma * c / batch.len() as f64;
        let mut rng = SeedTree::new(4).stream("t", 0);
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..reps {
            let g = perturb_gradients(&batch, c, sigma, &mut rng).unwrap();
            for j in 0..3 {
                sum[j] += g[j];
                sq[j] += g[j] * g[j];
            }
        }
        let n = reps as f64;
        for j in 0..3 {
            let mean = sum[j] / n;
            let std = ((sq[j] - n * mean * mean) / (n - 1.0)).sqrt();
            assert!((mean - clipped_mean[j]).abs() <= 4.0 * sd / n.sqrt(), "coord {j}: mean {mean}");
            assert!((std / sd - 1.0).abs() <= 0.01, "coord {j}: std {std} vs {sd}");
        }
    }

    #[test]
    fn accountant_example_and_boundary() {
        let mut spec = PrivacySpec::new(0.15, 0.85, 1e-5).unwrap();
        spec.noise_multiplier = 4.0;
        spec.sampling_probability = 0.01;
        let v = accountant_feasible(&spec).unwrap();
        // (4 * 0.85 / 0.01)^2 / ln(1e5) = 115600 / 11.512925... = 10040.9...
        assert_eq!(v.max_iterations, 10040);
        spec.iterations = v.max_iterations;
        assert!(accountant_feasible(&spec).unwrap().feasible);
        spec.iterations += 1;
        assert!(!accountant_feasible(&spec).unwrap().feasible);
        spec.iterations = 0;
        spec.noise_multiplier = 0.0;
        assert!(accountant_feasible(&spec).unwrap().feasible);
        spec.noise_multiplier = 4.0;
        spec.sampling_probability = 1e-300;
        spec.iterations = 1 << 40;
        assert!(accountant_feasible(&spec).unwrap().feasible);
    }

    #[test]
    fn ledger_aborts_past_the_bound() {
        let mut spec = PrivacySpec::new(0.5, 0.5, 1e-5).unwrap();
        spec.sampling_probability = 1.0;
        spec.noise_multiplier = calibrate_noise_multiplier(0.5, 1e-5, 1.0, 1.0, 3);
        let mut ledger = AccountantLedger::new();
        for _ in 0..3 {
            ledger.charge(&spec).unwrap();
        }
        assert_eq!(ledger.entries.len(), 1);
        assert!(matches!(ledger.charge(&spec), Err(Error::BudgetExceeded(_))));
        assert!(!ledger.within_budget);
    }

    #[test]
    fn compose_examples() {
        assert_eq!(compose(0.3, 0.7, 1e-5), (1.0, 1e-5));
        assert_eq!(compose(0.4, 1e-300, 1e-5).0, 0.4);
    }

    #[test]
    fn budget_split_conserves() {
        for &(t, f) in &[(0.1, 0.3), (0.01, 0.25), (1.0, 0.9), (0.7, 0.1)] {
            let (a, b) = split_budget(t, f).unwrap();
            assert_eq!(a + b, t);
            let spec = PrivacySpec::from_total(t, f, 1e-5).unwrap();
            assert_eq!(spec.epsilon_f + spec.epsilon_s, spec.epsilon);
        }
        assert!(PrivacySpec::new(0.0, 0.5, 1e-5).is_err());
        let mut bad = PrivacySpec::new(0.5, 0.5, 1e-5).unwrap();
        bad.epsilon = 1.1;
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn split_always_conserves(t in 1e-6f64..100.0, f in 0.001f64..0.999) {
            let (a, b) = split_budget(t, f).unwrap();
            prop_assert_eq!(a + b, t);
            prop_assert!((a - t * f).abs() <= 1e-12 * t);
        }

        #[test]
        fn clipped_norm_never_exceeds_bound(v in proptest::collection::vec(-1e3f64..1e3, 1..64), c in 1e-3f64..10.0) {
            let out = clip_gradient(&v, c);
            prop_assert!(l2_norm(&out) <= c);
        }

        #[test]
        fn compose_commutes_and_associates(a in 1e-4f64..5.0, b in 1e-4f64..5.0, c in 1e-4f64..5.0) {
            prop_assert_eq!(compose(a, b, 1e-5), compose(b, a, 1e-5));
            let left = compose(compose(a, b, 1e-5).0, c, 1e-5).0;
            let right = compose(a, compose(b, c, 1e-5).0, 1e-5).0;
            prop_assert!((left - right).abs() <= 1e-12 * left);
        }

        #[test]
        fn sigma_monotone(e1 in 0.01f64..0.99, e2 in 0.01f64..0.99, d in 1e-9f64..0.5, s in 0.1f64..5.0) {
            prop_assume!(e1 < e2);
            prop_assert!(gaussian_sigma(e1, d, s).unwrap() > gaussian_sigma(e2, d, s).unwrap());
            prop_assert!(gaussian_sigma(e1, d, 2.0 * s).unwrap() > gaussian_sigma(e1, d, s).unwrap());
            prop_assert!(gaussian_sigma(e1, d / 10.0, s).unwrap() > gaussian_sigma(e1, d, s).unwrap());
        }
    }
}
