//! Sums of drifting sinusoids with their parameters exposed as covariates.
//!
//! For target channel `i`,
//!
//! ```text
//! y_i(t) = Σ_j A_i^j(t) · sin(ω_i^j(t) · x(t) + φ_i^j(t)) + σ(t) · ε
//! ```
//!
//! with `A ~ U(0,1)`, `ω ~ U(0,π)`, `φ ~ U(0,π)` redrawn at knots every
//! `segment_length` steps and interpolated linearly in between, and
//! `x(t) ∈ [0, 1]` the normalised position, either over the whole series or
//! restarting every `position_period` steps. Covariate rows may lead the
//! target by `covariate_lead` steps, which makes future parameters part of
//! the observable history. With `covariates` off only the targets and the
//! noise channels are emitted.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{SeriesFrame, SplitSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Sinusoid components per target (`J`).
    pub components: usize,
    pub targets: usize,
    pub length: usize,
    /// Noise scale on rows before the test boundary.
    pub sigma_train: f64,
    /// Noise scale on test rows.
    pub sigma_test: f64,
    pub segment_length: usize,
    /// Linear interpolation between knots; piecewise constant when false.
    pub interpolate: bool,
    /// Extra channels of pure `N(0, σ)` noise.
    pub noise_channels: usize,
    /// Adds `N(0, σ)` observation noise to the targets.
    pub noise_on_target: bool,
    /// Emits the `A`, `ω`, `φ` and `x` channels.
    pub covariates: bool,
    pub covariate_lead: usize,
    /// Cycle length of `x`; 0 spans the whole series once.
    pub position_period: usize,
    /// Locates the test boundary where `sigma_test` takes over.
    pub split: SplitSpec,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            components: 5,
            targets: 1,
            length: 4000,
            sigma_train: 0.0,
            sigma_test: 0.0,
            segment_length: 64,
            interpolate: true,
            noise_channels: 0,
            noise_on_target: true,
            covariates: true,
            covariate_lead: 0,
            position_period: 0,
            split: SplitSpec::default(),
            seed: 0,
        }
    }
}

/// `Σ_j a_j sin(w_j x + p_j)`.
pub fn sinusoid_sum(amps: &[f64], freqs: &[f64], phases: &[f64], x: f64) -> f64 {
    amps.iter().zip(freqs).zip(phases).map(|((a, w), p)| a * (w * x + p).sin()).sum()
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 || self.targets == 0 {
            return Err(Error::Config("synthetic data needs J >= 1 and at least one target".into()));
        }
        if self.position_period == 1 {
            return Err(Error::Config("position_period must be 0 or at least 2".into()));
        }
        if self.segment_length < 2 {
            return Err(Error::Config("segment_length must be at least 2".into()));
        }
        if !(self.sigma_train >= 0.0 && self.sigma_test >= 0.0) {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        if self.length < 2 {
            return Err(Error::Config("synthetic length must be at least 2".into()));
        }
        Ok(())
    }

    pub fn channel_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.targets {
            names.push(format!("y{i}"));
            if !self.covariates {
                continue;
            }
            for j in 0..self.components {
                names.push(format!("A{i}_{j}"));
                names.push(format!("w{i}_{j}"));
                names.push(format!("p{i}_{j}"));
            }
        }
        if self.covariates {
            names.push("x".into());
        }
        names.extend((0..self.noise_channels).map(|k| format!("eps{k}")));
        names
    }

    /// Column indices of the target channels `y0, y1, …`.
    pub fn target_indices(&self) -> Vec<usize> {
        let stride = if self.covariates { 1 + 3 * self.components } else { 1 };
        (0..self.targets).map(|i| i * stride).collect()
    }
}

struct Knots {
    /// `[knot][target][component] -> (A, ω, φ)`
    values: Vec<Vec<Vec<[f64; 3]>>>,
    segment: usize,
    interpolate: bool,
}

impl Knots {
    fn at(&self, tau: usize, target: usize, comp: usize) -> [f64; 3] {
        let k = tau / self.segment;
        let a = self.values[k][target][comp];
        if !self.interpolate {
            return a;
        }
        let b = self.values[k + 1][target][comp];
        let f = (tau % self.segment) as f64 / self.segment as f64;
        [0, 1, 2].map(|q| a[q] + (b[q] - a[q]) * f)
    }
}

/// Generates the frame; identical specs give bit-identical output.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SeriesFrame> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let span = spec.length + spec.covariate_lead;
    let n_knots = span / spec.segment_length + 2;
    let values = (0..n_knots)
        .map(|_| {
            (0..spec.targets)
                .map(|_| {
                    (0..spec.components)
                        .map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..PI), rng.random_range(0.0..PI)])
                        .collect()
                })
                .collect()
        })
        .collect();
    let knots = Knots { values, segment: spec.segment_length, interpolate: spec.interpolate };
    let position = |tau: usize| match spec.position_period {
        0 => tau as f64 / (span - 1) as f64,
        p => (tau % p) as f64 / (p - 1) as f64,
    };
    let test_start = spec.split.test_start(spec.length);

    let names = spec.channel_names();
    let mut out = Vec::with_capacity(spec.length * names.len());
    let mut params = vec![[0.0; 3]; spec.components];
    for t in 0..spec.length {
        let sigma = if t < test_start { spec.sigma_train } else { spec.sigma_test };
        let lead = t + spec.covariate_lead;
        for i in 0..spec.targets {
            for (j, p) in params.iter_mut().enumerate() {
                *p = knots.at(t, i, j);
            }
            let amps: Vec<f64> = params.iter().map(|p| p[0]).collect();
            let freqs: Vec<f64> = params.iter().map(|p| p[1]).collect();
            let phases: Vec<f64> = params.iter().map(|p| p[2]).collect();
            let clean = sinusoid_sum(&amps, &freqs, &phases, position(t));
            let eps: f64 = rng.sample(StandardNormal);
            out.push(if spec.noise_on_target { clean + sigma * eps } else { clean });
            if spec.covariates {
                for j in 0..spec.components {
                    out.extend_from_slice(&knots.at(lead, i, j));
                }
            }
        }
        if spec.covariates {
            out.push(position(lead));
        }
        for _ in 0..spec.noise_channels {
            let eps: f64 = rng.sample(StandardNormal);
            out.push(sigma * eps);
        }
    }
    let stamps = (0..spec.length).map(|t| t.to_string()).collect();
    SeriesFrame::new(out, names, Some(stamps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticSpec {
        SyntheticSpec { length: 500, seed: 9, ..Default::default() }
    }

    #[test]
    fn closed_form_value() {
        let y = sinusoid_sum(&[1.0], &[PI / 2.0], &[0.0], 1.0);
        assert!((y - 1.0).abs() < 1e-15);
    }

    #[test]
    fn layout_and_ranges() {
        let s = SyntheticSpec { noise_channels: 2, ..spec() };
        let f = generate_synthetic(&s).unwrap();
        assert_eq!(f.channels(), 1 + 15 + 1 + 2);
        assert_eq!(&f.channel_names()[..4], &["y0", "A0_0", "w0_0", "p0_0"]);
        assert_eq!(f.channel_names()[16], "x");
        assert_eq!(f.value(0, 16), 0.0);
        assert_eq!(f.value(f.len() - 1, 16), 1.0);
        for r in 0..f.len() {
            for j in 0..5 {
                let row = f.row(r);
                assert!((0.0..1.0).contains(&row[1 + 3 * j]));
                assert!((0.0..PI).contains(&row[2 + 3 * j]));
                assert!((0.0..PI).contains(&row[3 + 3 * j]));
            }
        }
    }

    #[test]
    fn deterministic() {
        let s = SyntheticSpec { sigma_train: 0.3, sigma_test: 0.3, noise_channels: 1, ..spec() };
        assert_eq!(generate_synthetic(&s).unwrap().to_csv_bytes(), generate_synthetic(&s).unwrap().to_csv_bytes());
        let other = SyntheticSpec { seed: 10, ..s.clone() };
        assert_ne!(generate_synthetic(&s).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn target_is_function_of_covariates() {
        let s = SyntheticSpec { targets: 2, ..spec() };
        let f = generate_synthetic(&s).unwrap();
        let x = f.channel_index("x").unwrap();
        for (i, &yi) in s.target_indices().iter().enumerate() {
            for r in 0..f.len() {
                let row = f.row(r);
                let p = |q: usize| (0..5).map(|j| row[yi + 1 + 3 * j + q]).collect::<Vec<_>>();
                let y = sinusoid_sum(&p(0), &p(1), &p(2), row[x]);
                assert!((y - row[yi]).abs() < 1e-12, "target {i} row {r}");
            }
        }
    }

    #[test]
    fn lead_shifts_covariates() {
        let base = generate_synthetic(&SyntheticSpec { covariate_lead: 0, length: 520, ..spec() }).unwrap();
        let led = generate_synthetic(&SyntheticSpec { covariate_lead: 20, ..spec() }).unwrap();
        // Same span, so knots and positions coincide.
        for r in 0..400 {
            assert_eq!(led.value(r, 1), base.value(r + 20, 1));
        }
    }

    #[test]
    fn without_covariates_keeps_targets_and_noise() {
        let s = SyntheticSpec { targets: 2, noise_channels: 3, sigma_train: 0.5, ..spec() };
        let full = generate_synthetic(&s).unwrap();
        let bare_spec = SyntheticSpec { covariates: false, ..s.clone() };
        let bare = generate_synthetic(&bare_spec).unwrap();
        assert_eq!(bare.channel_names(), &["y0", "y1", "eps0", "eps1", "eps2"]);
        assert_eq!(bare_spec.target_indices(), vec![0, 1]);
        let noise = full.channels() - 3;
        for r in 0..full.len() {
            for (b, f) in [(0, 0), (1, s.target_indices()[1]), (2, noise), (4, noise + 2)] {
                assert_eq!(bare.value(r, b), full.value(r, f));
            }
        }
    }

    #[test]
    fn periodic_position() {
        let f = generate_synthetic(&SyntheticSpec { position_period: 5, ..spec() }).unwrap();
        let x = f.channel_index("x").unwrap();
        let xs: Vec<f64> = (0..7).map(|r| f.value(r, x)).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.0, 0.25]);
        assert!(SyntheticSpec { position_period: 1, ..spec() }.validate().is_err());
    }

    #[test]
    fn piecewise_constant_without_interpolation() {
        let f = generate_synthetic(&SyntheticSpec { interpolate: false, segment_length: 10, ..spec() }).unwrap();
        assert_eq!(f.value(10, 1), f.value(19, 1));
        assert_ne!(f.value(9, 1), f.value(10, 1));
    }

    #[test]
    fn noise_variance_monte_carlo() {
        let clean = SyntheticSpec { length: 100_000, seed: 4, ..Default::default() };
        let noisy = SyntheticSpec { sigma_train: 0.5, sigma_test: 0.5, ..clean.clone() };
        let a = generate_synthetic(&clean).unwrap().column(0);
        let b = generate_synthetic(&noisy).unwrap().column(0);
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| y - x).collect();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (d.len() - 1) as f64;
        assert!((var / 0.25 - 1.0).abs() < 0.03, "{var}");
    }

    #[test]
    fn sigma_test_only_touches_test_rows() {
        let a = SyntheticSpec { sigma_train: 1.0, sigma_test: 1.0, noise_channels: 1, ..spec() };
        let b = SyntheticSpec { sigma_test: 2.0, ..a.clone() };
        let (fa, fb) = (generate_synthetic(&a).unwrap(), generate_synthetic(&b).unwrap());
        let boundary = a.split.test_start(a.length);
        assert_eq!(fa.row(boundary - 1), fb.row(boundary - 1));
        let eps = fa.channel_index("eps0").unwrap();
        assert!((fb.value(boundary, eps) - 2.0 * fa.value(boundary, eps)).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_synthetic(&SyntheticSpec { components: 0, ..spec() }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { segment_length: 1, ..spec() }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { sigma_train: -1.0, ..spec() }).is_err());
    }
}
