//! Central finite-difference checks of analytic gradients.
//!
//! ReLU, max pooling and L1 norms make the loss piecewise smooth. A central
//! difference whose stencil `[x - h, x + h]` straddles a piece boundary is not
//! a valid oracle, so such coordinates are detected exactly (the activation
//! pattern changes) and replaced by fresh draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

/// One checked coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Coordinates whose stencil stayed on one smooth piece.
    pub samples: Vec<GradSample>,
    /// Draws rejected because the stencil crossed a kink.
    pub kinks: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.samples.iter().map(|s| s.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradSample> {
        self.samples.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Settings for [`check_gradients`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Coordinates to check.
    pub samples: usize,
    /// Finite-difference step.
    pub h: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    pub seed: u64,
    /// Give up after this many draws in total.
    pub max_draws: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            h: 1e-4,
            floor: 1e-8,
            seed: 0,
            max_draws: 1000,
        }
    }
}

/// Compares backward-pass gradients of `loss` with central differences at
/// seeded coordinates spread round-robin over every parameter tensor.
/// `loss` builds the scalar on a fresh graph over the store it is given.
pub fn check_gradients<F>(params: &ParamStore, cfg: &GradCheckConfig, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<(f64, u64)> {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        Ok((g.value(l).item()?, g.activation_pattern()))
    };
    let (grads, pattern) = {
        let mut g = Graph::new(params);
        let l = loss(&mut g)?;
        (g.backward(l)?, g.activation_pattern())
    };
    let ids: Vec<(ParamId, usize)> = params.iter().map(|(id, p)| (id, p.tensor.len())).collect();
    if ids.is_empty() {
        return Err(Error::invalid("no parameters to check"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = params.clone();
    let mut samples = Vec::with_capacity(cfg.samples);
    let mut kinks = 0;
    let mut draws = 0;
    while samples.len() < cfg.samples {
        if draws == cfg.max_draws {
            return Err(Error::degenerate(format!(
                "only {} smooth coordinates in {draws} draws",
                samples.len()
            )));
        }
        let (id, len) = ids[draws % ids.len()];
        draws += 1;
        let i = rng.random_range(0..len);
        let base = work.value(id).data()[i];
        work.get_mut(id).tensor.data_mut()[i] = base + cfg.h;
        let (up, p_up) = eval(&work)?;
        work.get_mut(id).tensor.data_mut()[i] = base - cfg.h;
        let (down, p_down) = eval(&work)?;
        work.get_mut(id).tensor.data_mut()[i] = base;
        if p_up != pattern || p_down != pattern {
            kinks += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * cfg.h);
        if !numeric.is_finite() {
            return Err(Error::Numeric("finite difference is not finite".into()));
        }
        let analytic = grads.get(id).map_or(0.0, |t| t.data()[i]);
        samples.push(GradSample {
            param: params.get(id).name.clone(),
            index: i,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric, cfg.floor),
        });
    }
    Ok(GradCheckReport { samples, kinks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn quadratic_matches() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![0.5, -1.5, 2.0])).unwrap();
        let cfg = GradCheckConfig {
            samples: 6,
            h: 1e-5,
            ..GradCheckConfig::default()
        };
        let rep = check_gradients(&store, &cfg, |g| {
            let p = g.param(w);
            let sq = g.mul(p, p)?;
            g.sum(sq)
        })
        .unwrap();
        assert_eq!(rep.samples.len(), 6);
        assert_eq!(rep.kinks, 0);
        assert!(rep.max_rel_error() < 1e-8);
    }

    #[test]
    fn kink_is_detected_and_skipped() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![0.0, 1.0])).unwrap();
        let cfg = GradCheckConfig {
            samples: 20,
            ..GradCheckConfig::default()
        };
        let rep = check_gradients(&store, &cfg, |g| {
            let p = g.param(w);
            let r = g.relu(p)?;
            g.sum(r)
        })
        .unwrap();
        assert!(rep.kinks > 0);
        assert!(rep.samples.iter().all(|s| s.index == 1 && s.rel_error < 1e-10));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-8), 0.0);
        assert!((relative_error(1.0, 1.1, 1e-8) - 0.1 / 1.1).abs() < 1e-15);
    }
}
