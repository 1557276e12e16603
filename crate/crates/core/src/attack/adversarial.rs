use ndarray::Array2;

use super::AttackSettings;
use crate::error::{Error, Result};
use crate::numerics::{check_dims, dot, euclidean_distance, mean, ModelParams};
use crate::training::sigmoid;

const PROB_EPS: f64 = 1e-12;
const BISECTION_TOL: f64 = 1e-9;
const ENCLOSING_ITERS: usize = 2000;

/// Unit vector opposing the consensus step `mean(overheard) − previous_global`;
/// zero when the step is (numerically) zero.
pub fn estimate_ascent_direction(previous_global: &ModelParams, overheard: &[ModelParams]) -> Result<ModelParams> {
    let step = mean(overheard)?.sub(previous_global)?;
    let norm = step.norm();
    if norm < 1e-12 {
        return Ok(ModelParams::zeros(step.dim()));
    }
    Ok(step.scale(-1.0 / norm))
}

/// Decoded edge weights `σ(z_a · z_j)` from the attacker (last row of `z`)
/// to every other node, kept strictly inside `(0, 1)`.
pub fn decode_row(z: &Array2<f64>) -> Vec<f64> {
    let z_a = z.row(z.nrows() - 1).to_vec();
    decode_against(&z_a, z)
}

fn decode_against(z_a: &[f64], z: &Array2<f64>) -> Vec<f64> {
    (0..z.nrows() - 1)
        .map(|j| {
            let zj: Vec<f64> = z.row(j).to_vec();
            sigmoid(dot(z_a, &zj)).clamp(PROB_EPS, 1.0 - PROB_EPS)
        })
        .collect()
}

/// `S(z_a) = Σ_j a_j c_j / Σ_j a_j − c̄`, with `a_j = σ(z_a · z_j)`,
/// `c_j = ω_j · u` and `c̄` the centroid's projection on the ascent `u`.
pub fn surrogate(z_a: &[f64], z: &Array2<f64>, scores: &[f64], centroid_score: f64) -> f64 {
    let a = decode_against(z_a, z);
    let total: f64 = a.iter().sum();
    a.iter().zip(scores).map(|(aj, cj)| aj * cj).sum::<f64>() / total - centroid_score
}

/// `∇S(z_a) = Σ_j (c_j − S̃)/Σa · a_j (1 − a_j) z_j`, `S̃` the weighted mean score.
pub fn surrogate_gradient(z_a: &[f64], z: &Array2<f64>, scores: &[f64]) -> Vec<f64> {
    let a = decode_against(z_a, z);
    let total: f64 = a.iter().sum();
    let weighted = a.iter().zip(scores).map(|(aj, cj)| aj * cj).sum::<f64>() / total;
    let mut g = vec![0.0; z_a.len()];
    for (j, (aj, cj)) in a.iter().zip(scores).enumerate() {
        let coef = (cj - weighted) / total * aj * (1.0 - aj);
        for (gk, zk) in g.iter_mut().zip(z.row(j).iter()) {
            *gk += coef * zk;
        }
    }
    g
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialRow {
    pub row: Vec<f64>,
    pub z_attacker: Vec<f64>,
    /// Surrogate value before the first step and after each step.
    pub surrogate_trace: Vec<f64>,
}

/// Gradient ascent on the attacker's latent code so the decoded mixture of
/// overheard models moves along `ascent`.
///
/// `z` holds one latent row per node, attacker last; `overheard` are the
/// full (unprojected) models behind the first `z.nrows() − 1` nodes.
pub fn adversarial_reconstruct(
    z: &Array2<f64>,
    ascent: &ModelParams,
    overheard: &[ModelParams],
    settings: &AttackSettings,
) -> Result<AdversarialRow> {
    if settings.ascent_steps == 0 {
        return Err(Error::InvalidArgument("ascent_steps must be at least 1".into()));
    }
    if z.nrows() != overheard.len() + 1 {
        return Err(Error::DimensionMismatch {
            left: z.nrows(),
            right: overheard.len() + 1,
        });
    }
    let scores = overheard
        .iter()
        .map(|m| m.dot(ascent))
        .collect::<Result<Vec<f64>>>()?;
    let centroid_score = mean(overheard)?.dot(ascent)?;

    let mut z_a = z.row(z.nrows() - 1).to_vec();
    let mut trace = vec![surrogate(&z_a, z, &scores, centroid_score)];
    for _ in 0..settings.ascent_steps {
        let g = surrogate_gradient(&z_a, z, &scores);
        for (zk, gk) in z_a.iter_mut().zip(&g) {
            *zk += settings.ascent_step_size * gk;
        }
        let s = surrogate(&z_a, z, &scores, centroid_score);
        if !s.is_finite() || z_a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("adversarial ascent state".into()));
        }
        trace.push(s);
    }
    Ok(AdversarialRow {
        row: decode_against(&z_a, z),
        z_attacker: z_a,
        surrogate_trace: trace,
    })
}

pub fn max_distance_to(x: &ModelParams, models: &[ModelParams]) -> Result<f64> {
    models
        .iter()
        .try_fold(0.0f64, |acc, m| Ok(acc.max(euclidean_distance(x, m)?)))
}

/// Approximate minimum-enclosing-ball center (Bădoiu–Clarkson iteration).
pub fn enclosing_center(models: &[ModelParams]) -> Result<ModelParams> {
    let mut c = mean(models)?;
    for i in 1..=ENCLOSING_ITERS {
        let mut far = &models[0];
        let mut best = -1.0;
        for m in models {
            let d = euclidean_distance(&c, m)?;
            if d > best {
                best = d;
                far = m;
            }
        }
        c = c.add_scaled(1.0 / (i as f64 + 1.0), &far.sub(&c)?)?;
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaliciousModel {
    pub params: ModelParams,
    pub gamma_model: f64,
    pub max_distance: f64,
    pub uniform_fallback: bool,
    /// Fraction of the way toward the benign center the mixture was moved,
    /// when the mixture itself violated the radius.
    pub pulled_toward_center: Option<f64>,
}

/// Mixes the overheard models with weights `a_adv / Σ a_adv`, then adds the
/// largest multiple `γ ∈ [0, d_thresh]` of `ascent` that keeps every benign
/// model within `d_thresh`.
pub fn generate_malicious(
    a_adv: &[f64],
    overheard: &[ModelParams],
    ascent: &ModelParams,
    d_thresh: f64,
) -> Result<MaliciousModel> {
    if overheard.is_empty() {
        return Err(Error::Empty("overheard models"));
    }
    if a_adv.len() != overheard.len() {
        return Err(Error::DimensionMismatch {
            left: a_adv.len(),
            right: overheard.len(),
        });
    }
    check_dims(overheard[0].dim(), ascent.dim())?;
    if !(d_thresh.is_finite() && d_thresh > 0.0) {
        return Err(Error::InvalidArgument(format!("d_thresh must be positive, got {d_thresh}")));
    }

    let total: f64 = a_adv.iter().sum();
    let uniform_fallback = !(total.is_finite() && total > 0.0) || a_adv.iter().any(|a| *a < 0.0);
    let weights: Vec<f64> = if uniform_fallback {
        vec![1.0 / overheard.len() as f64; overheard.len()]
    } else {
        a_adv.iter().map(|a| a / total).collect()
    };
    let mut raw = ModelParams::zeros(ascent.dim());
    for (w, m) in weights.iter().zip(overheard) {
        raw = raw.add_scaled(*w, m)?;
    }

    let feasible = |x: &ModelParams| -> Result<bool> { Ok(max_distance_to(x, overheard)? <= d_thresh) };

    if feasible(&raw)? {
        let at = |g: f64| raw.add_scaled(g, ascent);
        let (mut lo, mut hi) = (0.0, d_thresh);
        if feasible(&at(hi)?)? {
            lo = hi;
        } else {
            while hi - lo > BISECTION_TOL {
                let mid = 0.5 * (lo + hi);
                if feasible(&at(mid)?)? {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        let params = at(lo)?;
        let max_distance = max_distance_to(&params, overheard)?;
        return Ok(MaliciousModel {
            params,
            gamma_model: lo,
            max_distance,
            uniform_fallback,
            pulled_toward_center: None,
        });
    }

    let mut anchor = mean(overheard)?;
    if !feasible(&anchor)? {
        let center = enclosing_center(overheard)?;
        let radius = max_distance_to(&center, overheard)?;
        if radius > d_thresh {
            return Err(Error::ThresholdInfeasible { d_thresh, radius });
        }
        anchor = center;
    }
    let toward = anchor.sub(&raw)?;
    let at = |t: f64| raw.add_scaled(t, &toward);
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if feasible(&at(mid)?)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let params = at(hi)?;
    let max_distance = max_distance_to(&params, overheard)?;
    Ok(MaliciousModel {
        params,
        gamma_model: 0.0,
        max_distance,
        uniform_fallback,
        pulled_toward_center: Some(hi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mp(v: &[f64]) -> ModelParams {
        ModelParams::new(v.to_vec()).unwrap()
    }

    #[test]
    fn ascent_examples() {
        let g = mp(&[0.5, 0.5]);
        assert_eq!(estimate_ascent_direction(&g, &[g.clone(), g.clone()]).unwrap(), ModelParams::zeros(2));
        let u = estimate_ascent_direction(&ModelParams::zeros(2), &[mp(&[0.0, 2.0])]).unwrap();
        assert_eq!(u.as_slice(), &[0.0, -1.0]);
    }

    #[test]
    fn zero_ascent_keeps_decoded_row() {
        let z = ndarray::array![[0.3, -0.1], [0.2, 0.4], [-0.5, 0.7]];
        let s = AttackSettings::default();
        let models = [mp(&[1.0, 0.0]), mp(&[0.0, 1.0])];
        let r = adversarial_reconstruct(&z, &ModelParams::zeros(2), &models, &s).unwrap();
        assert_eq!(r.row, decode_row(&z));
        let s0 = AttackSettings {
            ascent_steps: 1,
            ascent_step_size: 0.0,
            ..s
        };
        let r = adversarial_reconstruct(&z, &mp(&[0.6, 0.8]), &models, &s0).unwrap();
        assert_eq!(r.row, decode_row(&z));
        let bad = AttackSettings {
            ascent_steps: 0,
            ..AttackSettings::default()
        };
        assert!(adversarial_reconstruct(&z, &mp(&[0.6, 0.8]), &models, &bad).is_err());
    }

    #[test]
    fn uniform_row_and_zero_ascent_give_centroid() {
        let models = [mp(&[0.0, 0.0]), mp(&[2.0, 0.0]), mp(&[0.0, 2.0])];
        let m = generate_malicious(&[0.5; 3], &models, &ModelParams::zeros(2), 10.0).unwrap();
        let c = mean(&models).unwrap();
        for (a, b) in m.params.as_slice().iter().zip(c.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(m.max_distance <= 2.0f64.sqrt() * 2.0);
    }

    #[test]
    fn single_model_mixture_is_that_model() {
        let m = generate_malicious(&[0.3], &[mp(&[1.0, -1.0])], &ModelParams::zeros(2), 1.0).unwrap();
        assert_eq!(m.params.as_slice(), &[1.0, -1.0]);
    }

    #[test]
    fn zero_row_falls_back_to_uniform() {
        let models = [mp(&[0.0]), mp(&[2.0])];
        let m = generate_malicious(&[0.0, 0.0], &models, &ModelParams::zeros(1), 5.0).unwrap();
        assert!(m.uniform_fallback);
        assert_eq!(m.params.as_slice(), &[1.0]);
    }

    #[test]
    fn push_stops_at_the_radius() {
        let models = [mp(&[0.0, 0.0]), mp(&[1.0, 0.0])];
        let m = generate_malicious(&[1.0, 1.0], &models, &mp(&[0.0, 1.0]), 1.0).unwrap();
        // x = (0.5, γ): max distance sqrt(0.25 + γ²) = 1 -> γ = sqrt(0.75)
        assert!((m.gamma_model - 0.75f64.sqrt()).abs() < 2e-9);
        assert!(m.max_distance <= 1.0);
    }

    #[test]
    fn infeasible_mixture_is_pulled_to_center() {
        let models = [mp(&[0.0]), mp(&[10.0])];
        let m = generate_malicious(&[1.0, 1e-9], &models, &mp(&[1.0]), 6.0).unwrap();
        assert!(m.pulled_toward_center.is_some());
        assert!(m.max_distance <= 6.0);
        assert!(matches!(
            generate_malicious(&[1.0, 1.0], &models, &mp(&[1.0]), 4.0),
            Err(Error::ThresholdInfeasible { .. })
        ));
    }

    #[test]
    fn enclosing_center_of_segment_is_midpoint() {
        let models = [mp(&[0.0, 0.0]), mp(&[4.0, 0.0]), mp(&[1.0, 0.5])];
        let c = enclosing_center(&models).unwrap();
        assert!((max_distance_to(&c, &models).unwrap() - 2.0).abs() < 1e-2);
    }
}
