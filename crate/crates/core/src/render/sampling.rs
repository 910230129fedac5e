//! Stratified sampling along rays and single-ray compositing.

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::volume::composite_ray;

/// Ascending sample positions and their spacings. The last spacing reaches
/// the far bound.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples {
    pub t: Vec<f64>,
    pub deltas: Vec<f64>,
}

/// `n` uniform bins over `[t_near, t_far]`: bin midpoints without `rng`,
/// one uniform draw per bin with it.
pub fn stratified_sample<R: Rng>(t_near: f64, t_far: f64, n: usize, rng: Option<&mut R>) -> Result<RaySamples> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 samples per ray, got {n}")));
    }
    if !(t_far - t_near >= 1e-9) {
        return Err(Error::invalid(format!(
            "degenerate ray bounds [{t_near}, {t_far}]"
        )));
    }
    let bin = (t_far - t_near) / n as f64;
    let t: Vec<f64> = match rng {
        None => (0..n).map(|i| t_near + (i as f64 + 0.5) * bin).collect(),
        Some(rng) => (0..n)
            .map(|i| t_near + (i as f64 + rng.random::<f64>()) * bin)
            .collect(),
    };
    let mut deltas: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    deltas.push(t_far - t[n - 1]);
    Ok(RaySamples { t, deltas })
}

/// Composited color, depth, opacity and weights of one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub color: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub weights: Vec<f64>,
    /// Transmittance past the last sample.
    pub residual: f64,
}

/// Emission-absorption compositing of one ray. `colors` holds one RGB
/// triple per sample. The background fills the residual transmittance;
/// depth has no background term.
pub fn composite(
    colors: &[[f64; 3]],
    sigmas: &[f64],
    deltas: &[f64],
    t: &[f64],
    background: [f64; 3],
) -> Result<RenderOutput> {
    let n = sigmas.len();
    if colors.len() != n || deltas.len() != n || t.len() != n {
        return Err(Error::shape("composite", "per-sample inputs differ in length"));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::invalid(format!("density must be non-negative, got {s}")));
    }
    let flat: Vec<f64> = colors.iter().flatten().copied().collect();
    let r = composite_ray(sigmas, &flat, deltas, t, background);
    Ok(RenderOutput {
        color: r.color,
        depth: r.depth,
        opacity: r.opacity,
        weights: r.weights,
        residual: r.residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type NoRng = ChaCha8Rng;

    #[test]
    fn midpoints_without_jitter() {
        let s = stratified_sample::<NoRng>(0.0, 1.0, 4, None).unwrap();
        assert_eq!(s.t, vec![0.125, 0.375, 0.625, 0.875]);
        assert_eq!(s.deltas, vec![0.25, 0.25, 0.25, 0.125]);
    }

    #[test]
    fn jitter_is_seeded_and_binned() {
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let sa = stratified_sample(1.0, 3.0, 8, Some(&mut a)).unwrap();
        let sb = stratified_sample(1.0, 3.0, 8, Some(&mut b)).unwrap();
        assert_eq!(sa, sb);
        assert!(sa.deltas.iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(stratified_sample::<NoRng>(0.0, 1.0, 1, None).is_err());
        assert!(stratified_sample::<NoRng>(1.0, 1.0, 4, None).is_err());
        assert!(composite(&[[0.0; 3]], &[-1.0], &[1.0], &[0.5], [0.0; 3]).is_err());
    }

    #[test]
    fn empty_space_shows_background() {
        let s = stratified_sample::<NoRng>(0.0, 1.0, 6, None).unwrap();
        let r = composite(&[[0.2; 3]; 6], &[0.0; 6], &s.deltas, &s.t, [0.7, 0.1, 0.3]).unwrap();
        assert_eq!(r.color, [0.7, 0.1, 0.3]);
        assert_eq!((r.depth, r.opacity), (0.0, 0.0));
    }
}
