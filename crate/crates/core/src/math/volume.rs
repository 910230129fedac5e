//! Emission-absorption quadrature along one ray, forward and adjoint.

/// Per-ray result of [`composite_ray`].
#[derive(Clone, Debug, PartialEq)]
pub struct RayComposite {
    pub color: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    /// Transmittance left after the last sample.
    pub residual: f64,
    pub weights: Vec<f64>,
}

/// Composites `n` samples. `colors` holds `3 * n` values.
///
/// `T_i = exp(-sum_{j<i} sigma_j delta_j)`, `w_i = T_i (1 - exp(-sigma_i delta_i))`,
/// color `= sum w_i c_i + T_{n+1} * background`, depth `= sum w_i t_i`.
pub fn composite_ray(
    sigmas: &[f64],
    colors: &[f64],
    deltas: &[f64],
    ts: &[f64],
    background: [f64; 3],
) -> RayComposite {
    let n = sigmas.len();
    debug_assert_eq!(colors.len(), 3 * n);
    let mut weights = Vec::with_capacity(n);
    let mut color = [0.0; 3];
    let mut depth = 0.0;
    let mut optical = 0.0_f64;
    for i in 0..n {
        let tau = sigmas[i] * deltas[i];
        let trans = (-optical).exp();
        let w = trans * (-(-tau).exp_m1());
        weights.push(w);
        for c in 0..3 {
            color[c] += w * colors[3 * i + c];
        }
        depth += w * ts[i];
        optical += tau;
    }
    let residual = (-optical).exp();
    for c in 0..3 {
        color[c] += residual * background[c];
    }
    let opacity = -(-optical).exp_m1();
    RayComposite {
        color,
        depth,
        opacity,
        residual,
        weights,
    }
}

/// Adjoint of [`composite_ray`] given upstream gradients for color, depth
/// and opacity. Writes `d sigma` and `d color` (both overwritten).
#[allow(clippy::too_many_arguments)]
pub fn composite_ray_backward(
    sigmas: &[f64],
    colors: &[f64],
    deltas: &[f64],
    ts: &[f64],
    background: [f64; 3],
    g_color: [f64; 3],
    g_depth: f64,
    g_opacity: f64,
    d_sigma: &mut [f64],
    d_color: &mut [f64],
) {
    let n = sigmas.len();
    // Prefix optical depths: optical[i] = sum_{j<i} tau_j.
    let mut optical = Vec::with_capacity(n + 1);
    optical.push(0.0);
    for i in 0..n {
        let prev = optical[i];
        optical.push(prev + sigmas[i] * deltas[i]);
    }
    let residual = (-optical[n]).exp();
    let v_bg = g_color[0] * background[0] + g_color[1] * background[1] + g_color[2] * background[2];

    // suffix = sum_{k>i} w_k v_k, walked from the back.
    let mut suffix = 0.0;
    for i in (0..n).rev() {
        let tau = sigmas[i] * deltas[i];
        let trans = (-optical[i]).exp();
        let w = trans * (-(-tau).exp_m1());
        let c = &colors[3 * i..3 * i + 3];
        let v = g_color[0] * c[0] + g_color[1] * c[1] + g_color[2] * c[2] + g_depth * ts[i] + g_opacity;
        // T_{i+1} = T_i exp(-tau_i)
        let trans_next = (-optical[i + 1]).exp();
        let d_tau = trans_next * v - suffix - residual * v_bg;
        d_sigma[i] = d_tau * deltas[i];
        for k in 0..3 {
            d_color[3 * i + k] = w * g_color[k];
        }
        suffix += w * v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_and_residual_sum_to_one() {
        let sigmas = [0.3, 2.0, 0.0, 5.0];
        let colors = [0.1; 12];
        let deltas = [0.2, 0.1, 0.4, 0.3];
        let ts = [0.1, 0.3, 0.4, 0.8];
        let out = composite_ray(&sigmas, &colors, &deltas, &ts, [0.7; 3]);
        let s: f64 = out.weights.iter().sum();
        assert!((s + out.residual - 1.0).abs() < 1e-15);
        assert!((s - out.opacity).abs() < 1e-15);
    }
}
