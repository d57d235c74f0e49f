use crate::model::PhasePoint;

/// Exact r-th Taylor coefficient in the drift for σ = 1, d = 1:
/// `φ (b σ_h)^r He_r(a)/r!` with `h = (t, t²/2)`.
pub fn drift_taylor_term(b: f64, t: f64, from: &PhasePoint, to: &PhasePoint, r: usize) -> f64 {
    let (k11, k12, k22) = (t, t * t / 2.0, t * t * t / 3.0);
    let det = k11 * k22 - k12 * k12;
    let v = [to.x()[0] - from.x()[0], to.y()[0] - from.y()[0] - from.x()[0] * t];
    let g = [(k22 * v[0] - k12 * v[1]) / det, (-k12 * v[0] + k11 * v[1]) / det];
    let phi = (-0.5 * (v[0] * g[0] + v[1] * g[1])).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
    let h = [t, t * t / 2.0];
    let hkh = (k22 * h[0] * h[0] - 2.0 * k12 * h[0] * h[1] + k11 * h[1] * h[1]) / det;
    let sh = hkh.sqrt();
    let a = (g[0] * h[0] + g[1] * h[1]) / sh;
    let (mut he0, mut he1) = (1.0, a);
    let he = match r {
        0 => 1.0,
        _ => {
            for k in 1..r {
                let next = a * he1 - k as f64 * he0;
                he0 = he1;
                he1 = next;
            }
            he1
        }
    };
    let fact: f64 = (1..=r).map(|k| k as f64).product();
    phi * (b * sh).powi(r as i32) * he / fact
}
