pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add_acc(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

/// Backward of `y = softmax(s)`: returns `ds` given `dy`.
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let inner = dot(y, dy);
    y.iter().zip(dy).map(|(yi, gi)| yi * (gi - inner)).collect()
}

const COS_EPS: f64 = 1e-12;

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b)).max(COS_EPS)
}

/// Gradients of `cosine(a, b)` with respect to `a` and `b`.
pub fn cosine_backward(a: &[f64], b: &[f64], dout: f64) -> (Vec<f64>, Vec<f64>) {
    let na = norm(a).max(COS_EPS.sqrt());
    let nb = norm(b).max(COS_EPS.sqrt());
    let c = dot(a, b) / (na * nb);
    let da = a.iter().zip(b).map(|(x, y)| dout * (y / (na * nb) - c * x / (na * na))).collect();
    let db = a.iter().zip(b).map(|(x, y)| dout * (x / (na * nb) - c * y / (nb * nb))).collect();
    (da, db)
}
