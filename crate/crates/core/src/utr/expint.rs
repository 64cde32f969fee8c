//! Exponential integral E1.

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// E1(x) for x > 0. Power series up to 1, modified Lentz continued fraction beyond.
pub fn e1(x: f64) -> f64 {
    if x <= 0.0 {
        return f64::INFINITY;
    }
    if x > 700.0 {
        return 0.0;
    }
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        return -EULER_GAMMA - x.ln() - sum;
    }
    let tiny = 1e-300;
    let mut b = x + 1.0;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h * (-x).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tabulated_values() {
        assert!((e1(1.0) - 0.219_383_934_395_520_3).abs() < 1e-14);
        assert!((e1(0.1) - 1.822_923_958_419_390_7).abs() < 1e-13);
        assert!((e1(5.0) - 0.001_148_295_591_275_325_7).abs() < 1e-16);
    }

    #[test]
    fn branches_agree_at_switch() {
        let below = e1(1.0);
        let above = e1(1.0 + 1e-12);
        assert!((below - above).abs() < 1e-11);
    }
}
