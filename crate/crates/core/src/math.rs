//! Small numeric helpers on top of `libm`.

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub fn lgamma(x: f64) -> f64 {
    libm::lgamma(x)
}

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

/// ln B(a) = sum ln Γ(a_i) - ln Γ(sum a_i).
pub fn ln_beta(a: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut t = 0.0;
    for &x in a {
        s += lgamma(x);
        t += x;
    }
    s - lgamma(t)
}

/// ln B(n + a) - ln B(a), the Dirichlet-multinomial marginal likelihood.
pub fn ln_marginal(counts: &[f64], alphas: &[f64]) -> f64 {
    let mut s = 0.0;
    let (mut n, mut a) = (0.0, 0.0);
    for (&c, &x) in counts.iter().zip(alphas) {
        if c > 0.0 {
            s += lgamma(c + x) - lgamma(x);
        }
        n += c;
        a += x;
    }
    s + lgamma(a) - lgamma(a + n)
}

pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ln(xs.map(|x| exp(x - m)).sum::<f64>())
}
