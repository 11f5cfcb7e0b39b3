//! Gamma-family special functions and the exact scalar quantities of the
//! inverse-gamma polymer: characteristic direction, shape function, and the
//! closed forms used by the scaling experiments.
//!
//! All functions here are pure; accuracy targets are ~1e-12 relative because
//! the experiments difference near-equal shape-function values.

use crate::{Error, Result};

/// Bernoulli numbers B_2, B_4, ..., B_16.
const BERNOULLI: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

/// Threshold above which the Bernoulli asymptotic series is accurate to
/// better than 1e-14; smaller arguments are pushed up by recurrence.
const ASYMP_MIN: f64 = 16.0;

/// Natural log of the gamma function, for x > 0.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::domain(format!("log_gamma requires x > 0, got {x}")));
    }
    // Push the argument above the asymptotic threshold: ln G(x) = ln G(x+m) - sum ln(x+i).
    let mut shift = 0.0;
    let mut z = x;
    while z < ASYMP_MIN {
        shift += z.ln();
        z += 1.0;
    }
    let zi = 1.0 / z;
    let zi2 = zi * zi;
    let mut series = 0.0;
    let mut pow = zi;
    for (n, b) in BERNOULLI.iter().enumerate() {
        let k = 2.0 * (n as f64 + 1.0);
        series += b / (k * (k - 1.0)) * pow;
        pow *= zi2;
    }
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    Ok((z - 0.5) * z.ln() - z + half_ln_2pi + series - shift)
}

/// Polygamma function Psi_k(x) = (d/dx)^{k+1} ln Gamma(x), for 0 <= k <= 3 and x > 0.
pub fn polygamma(k: u32, x: f64) -> Result<f64> {
    if k > 3 {
        return Err(Error::domain(format!("polygamma order {k} out of range 0..=3")));
    }
    if !(x > 0.0) {
        return Err(Error::domain(format!("polygamma requires x > 0, got {x}")));
    }
    // Recurrence Psi_k(x) = Psi_k(x+1) + (-1)^{k+1} k! x^{-k-1}.
    let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
    let fact = [1.0, 1.0, 2.0, 6.0][k as usize];
    let mut acc = 0.0;
    let mut z = x;
    while z < ASYMP_MIN {
        acc += sign * fact * z.powi(-(k as i32) - 1);
        z += 1.0;
    }
    Ok(acc + polygamma_asymptotic(k, z))
}

/// Bernoulli asymptotic expansion, valid for z >= ASYMP_MIN.
fn polygamma_asymptotic(k: u32, z: f64) -> f64 {
    let zi = 1.0 / z;
    let zi2 = zi * zi;
    match k {
        0 => {
            // Psi_0(z) ~ ln z - 1/(2z) - sum B_{2n}/(2n) z^{-2n}
            let mut s = 0.0;
            let mut pow = zi2;
            for (n, b) in BERNOULLI.iter().enumerate() {
                let two_n = 2.0 * (n as f64 + 1.0);
                s += b / two_n * pow;
                pow *= zi2;
            }
            z.ln() - 0.5 * zi - s
        }
        1 => {
            // Psi_1(z) ~ 1/z + 1/(2z^2) + sum B_{2n} z^{-2n-1}
            let mut s = 0.0;
            let mut pow = zi2 * zi;
            for b in BERNOULLI.iter() {
                s += b * pow;
                pow *= zi2;
            }
            zi + 0.5 * zi2 + s
        }
        2 => {
            // Psi_2(z) ~ -1/z^2 - 1/z^3 - sum B_{2n} (2n+1) z^{-2n-2}
            let mut s = 0.0;
            let mut pow = zi2 * zi2;
            for (n, b) in BERNOULLI.iter().enumerate() {
                let two_n = 2.0 * (n as f64 + 1.0);
                s += b * (two_n + 1.0) * pow;
                pow *= zi2;
            }
            -zi2 - zi2 * zi - s
        }
        3 => {
            // Psi_3(z) ~ 2/z^3 + 3/z^4 + sum B_{2n} (2n+1)(2n+2) z^{-2n-3}
            let mut s = 0.0;
            let mut pow = zi2 * zi2 * zi;
            for (n, b) in BERNOULLI.iter().enumerate() {
                let two_n = 2.0 * (n as f64 + 1.0);
                s += b * (two_n + 1.0) * (two_n + 2.0) * pow;
                pow *= zi2;
            }
            2.0 * zi2 * zi + 3.0 * zi2 * zi2 + s
        }
        _ => unreachable!(),
    }
}

/// Model parameters: bulk shape mu and direction parameter rho, 0 < rho < mu.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub mu: f64,
    pub rho: f64,
}

impl ModelParams {
    pub fn new(mu: f64, rho: f64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::domain(format!("mu must be positive, got {mu}")));
        }
        if !(rho > 0.0 && rho < mu) {
            return Err(Error::domain(format!(
                "rho must satisfy 0 < rho < mu, got rho={rho}, mu={mu}"
            )));
        }
        Ok(Self { mu, rho })
    }
}

/// An l1-normalized direction in the open first quadrant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub e1: f64,
    pub e2: f64,
}

/// The characteristic direction xi[rho], a trigamma ratio.
pub fn characteristic_direction(params: ModelParams) -> Result<Direction> {
    let p_rho = polygamma(1, params.rho)?;
    let p_comp = polygamma(1, params.mu - params.rho)?;
    let denom = p_rho + p_comp;
    Ok(Direction { e1: p_rho / denom, e2: p_comp / denom })
}

/// Shape function evaluated at the characteristic direction xi[rho].
pub fn shape_function(params: ModelParams) -> Result<f64> {
    let xi = characteristic_direction(params)?;
    let psi0_rho = polygamma(0, params.rho)?;
    let psi0_comp = polygamma(0, params.mu - params.rho)?;
    Ok(-xi.e1 * psi0_comp - xi.e2 * psi0_rho)
}

/// The lattice endpoint N * xi[rho], componentwise floor.
pub fn characteristic_endpoint(params: ModelParams, n: u64) -> Result<(i64, i64)> {
    let xi = characteristic_direction(params)?;
    Ok(((n as f64 * xi.e1).floor() as i64, (n as f64 * xi.e2).floor() as i64))
}

/// Inverts rho -> xi[rho].e1 by bisection; xi.e1 is strictly decreasing in rho.
fn direction_to_rho(mu: f64, xi1: f64) -> Result<f64> {
    if !(xi1 > 0.0 && xi1 < 1.0) {
        return Err(Error::domain(format!("direction component {xi1} outside (0,1)")));
    }
    let mut lo = 1e-14;
    let mut hi = mu - 1e-14;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = characteristic_direction(ModelParams { mu, rho: mid })?.e1;
        if v > xi1 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * mu {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Homogeneous extension of the shape function to a nonnegative lattice point.
pub fn shape_at_lattice(mu: f64, m: i64, n: i64) -> Result<f64> {
    if m < 0 || n < 0 || (m == 0 && n == 0) {
        return Err(Error::domain(format!("shape_at_lattice needs (m,n) >= 0, nonzero; got ({m},{n})")));
    }
    let psi0_mu = polygamma(0, mu)?;
    if n == 0 {
        // xi -> e1 limit: Lambda(e1) = -Psi_0(mu)
        return Ok(-(m as f64) * psi0_mu);
    }
    if m == 0 {
        return Ok(-(n as f64) * psi0_mu);
    }
    let total = (m + n) as f64;
    let rho = direction_to_rho(mu, m as f64 / total)?;
    Ok(total * shape_function(ModelParams { mu, rho })?)
}

/// Free-energy loss from shifting the endpoint v_N by floor(s N^{2/3}) along
/// the antidiagonal, with the boundary-weight mean compensation.
pub fn shape_loss(params: ModelParams, n: u64, s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::domain(format!("s must be nonnegative, got {s}")));
    }
    let (vx, vy) = characteristic_endpoint(params, n)?;
    let k = (s * (n as f64).powf(2.0 / 3.0)).floor() as i64;
    if k > vx {
        return Err(Error::domain(format!(
            "shift {k} pushes endpoint ({},{}) out of the quadrant",
            vx - k,
            vy + k
        )));
    }
    if k == 0 {
        return Ok(0.0);
    }
    let psi0_comp = polygamma(0, params.mu - params.rho)?;
    let psi0_rho = polygamma(0, params.rho)?;
    let shifted = shape_at_lattice(params.mu, vx - k, vy + k)?;
    let base = shape_at_lattice(params.mu, vx, vy)?;
    Ok(shifted - k as f64 * psi0_comp + k as f64 * psi0_rho - base)
}

/// Centered moment generating function E[e^{lambda(log X - Psi_0(alpha))}]
/// for X ~ Ga(alpha); requires alpha + lambda > 0.
pub fn log_gamma_mgf(alpha: f64, lambda: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::domain(format!("alpha must be positive, got {alpha}")));
    }
    if !(alpha + lambda > 0.0) {
        return Err(Error::domain(format!(
            "log_gamma_mgf requires alpha + lambda > 0, got alpha={alpha}, lambda={lambda}"
        )));
    }
    let ln = log_gamma(alpha + lambda)? - log_gamma(alpha)? - lambda * polygamma(0, alpha)?;
    Ok(ln.exp())
}

/// Second moment of the density ratio between inverse-gamma product measures
/// with shapes rho + b N^{-1/3} and rho over floor(a N^{2/3}) coordinates:
/// (Gamma(rho) Gamma(2 lambda - rho) / Gamma(lambda)^2)^{floor(a N^{2/3})}.
pub fn rn_second_moment(rho: f64, b: f64, n: u64, a: f64) -> Result<f64> {
    if !(rho > 0.0 && a > 0.0 && n > 0) {
        return Err(Error::domain("rn_second_moment requires rho > 0, a > 0, N > 0"));
    }
    let lambda = rho + b * (n as f64).powf(-1.0 / 3.0);
    if !(lambda > 0.0 && 2.0 * lambda - rho > 0.0) {
        return Err(Error::domain(format!(
            "gamma arguments nonpositive: lambda={lambda}, 2*lambda-rho={}",
            2.0 * lambda - rho
        )));
    }
    let count = (a * (n as f64).powf(2.0 / 3.0)).floor();
    let per_coord = log_gamma(rho)? + log_gamma(2.0 * lambda - rho)? - 2.0 * log_gamma(lambda)?;
    Ok((count * per_coord).exp())
}

/// L(theta, x) = int_0^x (Psi_0(theta) - log y) x^{-theta} y^{theta-1} e^{x-y} dy.
///
/// The substitution y = u^{1/theta} removes the y^{theta-1} endpoint
/// singularity for theta < 1; the remaining log singularity is integrable and
/// handled by the adaptive subdivision.
pub fn variance_helper_l(theta: f64, x: f64) -> Result<f64> {
    if !(theta > 0.0 && x > 0.0) {
        return Err(Error::domain(format!(
            "variance_helper_l requires positive arguments, got theta={theta}, x={x}"
        )));
    }
    let psi0 = polygamma(0, theta)?;
    let prefactor = (-theta * x.ln() + x).exp() / theta;
    let upper = x.powf(theta);
    let integrand = |u: f64| -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        let log_y = u.ln() / theta;
        (psi0 - log_y) * (-u.powf(1.0 / theta)).exp()
    };
    let integral = crate::quad::integrate(&integrand, 0.0, upper, 1e-12);
    Ok(prefactor * integral)
}
