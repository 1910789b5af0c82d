//! Closed-form oracles shared by the integration tests. Nothing here calls
//! into the library's numerics.

#![allow(dead_code)]

/// Power law `H(u) = c u^m` written out by hand.
#[derive(Debug, Clone, Copy)]
pub struct PowerLaw {
    pub p: f64,
    pub q: f64,
    pub gamma: f64,
    pub c: f64,
    pub m: f64,
}

impl PowerLaw {
    pub fn new(p: f64, gamma: f64) -> Self {
        Self {
            p,
            q: p / (p - 1.0),
            gamma,
            c: gamma / ((gamma + 1.0 - p) * (gamma + 2.0 - p)),
            m: gamma + 2.0 - p,
        }
    }
    pub fn big_h(&self, u: f64) -> f64 {
        self.c * u.powf(self.m)
    }
    pub fn big_h_second(&self, u: f64) -> f64 {
        self.c * self.m * (self.m - 1.0) * u.powf(self.m - 2.0)
    }
    /// `h(x) = x H(1/x)`.
    pub fn h(&self, x: f64) -> f64 {
        self.c * x.powf(1.0 - self.m)
    }
    /// `ψ = -h'`.
    pub fn psi(&self, x: f64) -> f64 {
        if x.is_infinite() {
            0.0
        } else {
            self.c * (self.m - 1.0) * x.powf(-self.m)
        }
    }
    pub fn psi_inverse(&self, y: f64) -> f64 {
        (self.c * (self.m - 1.0) / y).powf(1.0 / self.m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Walls {
    Line,
    Mirror(f64),
    Pinned,
}

/// Gaps `0..=N` with the boundary rule of each domain.
pub fn gaps(x: &[f64], walls: Walls) -> Vec<f64> {
    let n = x.len();
    let mut g = vec![0.0; n + 1];
    for i in 1..n {
        g[i] = x[i] - x[i - 1];
    }
    match walls {
        Walls::Line => {
            g[0] = f64::INFINITY;
            g[n] = f64::INFINITY;
        }
        Walls::Mirror(l) => {
            g[0] = 2.0 * (x[0] + l);
            g[n] = 2.0 * (l - x[n - 1]);
        }
        Walls::Pinned => {
            g[0] = g[1];
            g[n] = g[n - 1];
        }
    }
    g
}

/// `(1/N) Σ h(N min(Δx_i, Δx_{i+1}))`.
pub fn energy(x: &[f64], walls: Walls, law: &PowerLaw) -> f64 {
    let n = x.len() as f64;
    let g = gaps(x, walls);
    g.windows(2).map(|w| law.h(n * w[0].min(w[1]))).sum::<f64>() / n
}

/// `N ψ(N Δx_k)`, boundary entries doubled for mirror walls.
pub fn psi_nodes(x: &[f64], walls: Walls, law: &PowerLaw) -> Vec<f64> {
    let n = x.len();
    let mut psi: Vec<f64> = gaps(x, walls).iter().map(|g| n as f64 * law.psi(n as f64 * g)).collect();
    if let Walls::Mirror(_) = walls {
        psi[0] *= 2.0;
        psi[n] *= 2.0;
    }
    psi
}

/// Row `r` of the subgradient for `λ_{r-1}, λ_r, λ_{r+1}` = `a, b, c`:
/// the derivative of `N·Ẽ_N` with respect to `x_r` when ball `i` is the
/// convex combination `(1-λ_i)Δx_i + λ_i Δx_{i+1}`.
pub fn row(psi: &[f64], r: usize, a: f64, b: f64, c: f64) -> f64 {
    psi[r + 1] * (b - c + 1.0) - psi[r] * (a - b + 1.0)
}

/// `λ_i` forced by strict gap orders, `None` where tied; `λ_{-1} = 0` and
/// `λ_N = 1` close the chain.
pub fn fixed_lambdas(x: &[f64], walls: Walls, tol: f64) -> Vec<Option<f64>> {
    let g = gaps(x, walls);
    g.windows(2)
        .map(|w| {
            let (l, r) = (w[0], w[1]);
            if l.is_finite() && r.is_finite() && (r - l).abs() <= tol * l.max(r) {
                None
            } else if r > l {
                Some(0.0)
            } else {
                Some(1.0)
            }
        })
        .collect()
}

pub fn lambda_at(lam: &[f64], i: isize) -> f64 {
    if i < 0 {
        0.0
    } else if i as usize >= lam.len() {
        1.0
    } else {
        lam[i as usize]
    }
}

pub fn assemble(psi: &[f64], lam: &[f64]) -> Vec<f64> {
    (0..lam.len())
        .map(|r| {
            let r_ = r as isize;
            row(psi, r, lambda_at(lam, r_ - 1), lam[r], lambda_at(lam, r_ + 1))
        })
        .collect()
}

pub fn weighted_norm(v: &[f64], s: f64) -> f64 {
    (v.iter().map(|x| x.abs().powf(s)).sum::<f64>() / v.len() as f64).powf(1.0 / s)
}

const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Composite 5-point Gauss–Legendre on `[a, b]` with `k` panels.
pub fn gauss<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, k: usize) -> f64 {
    let h = (b - a) / k as f64;
    (0..k)
        .map(|j| {
            let mid = a + h * (j as f64 + 0.5);
            GL5.iter().map(|(t, w)| w * f(mid + 0.5 * h * t)).sum::<f64>() * 0.5 * h
        })
        .sum()
}

/// Barenblatt solution of `u_t = (u²)_xx` with unit mass.
pub fn barenblatt(x: f64, t: f64) -> f64 {
    let c = (3.0 / (4.0 * 12f64.sqrt())).powf(2.0 / 3.0);
    (t.powf(-1.0 / 3.0) * (c - x * x / (12.0 * t.powf(2.0 / 3.0)))).max(0.0)
}

pub fn barenblatt_radius(t: f64) -> f64 {
    let c = (3.0 / (4.0 * 12f64.sqrt())).powf(2.0 / 3.0);
    (12.0 * c).sqrt() * t.powf(1.0 / 3.0)
}

/// `W_p` between equal-mass atom sets by trying every assignment.
pub fn brute_force_wp(x: &[f64], y: &[f64], p: f64) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |s| {
        let cost: f64 = s.iter().enumerate().map(|(i, &j)| (x[i] - y[j]).abs().powf(p)).sum();
        best = best.min(cost);
    });
    (best / n as f64).powf(1.0 / p)
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}
