//! Gauss–Legendre rules and the tensor-product bump mollifier.

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-like starting guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let n = n as f64;
    (p1, n * (z * p1 - p0) / (z * z - 1.0))
}

/// Unnormalized bump `exp(-1/(1-r²))` for `r² < 1`, zero outside.
pub fn bump(r2: f64) -> f64 {
    if r2 < 1.0 {
        (-1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

/// Quadrature of a mass-one mollifier on the unit ball of `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct MollifierRule {
    pub dim: usize,
    pub nodes_per_axis: usize,
    /// Flattened points, `dim` coordinates each.
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MollifierRule {
    /// Tensor Gauss–Legendre rule on [-1,1]^dim weighted by the bump and
    /// normalized so the weights sum to one.
    pub fn new(dim: usize, nodes_per_axis: usize) -> Self {
        let (x, w) = gauss_legendre(nodes_per_axis);
        let total = nodes_per_axis.pow(dim as u32);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let r2: f64 = idx.iter().map(|&k| x[k] * x[k]).sum();
            let rho = bump(r2);
            if rho > 0.0 {
                let wt: f64 = idx.iter().map(|&k| w[k]).product::<f64>() * rho;
                points.extend(idx.iter().map(|&k| x[k]));
                weights.push(wt);
            }
            for slot in idx.iter_mut() {
                *slot += 1;
                if *slot < nodes_per_axis {
                    break;
                }
                *slot = 0;
            }
        }
        let mass: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= mass;
        }
        Self { dim, nodes_per_axis, points, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, q: usize) -> &[f64] {
        &self.points[q * self.dim..(q + 1) * self.dim]
    }
}
