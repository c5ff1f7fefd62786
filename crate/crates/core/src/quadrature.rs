//! Gauss-Legendre quadrature on knot spans.

/// Gauss-Legendre nodes and weights on [-1, 1].
///
/// Nodes are the roots of the Legendre polynomial P_n, found by Newton
/// iteration from the Chebyshev-like initial guess; weights follow from the
/// derivative values. Accurate to machine precision for n up to a few hundred.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be at least 1");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    // Roots come in +/- pairs; compute the non-negative half.
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Three-term recurrence for P_n(x) and P_{n-1}(x).
            let mut p0 = 1.0;
            let mut p1 = x;
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Quadrature points and weights for one direction, grouped by knot span.
#[derive(Debug, Clone)]
pub struct DirectionRule {
    /// One entry per nonempty span: (span knot index, points, weights).
    pub spans: Vec<SpanRule>,
}

#[derive(Debug, Clone)]
pub struct SpanRule {
    /// Knot index i of the span [xi_i, xi_{i+1}).
    pub span: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl DirectionRule {
    /// Maps an n-point Gauss rule onto every nonempty span of the knot vector.
    ///
    /// Points are strictly interior to each span, so collapsed-edge geometry
    /// maps are never evaluated on their singular set.
    pub fn new(spans: &[(usize, f64, f64)], n_points: usize) -> Self {
        let (nodes, wts) = gauss_legendre(n_points);
        let spans = spans
            .iter()
            .map(|&(span, a, b)| {
                let half = 0.5 * (b - a);
                let mid = 0.5 * (a + b);
                SpanRule {
                    span,
                    points: nodes.iter().map(|&t| mid + half * t).collect(),
                    weights: wts.iter().map(|&w| w * half).collect(),
                }
            })
            .collect();
        DirectionRule { spans }
    }

    pub fn total_points(&self) -> usize {
        self.spans.iter().map(|s| s.points.len()).sum()
    }
}
