//! Comparison helpers shared by the test suites and the `check` command.

/// Componentwise relative error between an analytic gradient and its
/// central-difference estimate.
///
/// Each component is normalised by the largest of `|a|`, `|b|`, one percent of
/// the gradient's max-norm, and `1e-5·(1 + |f|)`. The last two floors keep
/// components that sit below the difference quotient's own resolution (the
/// rounding error of `f(θ ± h)` divided by the step) from dominating.
pub fn gradient_rel_err(analytic: &[f64], fd: &[f64], objective_value: f64) -> f64 {
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-2 * scale).max(1e-5 * (1.0 + objective_value.abs()));
    analytic
        .iter()
        .zip(fd)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// `log10` least-squares slope of `ys` against `xs`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.log10()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.log10()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
