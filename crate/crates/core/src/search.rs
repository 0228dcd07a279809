//! One-dimensional minimisation helpers for learning-rate scans.

/// Default scan range and resolution for learning rates.
pub const DEFAULT_RANGE: (f64, f64) = (-3.0, 3.0);
pub const DEFAULT_STEP: f64 = 1e-4;

/// Points `start, start + step, ...` up to and including `stop` (within a
/// small fraction of `step`).
pub fn grid_points(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|k| start + k as f64 * step).collect()
}

/// Grid argmin of `f` over `[lo, hi]` with spacing `step`, then one finer
/// pass (spacing `step / 100`) over the two neighbouring cells.
pub fn grid_argmin<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, step: f64) -> (f64, f64) {
    let coarse = scan(&f, &grid_points(lo, hi, step));
    let fine_lo = (coarse.0 - step).max(lo);
    let fine_hi = (coarse.0 + step).min(hi);
    let fine = scan(&f, &grid_points(fine_lo, fine_hi, step / 100.0));
    if fine.1 <= coarse.1 {
        fine
    } else {
        coarse
    }
}

fn scan<F: Fn(f64) -> f64>(f: &F, xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .map(|&x| (x, f(x)))
        .fold((f64::NAN, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Vertex of the parabola through three points, if it opens upwards.
pub fn parabola_vertex(xs: [f64; 3], ys: [f64; 3]) -> Option<f64> {
    let [x0, x1, x2] = xs;
    let [y0, y1, y2] = ys;
    let denom = (x0 - x1) * (x0 - x2) * (x1 - x2);
    let a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom;
    let b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom;
    (a > 0.0).then(|| -b / (2.0 * a))
}

/// Argmin of sampled values refined by a quadratic through the minimum and
/// its neighbours. At the ends of the grid the three outermost points are
/// used; if they do not curve upwards the raw grid argmin is returned.
pub fn quadratic_fit_argmin(xs: &[f64], ys: &[f64]) -> f64 {
    assert!(xs.len() == ys.len() && xs.len() >= 3, "need at least three samples");
    let best = ys
        .iter()
        .enumerate()
        .fold(0, |best, (i, y)| if *y < ys[best] { i } else { best });
    let centre = best.clamp(1, xs.len() - 2);
    parabola_vertex(
        [xs[centre - 1], xs[centre], xs[centre + 1]],
        [ys[centre - 1], ys[centre], ys[centre + 1]],
    )
    .unwrap_or(xs[best])
}
