use ndarray::{s, Array2, Array3, Array4, ArrayView2, Axis};
use rand::Rng;

/// Rotates a `[S, S]` grid by `k` quarter turns counter-clockwise.
pub fn rotate90(grid: &ArrayView2<f64>, k: usize) -> Array2<f64> {
    let n = grid.nrows();
    let mut out = grid.to_owned();
    for _ in 0..k % 4 {
        let prev = out.clone();
        for r in 0..n {
            for c in 0..n {
                out[[r, c]] = prev[[c, n - 1 - r]];
            }
        }
    }
    out
}

/// Rotates a `[S, S]` grid counter-clockwise about its center by `degrees` with bilinear
/// sampling; samples falling outside repeat the nearest edge pixel.
pub fn rotate_small(grid: &ArrayView2<f64>, degrees: f64) -> Array2<f64> {
    let n = grid.nrows();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let mid = (n as f64 - 1.0) / 2.0;
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, n as isize - 1) as usize;
        let c = c.clamp(0, n as isize - 1) as usize;
        grid[[r, c]]
    };
    Array2::from_shape_fn((n, n), |(r, c)| {
        let (y, x) = (r as f64 - mid, c as f64 - mid);
        let sy = cos * y + sin * x + mid;
        let sx = cos * x - sin * y + mid;
        let (y0, x0) = (sy.floor(), sx.floor());
        let (fy, fx) = (sy - y0, sx - x0);
        let (y0, x0) = (y0 as isize, x0 as isize);
        at(y0, x0) * (1.0 - fy) * (1.0 - fx)
            + at(y0, x0 + 1) * (1.0 - fy) * fx
            + at(y0 + 1, x0) * fy * (1.0 - fx)
            + at(y0 + 1, x0 + 1) * fy * fx
    })
}

/// Applies the same random rotation to each image and its mask. Rotated
/// masks are re-binarized at 0.5.
pub fn augment_batch<R: Rng + ?Sized>(
    images: &mut Array4<f64>,
    mut masks: Option<&mut Array3<f64>>,
    rot90: bool,
    max_degrees: f64,
    rng: &mut R,
) {
    if !rot90 && max_degrees <= 0.0 {
        return;
    }
    for i in 0..images.shape()[0] {
        let k = if rot90 { rng.random_range(0..4) } else { 0 };
        let angle = if max_degrees > 0.0 {
            rng.random_range(-max_degrees..=max_degrees)
        } else {
            0.0
        };
        let turn = |g: ArrayView2<f64>| {
            let g = rotate90(&g, k);
            if angle != 0.0 {
                rotate_small(&g.view(), angle)
            } else {
                g
            }
        };
        let mut img = images.slice_mut(s![i, .., .., ..]);
        for mut ch in img.axis_iter_mut(Axis(2)) {
            let r = turn(ch.view());
            ch.assign(&r);
        }
        if let Some(m) = masks.as_deref_mut() {
            let mut lane = m.slice_mut(s![i, .., ..]);
            let r = turn(lane.view()).mapv(|v| if v >= 0.5 { 1.0 } else { 0.0 });
            lane.assign(&r);
        }
    }
}
