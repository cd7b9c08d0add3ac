//! Procedural scalar fields: value noise and diamond-square plasma.

use crate::rng::Rng;

/// Fractal value noise on an `h x w` grid in `[0,1]`. `cell` is the lattice
/// pitch of the coarsest octave, halved at each of `octaves` levels.
pub fn value_noise(rng: &mut Rng, height: usize, width: usize, cell: f64, octaves: usize) -> Vec<f64> {
    let mut field = vec![0.0; height * width];
    let mut amplitude = 1.0;
    let mut total = 0.0;
    let mut pitch = cell.max(1.0);
    for _ in 0..octaves.max(1) {
        let gh = (height as f64 / pitch).ceil() as usize + 2;
        let gw = (width as f64 / pitch).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.uniform()).collect();
        for y in 0..height {
            let fy = y as f64 / pitch;
            let (iy, ty) = (fy.floor() as usize, smooth(fy.fract()));
            for x in 0..width {
                let fx = x as f64 / pitch;
                let (ix, tx) = (fx.floor() as usize, smooth(fx.fract()));
                let a = lattice[iy * gw + ix];
                let b = lattice[iy * gw + ix + 1];
                let c = lattice[(iy + 1) * gw + ix];
                let d = lattice[(iy + 1) * gw + ix + 1];
                let top = a + (b - a) * tx;
                let bottom = c + (d - c) * tx;
                field[y * width + x] += amplitude * (top + (bottom - top) * ty);
            }
        }
        total += amplitude;
        amplitude *= 0.5;
        pitch = (pitch / 2.0).max(1.0);
    }
    field.iter_mut().for_each(|v| *v /= total);
    field
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Diamond-square plasma fractal of side `size` (a power of two),
/// normalised to `[0,1]`. Larger `decay` gives smoother fields.
pub fn plasma(rng: &mut Rng, size: usize, decay: f64) -> Vec<f64> {
    assert!(size.is_power_of_two() && size >= 2);
    let n = size;
    let idx = |y: usize, x: usize| (y % n) * n + (x % n);
    let mut map = vec![0.0; n * n];
    let mut step = n;
    let mut wibble = 100.0;
    while step >= 2 {
        let half = step / 2;
        // squares: centre of each step-sized cell
        for y in (0..n).step_by(step) {
            for x in (0..n).step_by(step) {
                let avg = (map[idx(y, x)]
                    + map[idx(y, x + step)]
                    + map[idx(y + step, x)]
                    + map[idx(y + step, x + step)])
                    / 4.0;
                map[idx(y + half, x + half)] = avg + wibble * rng.uniform_range(-1.0, 1.0);
            }
        }
        // diamonds: edge midpoints
        for y in (0..n).step_by(step) {
            for x in (0..n).step_by(step) {
                for &(dy, dx) in &[(0, half), (half, 0)] {
                    let (cy, cx) = (y + dy, x + dx);
                    let avg = (map[idx(cy + n - half, cx)]
                        + map[idx(cy + half, cx)]
                        + map[idx(cy, cx + n - half)]
                        + map[idx(cy, cx + half)])
                        / 4.0;
                    map[idx(cy, cx)] = avg + wibble * rng.uniform_range(-1.0, 1.0);
                }
            }
        }
        step = half;
        wibble /= decay;
    }
    let (lo, hi) = map
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    map.iter().map(|v| (v - lo) / span).collect()
}
