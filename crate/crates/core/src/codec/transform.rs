//! 8×8 orthonormal DCT-II, zigzag scan, and BT.601 full-range color.

use std::sync::OnceLock;

pub const N: usize = 8;

pub type Block = [f64; 64];

pub fn round_half_away(v: f64) -> f64 {
    // f64::round already rounds halves away from zero
    v.round()
}

fn basis() -> &'static [[f64; N]; N] {
    static B: OnceLock<[[f64; N]; N]> = OnceLock::new();
    B.get_or_init(|| {
        let mut b = [[0.0; N]; N];
        for (u, row) in b.iter_mut().enumerate() {
            let alpha = if u == 0 { (1.0 / N as f64).sqrt() } else { (2.0 / N as f64).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = alpha * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / (2 * N) as f64).cos();
            }
        }
        b
    })
}

/// Forward 2-D transform, row-major input and output (`[v * 8 + u]`).
pub fn fdct(input: &Block) -> Block {
    let b = basis();
    let mut tmp = [0.0; 64];
    for y in 0..N {
        for u in 0..N {
            let mut s = 0.0;
            for x in 0..N {
                s += b[u][x] * input[y * N + x];
            }
            tmp[y * N + u] = s;
        }
    }
    let mut out = [0.0; 64];
    for u in 0..N {
        for v in 0..N {
            let mut s = 0.0;
            for y in 0..N {
                s += b[v][y] * tmp[y * N + u];
            }
            out[v * N + u] = s;
        }
    }
    out
}

pub fn idct(coef: &Block) -> Block {
    let b = basis();
    let mut tmp = [0.0; 64];
    for v in 0..N {
        for x in 0..N {
            let mut s = 0.0;
            for u in 0..N {
                s += b[u][x] * coef[v * N + u];
            }
            tmp[v * N + x] = s;
        }
    }
    let mut out = [0.0; 64];
    for x in 0..N {
        for y in 0..N {
            let mut s = 0.0;
            for v in 0..N {
                s += b[v][y] * tmp[v * N + x];
            }
            out[y * N + x] = s;
        }
    }
    out
}

/// Zigzag position `i` → row-major block index.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27,
    20, 13, 6, 7, 14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58,
    59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
];

fn clamp_round(v: f64) -> u8 {
    round_half_away(v).clamp(0.0, 255.0) as u8
}

pub fn rgb_to_ycbcr(rgb: [u8; 3]) -> [u8; 3] {
    let [r, g, b] = rgb.map(f64::from);
    [
        clamp_round(0.299 * r + 0.587 * g + 0.114 * b),
        clamp_round(128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b),
        clamp_round(128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b),
    ]
}

pub fn ycbcr_to_rgb(ycc: [u8; 3]) -> [u8; 3] {
    let y = ycc[0] as f64;
    let cb = ycc[1] as f64 - 128.0;
    let cr = ycc[2] as f64 - 128.0;
    [
        clamp_round(y + 1.402 * cr),
        clamp_round(y - 0.344136 * cb - 0.714136 * cr),
        clamp_round(y + 1.772 * cb),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct_dct(input: &Block) -> Block {
        let n = N as f64;
        let mut out = [0.0; 64];
        for v in 0..N {
            for u in 0..N {
                let cu = if u == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                let cv = if v == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                let mut s = 0.0;
                for y in 0..N {
                    for x in 0..N {
                        s += input[y * N + x]
                            * ((2.0 * x as f64 + 1.0) * u as f64 * std::f64::consts::PI / 16.0).cos()
                            * ((2.0 * y as f64 + 1.0) * v as f64 * std::f64::consts::PI / 16.0).cos();
                    }
                }
                out[v * N + u] = cu * cv * s;
            }
        }
        out
    }

    #[test]
    fn matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let mut blk = [0.0; 64];
            for v in blk.iter_mut() {
                *v = rng.gen_range(-255..=255) as f64;
            }
            let fast = fdct(&blk);
            let slow = direct_dct(&blk);
            for (a, b) in fast.iter().zip(slow.iter()) {
                worst = worst.max((a - b).abs());
            }
            let back = idct(&fast);
            for (a, b) in back.iter().zip(blk.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        assert!(worst < 1e-9, "max abs coefficient error {worst}");
    }

    #[test]
    fn dc_of_constant_block() {
        let c = fdct(&[10.0; 64]);
        assert!((c[0] - 80.0).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zigzag_is_permutation_of_antidiagonals() {
        let mut seen = [false; 64];
        let mut last_diag = 0;
        for &i in ZIGZAG.iter() {
            assert!(!seen[i]);
            seen[i] = true;
            let d = i / 8 + i % 8;
            assert!(d == last_diag || d == last_diag + 1);
            last_diag = d;
        }
    }

    #[test]
    fn rounding_is_half_away() {
        assert_eq!(round_half_away(2.5), 3.0);
        assert_eq!(round_half_away(-2.5), -3.0);
        assert_eq!(round_half_away(-0.4), -0.0);
    }

    #[test]
    fn gray_round_trips_exactly() {
        for v in 0..=255u8 {
            let ycc = rgb_to_ycbcr([v, v, v]);
            assert_eq!(ycc, [v, 128, 128]);
            assert_eq!(ycbcr_to_rgb(ycc), [v, v, v]);
        }
    }
}
