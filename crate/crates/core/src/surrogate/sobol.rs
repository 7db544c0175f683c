//! Unscrambled Sobol points (Joe-Kuo direction numbers, up to 21 dims),
//! generated in Gray-code order so the first `2^k` points form a digital net.

const BITS: u32 = 32;

/// `(degree s, coefficient a, initial m_1..m_s)` for dimensions 2..=21.
const DIRECTIONS: [(u32, u32, &[u32]); 20] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
];

pub const MAX_DIM: usize = DIRECTIONS.len() + 1;

fn direction_vectors(dim: usize) -> [u32; BITS as usize] {
    let mut v = [0u32; BITS as usize];
    if dim == 0 {
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = 1 << (BITS - 1 - i as u32);
        }
        return v;
    }
    let (s, a, m) = DIRECTIONS[dim - 1];
    let s = s as usize;
    for i in 0..s.min(BITS as usize) {
        v[i] = m[i] << (BITS - 1 - i as u32);
    }
    for i in s..BITS as usize {
        let mut x = v[i - s] ^ (v[i - s] >> s);
        for k in 1..s {
            x ^= ((a >> (s - 1 - k)) & 1) * v[i - k];
        }
        v[i] = x;
    }
    v
}

/// First `n` points of the `d`-dimensional sequence in `[0, 1)^d`, row-major.
pub fn sobol_points(n: usize, d: usize) -> Option<Vec<f64>> {
    if d == 0 || d > MAX_DIM {
        return None;
    }
    let dirs: Vec<_> = (0..d).map(direction_vectors).collect();
    let mut state = vec![0u32; d];
    let mut out = Vec::with_capacity(n * d);
    let scale = 1.0 / (1u64 << BITS) as f64;
    for i in 0..n {
        if i > 0 {
            // flip along the lowest zero bit of i - 1 (Gray-code update)
            let c = (!(i - 1)).trailing_zeros() as usize;
            for (s, v) in state.iter_mut().zip(&dirs) {
                *s ^= v[c];
            }
        }
        out.extend(state.iter().map(|&s| s as f64 * scale));
    }
    Some(out)
}
