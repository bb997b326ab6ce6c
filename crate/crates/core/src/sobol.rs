//! Base-2 Sobol sequence with Joe–Kuo direction numbers (up to 32 dimensions).

use crate::error::{Error, Result};

pub const MAX_SOBOL_DIM: usize = 32;

const BITS: usize = 32;

/// Primitive polynomials, including the leading and trailing terms.
/// The first dimension is the van der Corput sequence.
const POLYS: [u32; MAX_SOBOL_DIM] = [
    1, 3, 7, 11, 13, 19, 25, 37, 41, 47, 55, 59, 61, 67, 91, 97, 103, 109, 115, 131, 137, 143, 145, 157, 167, 171,
    185, 191, 193, 203, 211, 213,
];

/// Initial direction integers `m_1..m_s` per dimension.
const INITIAL: [&[u32]; MAX_SOBOL_DIM] = [
    &[],
    &[1],
    &[1, 3],
    &[1, 3, 1],
    &[1, 1, 1],
    &[1, 1, 3, 3],
    &[1, 3, 5, 13],
    &[1, 1, 5, 5, 17],
    &[1, 1, 5, 5, 5],
    &[1, 1, 7, 11, 19],
    &[1, 1, 5, 1, 1],
    &[1, 1, 1, 3, 11],
    &[1, 3, 5, 5, 31],
    &[1, 3, 3, 9, 7, 49],
    &[1, 1, 1, 15, 21, 21],
    &[1, 3, 1, 13, 27, 49],
    &[1, 1, 1, 15, 7, 5],
    &[1, 3, 1, 15, 13, 25],
    &[1, 1, 5, 5, 19, 61],
    &[1, 3, 7, 11, 23, 15, 103],
    &[1, 3, 7, 13, 13, 15, 69],
    &[1, 1, 3, 13, 7, 35, 63],
    &[1, 3, 5, 9, 1, 25, 53],
    &[1, 3, 1, 13, 9, 35, 107],
    &[1, 3, 1, 5, 27, 61, 31],
    &[1, 1, 5, 11, 19, 41, 61],
    &[1, 3, 5, 3, 3, 13, 69],
    &[1, 1, 7, 13, 1, 19, 1],
    &[1, 3, 7, 5, 13, 19, 59],
    &[1, 1, 3, 9, 25, 29, 41],
    &[1, 3, 5, 13, 23, 1, 55],
    &[1, 3, 7, 3, 13, 59, 17],
];

/// Direction numbers `v_1..v_32` of one dimension, left-aligned in 32 bits.
fn directions(dim_index: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim_index == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let poly = POLYS[dim_index];
    let s = (32 - poly.leading_zeros() - 1) as usize;
    let a = (poly >> 1) & ((1 << (s - 1)) - 1);
    let m = INITIAL[dim_index];
    for k in 0..s {
        v[k] = m[k] << (BITS - 1 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for i in 1..s {
            if (a >> (s - 1 - i)) & 1 == 1 {
                x ^= v[k - i];
            }
        }
        v[k] = x;
    }
    v
}

/// Raw 32-bit integer coordinates of point `index`.
pub fn sobol_point_bits(dim: usize, index: u64) -> Result<Vec<u32>> {
    check(dim, index, 1)?;
    let gray = index ^ (index >> 1);
    Ok((0..dim)
        .map(|j| {
            let v = directions(j);
            (0..BITS).filter(|b| (gray >> b) & 1 == 1).fold(0u32, |acc, b| acc ^ v[b])
        })
        .collect())
}

fn check(dim: usize, index: u64, q: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if dim > MAX_SOBOL_DIM {
        return Err(Error::NotAvailable(format!("Sobol directions are tabulated up to {MAX_SOBOL_DIM} dimensions")));
    }
    if index.checked_add(q as u64).is_none_or(|end| end > 1 << BITS) {
        return Err(Error::invalid("Sobol index beyond 2^32"));
    }
    Ok(())
}

/// Points `index..index+q` of the unscrambled sequence in `[0,1)^dim`.
pub fn sobol_batch(dim: usize, index: u64, q: usize) -> Result<Vec<Vec<f64>>> {
    sobol_batch_shifted(dim, index, q, &vec![0; dim])
}

/// Like [`sobol_batch`], with every coordinate XOR-ed by `shift` (a digital shift).
pub fn sobol_batch_shifted(dim: usize, index: u64, q: usize, shift: &[u32]) -> Result<Vec<Vec<f64>>> {
    check(dim, index, q)?;
    Error::check_dim(dim, shift.len())?;
    let dirs: Vec<[u32; BITS]> = (0..dim).map(directions).collect();
    let scale = 1.0 / (1u64 << BITS) as f64;
    let mut out = Vec::with_capacity(q);
    if q == 0 {
        return Ok(out);
    }
    // Gray-code recursion: consecutive points differ by one direction number.
    let mut state: Vec<u32> = sobol_point_bits(dim, index)?;
    for i in index..index + q as u64 {
        if i > index {
            let bit = (i - 1).trailing_ones() as usize;
            for (s, d) in state.iter_mut().zip(&dirs) {
                *s ^= d[bit];
            }
        }
        out.push(state.iter().zip(shift).map(|(s, h)| (s ^ h) as f64 * scale).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_reference_table() {
        // scipy.stats.qmc.Sobol(d=32, scramble=False), columns 0,1,2,3,5,8,12,19,25,31.
        let cols = [0, 1, 2, 3, 5, 8, 12, 19, 25, 31];
        let expected: [(u64, [f64; 10]); 6] = [
            (0, [0.0; 10]),
            (1, [0.5; 10]),
            (2, [0.75, 0.25, 0.25, 0.25, 0.75, 0.75, 0.25, 0.25, 0.75, 0.25]),
            (4, [0.375, 0.375, 0.625, 0.875, 0.125, 0.875, 0.375, 0.125, 0.875, 0.125]),
            (
                1000,
                [
                    0.2197265625, 0.0966796875, 0.5185546875, 0.6767578125, 0.9072265625, 0.5009765625, 0.1611328125,
                    0.7255859375, 0.9072265625, 0.1455078125,
                ],
            ),
            (
                1337,
                [
                    0.64794921875, 0.95263671875, 0.38720703125, 0.88720703125, 0.02978515625, 0.06201171875,
                    0.14208984375, 0.39111328125, 0.38330078125, 0.40185546875,
                ],
            ),
        ];
        for (i, row) in expected {
            let p = &sobol_batch(32, i, 1).unwrap()[0];
            for (c, e) in cols.iter().zip(row) {
                assert_eq!(p[*c], e, "point {i} dim {c}");
            }
        }
        let last = &sobol_batch(32, 2047, 1).unwrap()[0];
        assert_eq!(last[0], 0.00048828125);
        assert_eq!(last[31], 0.41455078125);
    }

    #[test]
    fn recursion_agrees_with_direct_evaluation() {
        let batch = sobol_batch(7, 123, 300).unwrap();
        for (j, p) in batch.iter().enumerate() {
            let bits = sobol_point_bits(7, 123 + j as u64).unwrap();
            let direct: Vec<f64> = bits.iter().map(|b| *b as f64 / 4294967296.0).collect();
            assert_eq!(p, &direct);
        }
    }

    #[test]
    fn prefixes_are_stratified() {
        for k in 1..=10 {
            let n = 1usize << k;
            let pts = sobol_batch(MAX_SOBOL_DIM, 0, n).unwrap();
            for j in 0..MAX_SOBOL_DIM {
                let lower = pts.iter().filter(|p| p[j] < 0.5).count();
                assert_eq!(lower, n / 2, "k={k} dim={j}");
            }
        }
        // Finer check in the first two dimensions: one point per elementary 2^-4 x 2^-4 box.
        let pts = sobol_batch(2, 0, 256).unwrap();
        let mut cells = [0; 256];
        for p in &pts {
            cells[(p[0] * 16.0) as usize * 16 + (p[1] * 16.0) as usize] += 1;
        }
        assert!(cells.iter().all(|c| *c == 1));
    }

    #[test]
    fn deterministic_and_shifted() {
        assert_eq!(sobol_batch(5, 17, 9).unwrap(), sobol_batch(5, 17, 9).unwrap());
        let shift = vec![0x8000_0000; 3];
        let shifted = sobol_batch_shifted(3, 0, 4, &shift).unwrap();
        assert_eq!(shifted[0], vec![0.5; 3]);
        assert_eq!(shifted[1], vec![0.0; 3]);
    }

    #[test]
    fn dimension_limits() {
        assert!(matches!(sobol_batch(33, 0, 1), Err(Error::NotAvailable(_))));
        assert!(sobol_batch(0, 0, 1).is_err());
        assert!(sobol_batch(2, u32::MAX as u64, 2).is_err());
        assert!(sobol_batch(2, 0, 0).unwrap().is_empty());
    }
}
