use super::{ensure_square, norm_1, Matrix};
use crate::error::{LabError, Result};

// Padé numerator coefficients and 1-norm thresholds (Higham 2005).
const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068),
];
const THETA13: f64 = 5.371920351148152;

/// `e^{tA}` by scaling and squaring with a diagonal Padé approximant whose
/// degree is picked from the 1-norm of `tA`.
pub fn expm(a: &Matrix, t: f64) -> Result<Matrix> {
    let n = ensure_square(a, "expm argument")?;
    if !t.is_finite() {
        return Err(LabError::InvalidInput(format!("expm time {t} is not finite")));
    }
    let ta = a * t;
    let norm = norm_1(&ta);
    if norm == 0.0 {
        return Ok(Matrix::identity(n, n));
    }
    for &(m, theta) in &THETA {
        if norm <= theta {
            let coeffs: &[f64] = match m {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            return pade_low(&ta, coeffs);
        }
    }
    let s = ((norm / THETA13).log2().ceil()).max(0.0) as i32;
    let scaled = &ta * 2f64.powi(-s);
    let mut r = pade13(&scaled)?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

fn solve_pade(u: Matrix, v: Matrix) -> Result<Matrix> {
    let p = &v + &u;
    let q = &v - &u;
    q.lu()
        .solve(&p)
        .ok_or_else(|| LabError::Singular("Padé denominator".into()))
}

fn pade_low(a: &Matrix, b: &[f64]) -> Result<Matrix> {
    let n = a.nrows();
    let id = Matrix::identity(n, n);
    let a2 = a * a;
    // even powers A^0, A^2, A^4, ...
    let mut powers = vec![id, a2.clone()];
    while powers.len() * 2 < b.len() {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let mut u_inner = Matrix::zeros(n, n);
    let mut v = Matrix::zeros(n, n);
    for (k, pw) in powers.iter().enumerate() {
        if 2 * k + 1 < b.len() {
            u_inner += pw * b[2 * k + 1];
        }
        v += pw * b[2 * k];
    }
    solve_pade(a * u_inner, v)
}

fn pade13(a: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    let id = Matrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_hi = &a6 * B13[13] + &a4 * B13[11] + &a2 * B13[9];
    let u_inner = &a6 * u_hi + &a6 * B13[7] + &a4 * B13[5] + &a2 * B13[3] + &id * B13[1];
    let u = a * u_inner;
    let v_hi = &a6 * B13[12] + &a4 * B13[10] + &a2 * B13[8];
    let v = &a6 * v_hi + &a6 * B13[6] + &a4 * B13[4] + &a2 * B13[2] + &id * B13[0];
    solve_pade(u, v)
}
