use crate::scalar::{lit, Real};

pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Central-difference gradient with per-dimension step `h * max(1, |x_i|)`.
pub fn fd_gradient<T, F>(f: F, x: &[T], h: T) -> Vec<T>
where
    T: Real,
    F: Fn(&[T]) -> T,
{
    let mut probe = x.to_vec();
    let two = lit::<T>(2.0);
    (0..x.len())
        .map(|i| {
            let step = h * x[i].abs().max(T::one());
            let orig = probe[i];
            probe[i] = orig + step;
            let fp = f(&probe);
            probe[i] = orig - step;
            let fm = f(&probe);
            probe[i] = orig;
            (fp - fm) / (two * step)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_is_exact() {
        let g = fd_gradient(|x: &[f64]| 3.0 * x[0], &[0.7], 1e-6);
        assert!((g[0] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn square_at_two() {
        let g = fd_gradient(|x: &[f64]| x[0] * x[0], &[2.0], 1e-6);
        assert!((g[0] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn constant_gives_zero() {
        let g = fd_gradient(|_: &[f64]| 5.0, &[1.0, -3.0, 1e4], 1e-6);
        assert_eq!(g, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn works_in_single_precision() {
        let g = fd_gradient(|x: &[f32]| x[0] * x[0] + 2.0 * x[1], &[1.0f32, 0.5], 1e-2);
        assert!((g[0] - 2.0).abs() < 1e-3);
        assert!((g[1] - 2.0).abs() < 1e-3);
    }
}
