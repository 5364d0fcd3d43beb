//! Dense tensor kernels with their adjoints.

pub mod activation;
pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod upsample;

pub use activation::{log_softmax_row, relu, relu_backward, sigmoid, softmax, softmax_backward};
pub use conv::{conv2d, conv2d_backward, conv2d_forward, depthwise_conv2d, ConvGeom, ConvGrads, ConvWeights};
pub use elementwise::{add, channel_permute, invert_permutation};
pub use linear::{fully_connected, fully_connected_backward};
pub use norm::{batch_norm, batch_norm_backward, NormMode, NormOutput, NormStats};
pub use pool::{global_avg_pool, global_avg_pool_backward};
pub use upsample::{bilinear_upsample_x2, bilinear_upsample_x2_backward};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pool_of_constant_is_constant() {
        let x = Tensor::<f32>::full(Shape::new(2, 3, 5, 7), 2.5);
        let y = global_avg_pool(&x);
        assert_eq!(y.shape(), Shape::vector(2, 3));
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-6));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let y = softmax(&Tensor::<f64>::zeros(Shape::vector(1, 4)));
        assert_eq!(y.data(), &[0.25; 4]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::<f32>::randn(Shape::vector(5, 11), 4.0, &mut rng);
        let y = softmax(&x);
        for n in 0..5 {
            let row = y.item(n);
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn upsample_constant_map_stays_constant() {
        let x = Tensor::<f32>::full(Shape::new(1, 2, 3, 5), -1.25);
        let y = bilinear_upsample_x2(&x);
        assert_eq!(y.shape(), Shape::new(1, 2, 6, 10));
        assert!(y.data().iter().all(|&v| (v + 1.25).abs() < 1e-6));
    }

    #[test]
    fn eval_batch_norm_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::<f64>::randn(Shape::new(2, 3, 2, 2), 1.0, &mut rng);
        let stats = NormStats {
            gamma: vec![2.0, 0.5, 1.0],
            beta: vec![0.1, -0.2, 0.0],
            running_mean: vec![1.0, 0.0, -1.0],
            running_var: vec![4.0, 1.0, 0.25],
            eps: 0.0,
        };
        let y = batch_norm(&x, &stats, NormMode::Eval).unwrap().output;
        for n in 0..2 {
            for c in 0..3 {
                let a = stats.gamma[c] / stats.running_var[c].sqrt();
                let b = stats.beta[c] - a * stats.running_mean[c];
                for (xv, yv) in x.plane(n, c).iter().zip(y.plane(n, c)) {
                    assert!((a * xv + b - yv).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn permute_then_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f32>::randn(Shape::new(2, 6, 2, 3), 1.0, &mut rng);
        let perm = vec![0, 2, 4, 1, 3, 5];
        let y = channel_permute(&x, &perm).unwrap();
        assert_eq!(y.plane(1, 1), x.plane(1, 2));
        let back = channel_permute(&y, &invert_permutation(&perm)).unwrap();
        assert_eq!(back, x);
    }
}
