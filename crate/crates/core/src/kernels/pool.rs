use crate::error::{dim_err, Result};
use crate::tensor::{Real, Shape, Tensor};

pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let inv = T::one() / T::of(s.plane() as f64);
    let data = (0..s.n * s.c)
        .map(|i| input.data()[i * s.plane()..(i + 1) * s.plane()].iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec(Shape::vector(s.n, s.c), data).expect("pool shape")
}

pub fn global_avg_pool_backward<T: Real>(input_shape: Shape, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != Shape::vector(input_shape.n, input_shape.c) {
        return Err(dim_err!("pool grad_out shape {} mismatch", grad_out.shape()));
    }
    let inv = T::one() / T::of(input_shape.plane() as f64);
    Ok(Tensor::from_fn(input_shape, |n, c, _, _| grad_out.at(n, c, 0, 0) * inv))
}
