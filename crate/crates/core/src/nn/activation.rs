use crate::error::Result;
use crate::tensor::Tensor4;

pub fn relu(x: &Tensor4) -> Tensor4 {
    x.map(|v| v.max(0.0))
}

/// Passes `dy` through where the forward input was strictly positive.
pub fn relu_backward(x: &Tensor4, dy: &Tensor4) -> Result<Tensor4> {
    x.zip_with(dy, |v, g| if v > 0.0 { g } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn saturated_regions() {
        let neg = Tensor4::new((1, 2, 2, 2), -0.5).unwrap();
        let dy = Tensor4::new(neg.shape(), 3.0).unwrap();
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        assert!(relu_backward(&neg, &dy)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));

        let pos = Tensor4::new((1, 2, 2, 2), 0.5).unwrap();
        assert_eq!(relu(&pos), pos);
        assert_eq!(relu_backward(&pos, &dy).unwrap(), dy);
    }

    #[test]
    fn mixed_input_matches_elementwise_loop() {
        let mut rng = Rng::new(1);
        let x = Tensor4::randn((2, 3, 3, 3), 0.0, 1.0, &mut rng).unwrap();
        let dy = Tensor4::randn(x.shape(), 0.0, 1.0, &mut rng).unwrap();
        let y = relu(&x);
        let dx = relu_backward(&x, &dy).unwrap();
        for i in 0..x.len() {
            let v = x.data()[i];
            assert_eq!(y.data()[i], if v > 0.0 { v } else { 0.0 });
            assert_eq!(dx.data()[i], if v > 0.0 { dy.data()[i] } else { 0.0 });
        }
    }
}
