use fedpaw_tensor::{ParamEntry, ParamSet, Tensor};
use proptest::prelude::*;

fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..5, 0..4)
}

fn tensor_strategy() -> impl Strategy<Value = Tensor> {
    shape_strategy().prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop::collection::vec(-1e6f64..1e6, n)
            .prop_map(move |data| Tensor::new(shape.clone(), data).unwrap())
    })
}

fn paramset_strategy() -> impl Strategy<Value = ParamSet> {
    prop::collection::vec((tensor_strategy(), any::<bool>()), 1..6).prop_map(|parts| {
        let mut layer = 1;
        let entries = parts
            .into_iter()
            .enumerate()
            .map(|(i, (tensor, bump))| {
                if i > 0 && bump {
                    layer += 1;
                }
                ParamEntry {
                    layer,
                    name: format!("p{i}.wé"),
                    tensor: tensor.with_grad(true),
                }
            })
            .collect();
        ParamSet::new(entries).unwrap()
    })
}

proptest! {
    #[test]
    fn flatten_reshape_roundtrip(t in tensor_strategy()) {
        let back = t.flatten().reshape(t.shape()).unwrap();
        prop_assert!(back.bit_eq(&t));
        prop_assert_eq!(back, t);
    }

    #[test]
    fn binary_roundtrip_preserves_count_and_bits(set in paramset_strategy()) {
        let bytes = set.to_bytes().unwrap();
        let back = ParamSet::from_bytes(&bytes).unwrap();
        prop_assert!(back.bit_eq(&set));
        prop_assert_eq!(back.num_params(), set.num_params());
        prop_assert_eq!(back.layer_count(), set.layer_count());
    }
}
