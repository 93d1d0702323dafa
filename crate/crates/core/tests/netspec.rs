//! Architecture arithmetic checked against independently computed values.
//!
//! Expected counts were produced by a separate closed-form calculation of the
//! DenseNet layout (stem 7x7 conv + BN, dense layers
//! `2c + 128c + 256 + 36864`, transitions `2c + c * floor(theta c)`, final BN,
//! FC `(in + 1) * out`). The DenseNet-121 figure agrees with the widely
//! published 7,978,856 total minus its 1,025,000-parameter ImageNet classifier.

use crowdprm::netspec::*;

#[test]
fn frozen_parameter_counts() {
    let cases = [
        (densenet121_features(), 6_953_856u64),
        (ccmod_classifier(), 4_796_804),
        (ccmod_regressor(), 5_052_449),
        (ccmod(), 4_796_804 + 5_052_449),
        (cc2p_base(), 5_055_653),
        (cc1p(), 5_200_999),
    ];
    for (d, want) in cases {
        assert_eq!(param_count(&d).unwrap(), want, "{}", d.name);
    }
}

#[test]
fn expansion_preserves_counts_and_block_shapes() {
    for d in builtin_descriptors() {
        let r = propagate(&d).unwrap();
        let e = propagate(&d.expanded().unwrap()).unwrap();
        assert_eq!(r.total_params, e.total_params, "{}", d.name);
        for l in &r.layers {
            assert_eq!(
                e.shape_of(&l.name),
                Some(l.out_shape),
                "{}: {}",
                d.name,
                l.name
            );
        }
        assert_eq!(r.outputs, e.outputs);
    }
}

#[test]
fn sequential_additivity() {
    let d = ccmod_regressor();
    let r = propagate(&d).unwrap();
    let sum: u64 = r.layers.iter().map(|l| l.params).sum();
    assert_eq!(sum, r.total_params);
    // Splitting the chain in two and counting each half separately gives the same total.
    let cut = d.layers.iter().position(|l| l.name == "tl2").unwrap() + 1;
    let first = ArchDescriptor {
        name: "a".into(),
        inputs: d.inputs.clone(),
        layers: d.layers[..cut].to_vec(),
        outputs: vec![],
    };
    let mid = r.shape_of("tl2").unwrap();
    let second = ArchDescriptor {
        name: "b".into(),
        inputs: vec![GraphInput {
            name: "tl2".into(),
            shape: mid,
        }],
        layers: d.layers[cut..].to_vec(),
        outputs: vec![],
    };
    assert_eq!(
        param_count(&first).unwrap() + param_count(&second).unwrap(),
        r.total_params
    );
}

#[test]
fn cstem_and_head_chains() {
    let r = propagate(&cc1p()).unwrap();
    let s = |n: &str| r.shape_of(n).unwrap();
    assert_eq!(s("db2"), Shape::new(512, 28, 28));
    assert_eq!(s("head.conv1"), Shape::new(64, 28, 28));
    assert_eq!(s("head.pool"), Shape::new(64, 14, 14));
    assert_eq!(s("head.conv2"), Shape::new(32, 7, 7));
    assert_eq!(s("head.fc"), Shape::new(4, 1, 1));
    assert_eq!(s("cstem.conv1"), Shape::new(64, 112, 112));
    assert_eq!(s("cstem.conv2"), Shape::new(32, 56, 56));
    assert_eq!(s("cstem.pool1"), Shape::new(32, 28, 28));
    assert_eq!(s("cstem.db"), Shape::new(128, 28, 28));
    assert_eq!(s("cstem.pool2"), Shape::new(128, 14, 14));
    assert_eq!(s("tl2"), Shape::new(128, 14, 14));
    assert_eq!(s("concat"), Shape::new(256, 14, 14));
}
