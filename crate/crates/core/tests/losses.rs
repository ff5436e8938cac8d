mod common;

use cogforest::loss::{assign_center, CenterIndex};
use cogforest::{build_clf, extract_centers, mctl, Batch, FeatureMatrix, Metric, Radii};

use common::*;

#[test]
fn multi_center_gradient_matches_differences() {
    let mut r = rng(20);
    for _ in 0..20 {
        let b = random_batch(&mut r);
        let err = max_gradient_error(&b, false, 1e-5);
        assert!(err < 1e-5, "relative error {err:e}");
    }
}

#[test]
fn triplet_gradient_matches_differences() {
    let mut r = rng(21);
    for _ in 0..20 {
        let b = random_batch(&mut r);
        let err = max_gradient_error(&b, true, 1e-5);
        assert!(err < 1e-5, "relative error {err:e}");
    }
}

#[test]
fn losses_scale_linearly_in_alpha() {
    let mut r = rng(22);
    let mut b = random_batch(&mut r);
    b.alpha = 0.0;
    let base = b.eval(&b.features, false).breakdown;
    b.alpha = 2.0;
    let doubled = b.eval(&b.features, false).breakdown;
    assert_eq!(base.cls_term, doubled.cls_term);
    assert!((doubled.total - (base.cls_term + 2.0 * base.ifl_term)).abs() < 1e-12);
}

#[test]
fn triplet_needs_two_classes() {
    let mut r = rng(23);
    let mut b = random_batch(&mut r);
    b.centers.classes.retain(|&c, _| c == 0);
    b.labels.iter_mut().for_each(|l| *l = 0);
    b.refs.iter_mut().for_each(|c| {
        c.class = 0;
        c.index = 0;
    });
    assert!(mctl(&b.batch(), &b.centers, &b.classifier, 1.0, 0.0).is_err());
}

#[test]
fn centers_are_root_prototype_features() {
    let rows = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![5.0, 5.0], vec![5.1, 5.0], vec![5.0, 5.1]];
    let ids: Vec<String> = (0..5).map(|i| format!("p{i}")).collect();
    let x = FeatureMatrix::new(ids, rows, Some(vec![3; 5])).unwrap();
    let f = build_clf(&x, Radii::new(1.0, 0.5).unwrap(), Metric::Euclidean).unwrap().forest;
    let centers = extract_centers(std::slice::from_ref(&f), &x).unwrap();
    assert_eq!(centers.count(3), f.num_trees());
    for (k, &root) in f.roots().iter().enumerate() {
        let c = &centers.classes[&3][k];
        assert_eq!(c.tree_root_id, root);
        assert_eq!(c.vector, x.row(f.node(root).prototype));
    }
    let index = CenterIndex::new(std::slice::from_ref(&f), &centers).unwrap();
    for id in x.ids() {
        let r = index.get(id).unwrap();
        assert_eq!(r, assign_center(id, std::slice::from_ref(&f), &centers).unwrap());
        let local = f.local_index(id).unwrap();
        assert_eq!(centers.get(r).unwrap().tree_root_id, f.root_of(f.node_of(local)));
    }
}

#[test]
fn batch_shape_errors_are_reported() {
    let mut r = rng(24);
    let b = random_batch(&mut r);
    let short = &b.features[..b.features.len() - 1];
    let bad = Batch { features: short, ..b.batch() };
    assert!(cogforest::mcl(&bad, &b.centers, &b.classifier, 0.5).is_err());
}
