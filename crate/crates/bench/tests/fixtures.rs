use gaitopt_bench::{centre, dataset, peak};

#[test]
fn dataset_is_reproducible_and_in_range() {
    let (x, y) = dataset(40, 3);
    assert_eq!((x.len(), y.len()), (40, 40));
    assert!(x.iter().flatten().all(|v| (0.0..1.0).contains(v)));
    assert!(y.iter().all(|v| *v > 0.0 && *v <= 1.0));
    assert_eq!(dataset(40, 3), (x, y));
}

#[test]
fn peak_tops_out_at_its_centre() {
    assert_eq!(peak(&[0.3, 0.6, 0.5, 0.4, 0.7]), 1.0);
    assert!(peak(&[0.5; 5]) < 1.0);
    centre().validate().unwrap();
}
