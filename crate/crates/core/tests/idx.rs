use std::path::PathBuf;

use classil::data::{load_idx_stream, read_images, read_labels, IdxPair, Layout};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/mnist5k").join(name)
}

fn pairs() -> (IdxPair, IdxPair) {
    (
        IdxPair::new(data("train-images-idx3-ubyte.gz"), data("train-labels-idx1-ubyte.gz")),
        IdxPair::new(data("t10k-images-idx3-ubyte.gz"), data("t10k-labels-idx1-ubyte.gz")),
    )
}

#[test]
fn bundled_digits_have_the_expected_shape() {
    let images = read_images(data("train-images-idx3-ubyte.gz")).unwrap();
    let labels = read_labels(data("train-labels-idx1-ubyte.gz")).unwrap();
    assert_eq!((images.count, images.rows, images.cols), (4000, 28, 28));
    assert_eq!(labels.len(), 4000);
    for c in 0..10u8 {
        assert_eq!(labels.iter().filter(|&&l| l == c).count(), 400);
    }
}

#[test]
fn split_digits_follow_label_order() {
    let (train, test) = pairs();
    let stream = load_idx_stream(&train, &test, Layout::new(5, 2).unwrap(), 120).unwrap();
    assert_eq!(stream.feature_dim(), 784);
    for t in 0..5 {
        let task = stream.task(t);
        assert_eq!(task.train.len(), 240);
        assert_eq!(task.test.len(), 200);
        assert!(task.train.iter().all(|s| s.label / 2 == t));
    }
    let pixels: Vec<f64> = stream.train_samples().flat_map(|s| s.features.iter().copied()).collect();
    assert!(pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(pixels.contains(&1.0));
}

#[test]
fn subsampling_keeps_the_first_samples() {
    let (train, test) = pairs();
    let layout = Layout::new(5, 2).unwrap();
    let small = load_idx_stream(&train, &test, layout, 10).unwrap();
    let large = load_idx_stream(&train, &test, layout, 50).unwrap();
    for t in 0..5 {
        for class in layout.classes_of(t) {
            let a: Vec<_> = small.task(t).train.iter().filter(|s| s.label == class).collect();
            let b: Vec<_> = large.task(t).train.iter().filter(|s| s.label == class).take(10).collect();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn mismatched_files_are_rejected() {
    let (train, test) = pairs();
    let crossed = IdxPair::new(train.images.clone(), test.labels.clone());
    assert!(load_idx_stream(&crossed, &test, Layout::new(5, 2).unwrap(), 10).is_err());
    assert!(load_idx_stream(&train, &test, Layout::new(5, 2).unwrap(), 0).is_err());
}
