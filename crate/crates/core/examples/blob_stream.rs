//! Builds the default ring-of-blobs stream and prints how classes map to
//! tasks.
//!
//!     cargo run --example blob_stream

use classil::data::{make_blob_stream, BlobSpec, Layout};

fn main() -> classil::Result<()> {
    // ten classes on a ring in 16 dimensions, two classes per task
    let spec = BlobSpec::ring(10, 16, 5.0, 1.0, 200, 50, 7).shifted(3.0);
    let stream = make_blob_stream(&spec, Layout::new(5, 2)?)?;
    println!(
        "{} tasks, {} classes, d = {}",
        stream.num_tasks(),
        stream.num_classes(),
        stream.feature_dim()
    );
    for (t, task) in stream.tasks().iter().enumerate() {
        println!(
            "task {t}: classes {:?}, {} train / {} test",
            task.class_ids,
            task.train.len(),
            task.test.len()
        );
    }
    let first = &stream.task(0).train[0];
    println!("first sample of class {}: {:.2?}", first.label, &first.features[..4]);

    // regeneration from the spec is bitwise identical
    let again = make_blob_stream(&spec, stream.layout())?;
    assert_eq!(stream.tasks(), again.tasks());
    Ok(())
}
