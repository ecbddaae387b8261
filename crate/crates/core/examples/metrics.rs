//! Detection F1 by greedy point matching and per-image count accuracy.
//!
//! cargo run --release --example metrics

use ganglionet::annotation::Point;
use ganglionet::eval::{count_accuracy, detection_f1, CountRecord, DetectionScore, DEFAULT_MATCH_RADIUS};

fn main() -> ganglionet::Result<()> {
    let manual = [Point::new(100, 100), Point::new(200, 100), Point::new(300, 300)];
    // two near hits, one region counted twice, one far miss
    let predicted = [(104.0, 97.0), (190.0, 110.0), (190.0, 110.0), (600.0, 50.0)];
    let s = detection_f1(&predicted, &manual, DEFAULT_MATCH_RADIUS);
    println!(
        "tp {} fp {} fn {}  precision {:.3} recall {:.3} F1 {:.3}",
        s.true_positives, s.false_positives, s.false_negatives, s.precision, s.recall, s.f1
    );
    let pooled = DetectionScore::combine(&[s, DetectionScore::from_counts(10, 0, 1)]);
    println!("pooled with a second image: F1 {:.3}", pooled.f1);

    let records = [("a", 40, 38), ("b", 12, 13), ("c", 0, 2)].map(|(id, manual, predicted)| CountRecord {
        image_id: id.into(),
        manual,
        predicted,
    });
    let acc = count_accuracy(&records)?;
    for (id, a) in &acc.per_image {
        println!("{id}: {a:?}");
    }
    println!("aggregate {:?}, excluded {:?}", acc.aggregate, acc.excluded);
    Ok(())
}
