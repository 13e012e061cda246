//! Set metrics on hand-sized inputs.

use raremed::data::DdiGraph;
use raremed::metrics::{ddi_rate, jaccard, prauc, precision_recall_f1};

fn main() -> raremed::Result<()> {
    let truth = [true, false, true, false];
    let pred = [true, true, false, false];
    println!("jaccard {:.4}", jaccard(&truth, &pred)?);
    let prf = precision_recall_f1(&truth, &pred)?;
    println!("precision {:.4} recall {:.4} f1 {:.4}", prf.precision, prf.recall, prf.f1);

    println!("prauc perfect ranking  {}", prauc(&[0.9, 0.1, 0.5], &[true, false, true])?);
    println!("prauc inverted ranking {}", prauc(&[0.9, 0.1], &[false, true])?);

    let graph = DdiGraph::from_edges(4, [(0, 2)]);
    println!("ddi rate of {{0,1,2}}: {:.4}", ddi_rate(&[true, true, true, false], &graph));
    println!("ddi rate of {{1}}:     {}", ddi_rate(&[false, true, false, false], &graph));
    Ok(())
}
