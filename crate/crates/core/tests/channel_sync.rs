use std::io::Cursor;

use covband::channel::{self, InitialBuffer, Receiver, Transmitter};
use covband::ekfgen::{generate_dataset, synth_trajectories, VehicleModel};
use covband::metrics::{run_experiment, RunOptions};
use covband::{Deviation, Error, SymMatrix, TriggerPlan, TriggerSpec};

fn sequences() -> Vec<Vec<SymMatrix>> {
    generate_dataset(&synth_trajectories(8, 150, 31), &VehicleModel::default(), 31).unwrap()
}

#[test]
fn byte_stream_keeps_receiver_in_sync() {
    let data = sequences();
    let plan = TriggerPlan::new(&TriggerSpec::absolute_capped(9e-5, 7), 5).unwrap();
    for seq in &data {
        let mut tx = Transmitter::new(plan.clone(), &InitialBuffer::Identity).unwrap();
        let mut wire = Vec::new();
        for p in seq {
            channel::write_frame(&mut wire, &tx.step(p).unwrap()).unwrap();
        }
        let mut rx = Receiver::new(plan.clone(), &InitialBuffer::Identity).unwrap();
        let mut reader = Cursor::new(wire);
        let mut k = 0;
        while let Some(frame) = channel::read_frame(&mut reader).unwrap() {
            let r = rx.step(&frame).unwrap();
            assert!(r.p_hat().sub(&seq[k]).unwrap().is_psd(1e-9));
            k += 1;
        }
        assert_eq!(k, seq.len());
        assert_eq!(rx.buffer(), tx.buffer());
    }
}

#[test]
fn dropped_frame_is_detected() {
    let seq = &sequences()[0];
    let plan = TriggerPlan::new(&TriggerSpec::absolute(1e-4), 5).unwrap();
    let mut tx = Transmitter::new(plan.clone(), &InitialBuffer::Zero).unwrap();
    let mut rx = Receiver::new(plan, &InitialBuffer::Zero).unwrap();
    let first = tx.step(&seq[0]).unwrap();
    let _lost = tx.step(&seq[1]).unwrap();
    let third = tx.step(&seq[2]).unwrap();
    rx.step(&first).unwrap();
    let err = rx.step(&third).unwrap_err();
    assert!(matches!(err, Error::OutOfOrder { expected: 2, got: 3 }));
}

#[test]
fn sharper_triggers_send_more() {
    let data = sequences();
    let medians: Vec<f64> = [3e-5, 9e-5, 3e-4]
        .iter()
        .map(|&t| {
            let plan = TriggerPlan::new(&TriggerSpec::absolute(t), 5).unwrap();
            let runs = run_experiment(&data, &plan, &InitialBuffer::Zero, RunOptions { check_psd: true }).unwrap();
            let mut sent: Vec<usize> = runs.iter().flatten().map(|s| s.sent).collect();
            sent.sort_unstable();
            sent[sent.len() / 2] as f64
        })
        .collect();
    assert!(medians.windows(2).all(|w| w[0] >= w[1]), "{medians:?}");
}

#[test]
fn subset_layout_with_mixed_triggers() {
    let data = sequences();
    let position: Vec<(usize, usize)> = vec![(0, 0), (0, 1), (1, 1)];
    let rest: Vec<(usize, usize)> = (0..5)
        .flat_map(|i| (i..5).map(move |j| (i, j)))
        .filter(|p| !position.contains(p))
        .collect();
    let plan = TriggerPlan::from_rules(
        &[
            TriggerSpec::subset(position, TriggerSpec::relative(1e-3)),
            TriggerSpec::subset(rest, TriggerSpec::n_most(3, Deviation::Absolute)),
        ],
        5,
    )
    .unwrap();
    let runs = run_experiment(&data, &plan, &InitialBuffer::Zero, RunOptions { check_psd: true }).unwrap();
    assert!(runs.iter().flatten().all(|s| s.sent >= 3 && s.sent <= 6));
}
