//! Acceptance suite: one line per criterion, non-zero exit on any failure.
//!
//! Criterion 10 runs only when `EAGERNET_AC10_CSV` points at a labeled
//! feature CSV (the `eagernet prepare` input format) with at least 100 000
//! flows. `EAGERNET_AC10_EPOCHS` sets its training budget (default 20).

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use eagernet_core::baseline::{train_plain, PlainFcnn};
use eagernet_core::dataset::{
    read_feature_csv, Dataset, LabelMode, Labels, PrepareOptions, SplitPart, Subset,
};
use eagernet_core::flowmeter::{
    meter_trace, FlowKey, FlowTable, FlowTableConfig, PacketRecord, BWD_OFFSET, FEATURE_COUNT,
    FWD_OFFSET, TCP,
};
use eagernet_core::metrics::{
    binary_metrics, default_grid, layer_class_accuracy, threshold_sweep, BinaryCounts,
};
use eagernet_core::model::{EagerNet, ModelConfig};
use eagernet_core::nn::Matrix;
use eagernet_core::synthetic::{packet_trace, CheckerTask};
use eagernet_core::trainer::{
    bce_loss, cce_loss, combined_backward, combined_loss, forward_with_tape, last_head_predictions,
    loss_weight_fractions, loss_weights, train, BackpropMode, TrainConfig, Trainer,
    WeightScheme,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = Result<Outcome, String>;

fn verdict(ok: bool, detail: String) -> Check {
    Ok(if ok { Outcome::Pass(detail) } else { Outcome::Fail(detail) })
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

// ---------------------------------------------------------------- AC1

fn param_slot(model: &mut EagerNet, layer: usize, p: usize) -> &mut f64 {
    let n_hidden = model.hidden.len();
    let l = if layer < n_hidden { &mut model.hidden[layer] } else { &mut model.heads[layer - n_hidden] };
    let w = l.weights.as_slice().len();
    if p < w {
        &mut l.weights.as_mut_slice()[p]
    } else {
        &mut l.bias[p - w]
    }
}

fn finite_difference_worst(mode: LabelMode, classes: usize, seed: u64) -> Result<(usize, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = EagerNet::init(ModelConfig::new(6, 2, 8, mode, classes), seed).map_err(err)?;
    let n = 12;
    let x = Matrix::from_vec(n, 6, (0..n * 6).map(|_| rng.gen_range(-2.0..2.0)).collect()).map_err(err)?;
    let targets = match mode {
        LabelMode::Binary => Labels::Binary((0..n).map(|_| rng.gen_range(0..2) as f64).collect()),
        LabelMode::Multiclass => {
            let mut m = Matrix::zeros(n, classes);
            for r in 0..n {
                m.set(r, rng.gen_range(0..classes), 1.0);
            }
            Labels::OneHot(m)
        }
    };
    let weights = loss_weights(2, WeightScheme::Increasing).map_err(err)?;
    let tape = forward_with_tape::<ChaCha8Rng>(&model, &x, None).map_err(err)?;
    let analytic = combined_backward(&model, &tape, &targets, &weights, BackpropMode::Full)
        .map_err(err)?
        .grads
        .flatten();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut idx = 0;
    let layers = model.hidden.len() + model.heads.len();
    for layer in 0..layers {
        let count = model.parameters().nth(layer).map(|l| l.param_count()).unwrap_or(0);
        for p in 0..count {
            let orig = *param_slot(&mut model, layer, p);
            *param_slot(&mut model, layer, p) = orig + h;
            let up = combined_loss(&model, &x, &targets, &weights).map_err(err)?;
            *param_slot(&mut model, layer, p) = orig - h;
            let down = combined_loss(&model, &x, &targets, &weights).map_err(err)?;
            *param_slot(&mut model, layer, p) = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max(rel);
            idx += 1;
        }
    }
    if idx != analytic.len() {
        return Err(format!("{idx} parameters probed, {} analytic", analytic.len()));
    }
    Ok((idx, worst))
}

fn ac1() -> Check {
    let start = Instant::now();
    let (nb, wb) = finite_difference_worst(LabelMode::Binary, 2, 11)?;
    let (nm, wm) = finite_difference_worst(LabelMode::Multiclass, 3, 12)?;
    let t = start.elapsed();
    verdict(
        wb < 1e-4 && wm < 1e-4 && within(t, 10.0),
        format!("binary {nb} params max rel {wb:.2e}; 3-class {nm} params max rel {wm:.2e}; {t:.2?}"),
    )
}

// ---------------------------------------------------------------- AC2

fn naive_bce(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let p = 1.0 / (1.0 + (-xi).exp());
        s += -(yi * p.ln() + (1.0 - yi) * (1.0 - p).ln());
    }
    s / x.len() as f64
}

fn naive_cce(z: &[Vec<f64>], hot: &[usize]) -> f64 {
    let mut s = 0.0;
    for (row, &k) in z.iter().zip(hot) {
        let denom: f64 = row.iter().map(|v| v.exp()).sum();
        s += -(row[k].exp() / denom).ln();
    }
    s / z.len() as f64
}

fn ac2() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..64);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-12.0..12.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
        let (l, _) = bce_loss(&x, &y).map_err(err)?;
        worst = worst.max((l - naive_bce(&x, &y)).abs());

        let c = rng.gen_range(2..8);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..c).map(|_| rng.gen_range(-12.0..12.0)).collect()).collect();
        let hot: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let mut onehot = Matrix::zeros(n, c);
        for (r, &k) in hot.iter().enumerate() {
            onehot.set(r, k, 1.0);
        }
        let (l, _) = cce_loss(&Matrix::from_rows(&rows).map_err(err)?, &onehot).map_err(err)?;
        worst = worst.max((l - naive_cce(&rows, &hot)).abs());
    }
    let ln2 = bce_loss(&[0.0], &[1.0]).map_err(err)?.0;
    let mut onehot = Matrix::zeros(1, 4);
    onehot.set(0, 2, 1.0);
    let ln4 = cce_loss(&Matrix::zeros(1, 4), &onehot).map_err(err)?.0;
    let hand = (ln2 - 2f64.ln()).abs().max((ln4 - 4f64.ln()).abs());
    let t = start.elapsed();
    verdict(
        worst < 1e-10 && hand < 1e-12 && within(t, 5.0),
        format!("2000 batches max |diff| {worst:.2e}; ln2/ln4 diff {hand:.1e}; {t:.2?}"),
    )
}

// ---------------------------------------------------------------- AC3

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn reduced(n: u128, d: u128) -> (u128, u128) {
    let g = gcd(n, d);
    (n / g, d / g)
}

fn ac3() -> Check {
    let start = Instant::now();
    let mut bad = Vec::new();
    for l in 1..=16u128 {
        let tri = l * (l + 1) / 2;
        for scheme in [WeightScheme::Uniform, WeightScheme::Increasing, WeightScheme::Decreasing] {
            let got = loss_weight_fractions(l as usize, scheme).map_err(err)?;
            let floats = loss_weights(l as usize, scheme).map_err(err)?;
            let (mut sn, mut sd) = (0u128, 1u128);
            for (i, &(n, d)) in got.iter().enumerate() {
                let i = i as u128;
                let want = match scheme {
                    WeightScheme::Uniform => (1, l),
                    WeightScheme::Increasing => (i + 1, tri),
                    WeightScheme::Decreasing => (l - i, tri),
                };
                if reduced(n as u128, d as u128) != reduced(want.0, want.1) {
                    bad.push(format!("L={l} {scheme:?} head {i}"));
                }
                if floats.as_slice()[i as usize] != n as f64 / d as f64 {
                    bad.push(format!("L={l} {scheme:?} head {i} float"));
                }
                (sn, sd) = reduced(sn * d as u128 + n as u128 * sd, sd * d as u128);
            }
            if (sn, sd) != (1, 1) {
                bad.push(format!("L={l} {scheme:?} sums to {sn}/{sd}"));
            }
        }
    }
    let l3 = |s| loss_weight_fractions(3, s).unwrap();
    let spot = l3(WeightScheme::Uniform) == vec![(1, 3); 3]
        && l3(WeightScheme::Increasing) == vec![(1, 6), (2, 6), (3, 6)]
        && l3(WeightScheme::Decreasing) == vec![(3, 6), (2, 6), (1, 6)];
    let t = start.elapsed();
    verdict(
        bad.is_empty() && spot && within(t, 1.0),
        format!("48 schedules exact; L=3 spot check {spot}; mismatches {bad:?}; {t:.2?}"),
    )
}

// ---------------------------------------------------------------- AC4, AC5

fn small_trained() -> Result<(EagerNet, Subset), String> {
    let task = CheckerTask {
        samples: 6000,
        ..CheckerTask::default()
    };
    let ds = checker_dataset(&task, 4)?;
    let mut cfg = TrainConfig::new(LabelMode::Multiclass, 5, 32);
    cfg.epochs = 30;
    cfg.seed = 4;
    let (model, _) = train(
        cfg,
        &ds.subset(SplitPart::Train),
        &ds.subset(SplitPart::Val),
        &ds.classes,
        &ds.normalization,
    )
    .map_err(err)?;
    Ok((model, ds.subset(SplitPart::Test)))
}

fn ac4(model: &EagerNet, test: &Subset) -> Check {
    let full = last_head_predictions(model, &test.features).map_err(err)?;
    let mut agree = 0;
    let mut exits = 0;
    for (i, &want) in full.iter().enumerate() {
        let p = model.forward_eager(test.features.row(i), 1.0).map_err(err)?;
        agree += (p.class == want) as usize;
        exits += p.exit_layer;
    }
    let mean_exit = exits as f64 / test.len() as f64;
    verdict(
        agree == test.len() && mean_exit == model.depth() as f64,
        format!("{agree}/{} agree at threshold 1.0; mean exit {mean_exit} of {}", test.len(), model.depth()),
    )
}

fn ac5(model: &EagerNet, test: &Subset) -> Check {
    let grid = default_grid(model, 101);
    let mut prev: Option<Vec<usize>> = None;
    let mut sample_violations = 0;
    let mut means = Vec::new();
    for &t in &grid {
        let exits: Vec<usize> = (0..test.len())
            .map(|i| model.forward_eager(test.features.row(i), t).map(|p| p.exit_layer))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        if let Some(p) = &prev {
            sample_violations += p.iter().zip(&exits).filter(|(a, b)| b < a).count();
        }
        means.push(exits.iter().sum::<usize>() as f64 / exits.len() as f64);
        prev = Some(exits);
    }
    let mean_violations = means.windows(2).filter(|w| w[1] < w[0]).count();
    let sweep = threshold_sweep(model, test, &grid).map_err(err)?;
    let sweep_agrees = sweep.points.iter().zip(&means).all(|(p, m)| p.mean_exit_layer == *m);
    verdict(
        sample_violations == 0 && mean_violations == 0 && sweep_agrees,
        format!(
            "{} grid points x {} samples: {sample_violations} per-sample and {mean_violations} mean violations; mean exit {:.3} -> {:.3}",
            grid.len(),
            test.len(),
            means[0],
            means[means.len() - 1]
        ),
    )
}

// ---------------------------------------------------------------- AC6

fn ac6() -> Check {
    let task = CheckerTask {
        samples: 2000,
        ..CheckerTask::default()
    };
    let ds = checker_dataset(&task, 6)?;
    let train_set = ds.subset(SplitPart::Train);
    let mut cfg = TrainConfig::new(LabelMode::Multiclass, 3, 16);
    cfg.epochs = 50;
    cfg.seed = 6;
    cfg.custom_weights = Some(vec![0.0, 0.0, 1.0]);

    let mut trainer = Trainer::new(cfg.clone(), train_set.features.cols(), &ds.classes).map_err(err)?;
    let mut eager_traj = Vec::new();
    for _ in 0..cfg.epochs {
        trainer.run_epoch(&train_set).map_err(err)?;
        eager_traj.push(trainer.model.hidden.clone());
    }
    let mut plain_traj = Vec::new();
    let plain = train_plain(&cfg, &train_set, &ds.classes, |_, net: &PlainFcnn| plain_traj.push(net.hidden.clone()))
        .map_err(err)?;
    let bits = |layers: &[eagernet_core::nn::DenseLayer]| -> Vec<u64> {
        layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(&l.bias).map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect()
    };
    let diverged = eager_traj
        .iter()
        .zip(&plain_traj)
        .position(|(a, b)| bits(a) != bits(b));
    let heads_match = bits(std::slice::from_ref(&trainer.model.heads[2])) == bits(std::slice::from_ref(&plain.output));
    verdict(
        diverged.is_none() && plain_traj.len() == cfg.epochs && heads_match,
        format!(
            "{} epochs compared, first divergence {:?}; last head == plain output {heads_match}",
            plain_traj.len(),
            diverged.map(|e| e + 1)
        ),
    )
}

// ---------------------------------------------------------------- AC7

/// Independent reference: bucket packets by canonical key, split on idle
/// gaps, then recompute every statistic with two-pass formulas.
fn naive_meter(packets: &[PacketRecord], timeout: f64) -> Vec<(f64, String, [f64; FEATURE_COUNT])> {
    let mut open: BTreeMap<String, Vec<&PacketRecord>> = BTreeMap::new();
    let mut done: Vec<Vec<&PacketRecord>> = Vec::new();
    for p in packets {
        let key = format!("{:?}", FlowKey::of(p));
        if let Some(list) = open.get(&key) {
            if p.timestamp - list.last().unwrap().timestamp > timeout {
                done.push(open.remove(&key).unwrap());
            }
        }
        open.entry(key).or_default().push(p);
    }
    done.extend(open.into_values());
    let stats = |v: &[f64]| -> [f64; 4] {
        if v.is_empty() {
            return [0.0; 4];
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let min = v.iter().cloned().fold(f64::MAX, f64::min);
        let max = v.iter().cloned().fold(f64::MIN, f64::max);
        [mean, min, max, var.sqrt()]
    };
    done.into_iter()
        .map(|flow| {
            let first = flow[0];
            let mut f = [0.0; FEATURE_COUNT];
            f[0] = (flow.last().unwrap().timestamp - first.timestamp) * 1000.0;
            f[1] = first.src_port as f64;
            f[2] = first.dst_port as f64;
            f[3] = first.protocol as f64;
            f[4] = flow.iter().map(|p| p.ip_total_length as f64).sum();
            for (offset, fwd) in [(FWD_OFFSET, true), (BWD_OFFSET, false)] {
                let dir: Vec<&&PacketRecord> = flow
                    .iter()
                    .filter(|p| (p.src_ip == first.src_ip && p.src_port == first.src_port) == fwd)
                    .collect();
                let lens: Vec<f64> = dir.iter().map(|p| p.ip_total_length as f64).collect();
                let gaps: Vec<f64> = dir.windows(2).map(|w| w[1].timestamp - w[0].timestamp).collect();
                f[offset..offset + 4].copy_from_slice(&stats(&lens));
                f[offset + 4..offset + 8].copy_from_slice(&stats(&gaps));
                f[offset + 8] = dir.len() as f64;
                f[offset + 9] = dir.iter().filter(|p| p.syn).count() as f64;
                f[offset + 10] = dir.iter().filter(|p| p.ack).count() as f64;
                f[offset + 11] = dir.iter().filter(|p| p.fin).count() as f64;
                f[offset + 12] = dir.iter().filter(|p| p.cwr).count() as f64;
            }
            (first.timestamp, format!("{:?}", FlowKey::of(first)), f)
        })
        .collect()
}

fn metered(packets: &[PacketRecord], timeout: f64) -> Result<Vec<(f64, String, [f64; FEATURE_COUNT])>, String> {
    let cfg = FlowTableConfig {
        timeout,
        ..FlowTableConfig::default()
    };
    Ok(meter_trace(packets, cfg)
        .map_err(err)?
        .into_iter()
        .map(|f| (f.first_timestamp, format!("{:?}", f.key), f.features.0))
        .collect())
}

fn sorted(mut v: Vec<(f64, String, [f64; FEATURE_COUNT])>) -> Vec<(f64, String, [f64; FEATURE_COUNT])> {
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    v
}

fn max_diff(a: &[(f64, String, [f64; FEATURE_COUNT])], b: &[(f64, String, [f64; FEATURE_COUNT])]) -> Option<f64> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.1 != y.1) {
        return None;
    }
    Some(
        a.iter()
            .zip(b)
            .flat_map(|(x, y)| x.2.iter().zip(&y.2).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max),
    )
}

fn random_trace(rng: &mut ChaCha8Rng) -> Vec<PacketRecord> {
    let hosts = ["10.0.0.1", "10.0.0.2", "10.0.0.3", "10.0.0.4"];
    let mut t = 0.0;
    (0..rng.gen_range(1..60))
        .map(|_| {
            t += if rng.gen_bool(0.05) { rng.gen_range(1500.0..2500.0) } else { rng.gen_range(0.0..5.0) };
            let a = rng.gen_range(0..4);
            let b = (a + rng.gen_range(1..4)) % 4;
            let tcp = rng.gen_bool(0.7);
            PacketRecord {
                timestamp: t,
                src_ip: hosts[a].into(),
                dst_ip: hosts[b].into(),
                src_port: rng.gen_range(1..4),
                dst_port: rng.gen_range(1..4),
                protocol: if tcp { TCP } else { 17 },
                ip_total_length: rng.gen_range(20..1500),
                syn: tcp && rng.gen(),
                ack: tcp && rng.gen(),
                fin: tcp && rng.gen(),
                cwr: tcp && rng.gen(),
            }
        })
        .collect()
}

fn ac7() -> Check {
    let start = Instant::now();
    // Hand trace: A->B 100 B at 0 s, B->A 60 B at 0.5 s, A->B 40 B at 1 s.
    let mk = |t: f64, fwd: bool, len: u64| {
        let p = PacketRecord {
            timestamp: t,
            src_ip: "10.1.1.1".into(),
            dst_ip: "10.1.1.2".into(),
            src_port: 4000,
            dst_port: 80,
            protocol: TCP,
            ip_total_length: len,
            syn: false,
            ack: true,
            fin: false,
            cwr: false,
        };
        if fwd {
            p
        } else {
            p.reversed()
        }
    };
    let hand = metered(&[mk(0.0, true, 100), mk(0.5, false, 60), mk(1.0, true, 40)], 1800.0)?;
    let mut want = [0.0; FEATURE_COUNT];
    want[..5].copy_from_slice(&[1000.0, 4000.0, 80.0, 6.0, 200.0]);
    want[FWD_OFFSET..FWD_OFFSET + 13]
        .copy_from_slice(&[70.0, 40.0, 100.0, 30.0, 1.0, 1.0, 1.0, 0.0, 2.0, 0.0, 2.0, 0.0, 0.0]);
    want[BWD_OFFSET..BWD_OFFSET + 13]
        .copy_from_slice(&[60.0, 60.0, 60.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    let hand_ok = hand.len() == 1 && hand[0].2.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-9);

    let (synthetic, _) = packet_trace(12, 7);
    let fifty = &synthetic[..50.min(synthetic.len())];
    let golden = max_diff(&sorted(metered(fifty, 1800.0)?), &sorted(naive_meter(fifty, 1800.0)));
    let golden_ok = fifty.len() == 50 && golden.is_some_and(|d| d < 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut sym_fail, mut split_fail, mut oracle_fail) = (0, 0, 0);
    for _ in 0..100 {
        let trace = random_trace(&mut rng);
        let base = metered(&trace, 1800.0)?;
        if max_diff(&sorted(base.clone()), &sorted(naive_meter(&trace, 1800.0))).map_or(true, |d| d >= 1e-9) {
            oracle_fail += 1;
        }
        let reversed: Vec<_> = trace.iter().map(PacketRecord::reversed).collect();
        let rev = metered(&reversed, 1800.0)?;
        let symmetric = rev.len() == base.len()
            && base.iter().zip(&rev).all(|(a, b)| {
                let mut expect = a.2;
                expect.swap(1, 2);
                expect == b.2
            });
        sym_fail += !symmetric as usize;

        let mut table = FlowTable::new(FlowTableConfig::default()).map_err(err)?;
        let mut stepped = Vec::new();
        for p in &trace {
            stepped.extend(table.ingest(p).map_err(err)?);
        }
        stepped.extend(table.flush());
        let whole = meter_trace(&trace, FlowTableConfig::default()).map_err(err)?;
        split_fail += (stepped != whole) as usize;
    }
    let t = start.elapsed();
    verdict(
        hand_ok && golden_ok && sym_fail == 0 && split_fail == 0 && oracle_fail == 0,
        format!(
            "hand trace {hand_ok}; 50-packet golden max diff {golden:?}; 100 random traces: {oracle_fail} oracle, {sym_fail} symmetry, {split_fail} split failures; {t:.2?}"
        ),
    )
}

// ---------------------------------------------------------------- AC8, AC9

const DESK_EPOCHS: usize = 200;
const HARD_CLASS: &str = "stealth";

fn checker_dataset(task: &CheckerTask, seed: u64) -> Result<Dataset, String> {
    Dataset::prepare(
        task.feature_names(),
        task.generate(seed),
        PrepareOptions {
            seed,
            stratify: false,
            val_fraction: 0.1,
        },
    )
    .map_err(err)
}

fn desk_train(ds: &Dataset, seed: u64, mode: BackpropMode) -> Result<EagerNet, String> {
    let mut cfg = TrainConfig::new(LabelMode::Multiclass, 5, 32);
    cfg.epochs = DESK_EPOCHS;
    cfg.seed = seed;
    cfg.backprop_mode = mode;
    let (model, _) = train(
        cfg,
        &ds.subset(SplitPart::Train),
        &ds.subset(SplitPart::Val),
        &ds.classes,
        &ds.normalization,
    )
    .map_err(err)?;
    Ok(model)
}

fn ac8(ds: &Dataset) -> Result<(Outcome, EagerNet), String> {
    let start = Instant::now();
    let model = desk_train(ds, 1, BackpropMode::Full)?;
    let test = ds.subset(SplitPart::Test);
    let matrix = layer_class_accuracy(&model, &test).map_err(err)?;
    let depth = model.depth();
    let last_acc = matrix.overall(depth - 1);
    let sweep = threshold_sweep(&model, &test, &default_grid(&model, 101)).map_err(err)?;
    let budget = 0.6 * depth as f64;
    let best = sweep
        .points
        .iter()
        .filter(|p| p.accuracy >= 0.93 && p.mean_exit_layer <= budget)
        .min_by(|a, b| a.mean_exit_layer.total_cmp(&b.mean_exit_layer));
    let hard = ds.classes.index_of(HARD_CLASS).map_err(err)?;
    let first_hard = matrix.accuracy[0][hard].unwrap_or(f64::NAN);
    let last_hard = matrix.accuracy[depth - 1][hard].unwrap_or(f64::NAN);
    let t = start.elapsed();
    let ok = last_acc >= 0.95 && best.is_some() && last_hard - first_hard >= 0.05 && within(t, 300.0);
    let detail = format!(
        "(a) last-head acc {last_acc:.4}; (b) {}; (c) {HARD_CLASS} head 1 {first_hard:.4} vs head {depth} {last_hard:.4}; {t:.1?}",
        match best {
            Some(p) => format!("threshold {:.3} acc {:.4} mean exit {:.3}", p.threshold, p.accuracy, p.mean_exit_layer),
            None => "no threshold with acc >= 0.93 and mean exit <= 0.6 L".into(),
        }
    );
    Ok((if ok { Outcome::Pass(detail) } else { Outcome::Fail(detail) }, model))
}

fn intermediate_val_accuracy(model: &EagerNet, val: &Subset) -> Result<f64, String> {
    let m = layer_class_accuracy(model, val).map_err(err)?;
    let k = model.depth() - 1;
    Ok((0..k).map(|h| m.overall(h)).sum::<f64>() / k as f64)
}

fn ac9(ds: &Dataset, seed1_full: &EagerNet) -> Check {
    let start = Instant::now();
    let val = ds.subset(SplitPart::Val);
    let mut rows = Vec::new();
    for seed in 1..=3 {
        let full = if seed == 1 {
            intermediate_val_accuracy(seed1_full, &val)?
        } else {
            intermediate_val_accuracy(&desk_train(ds, seed, BackpropMode::Full)?, &val)?
        };
        let one = intermediate_val_accuracy(&desk_train(ds, seed, BackpropMode::OneStep)?, &val)?;
        rows.push((seed, full, one));
    }
    let mean = |f: fn(&(u64, f64, f64)) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    let (full, one) = (mean(|r| r.1), mean(|r| r.2));
    let per_seed: Vec<String> = rows.iter().map(|(s, f, o)| format!("seed {s}: {f:.4} vs {o:.4}")).collect();
    let t = start.elapsed();
    verdict(
        full - one >= 0.0,
        format!("mean intermediate-head val acc full {full:.4} vs one-step {one:.4} ({}); {t:.1?}", per_seed.join(", ")),
    )
}

// ---------------------------------------------------------------- AC10

fn ac10() -> Check {
    let Ok(path) = std::env::var("EAGERNET_AC10_CSV") else {
        return Ok(Outcome::Skip("set EAGERNET_AC10_CSV to a labeled feature CSV to run".into()));
    };
    let start = Instant::now();
    let epochs: usize = std::env::var("EAGERNET_AC10_EPOCHS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(20);
    let file = std::fs::File::open(&path).map_err(|e| format!("{path}: {e}"))?;
    let (names, rows) = read_feature_csv(std::io::BufReader::new(file)).map_err(err)?;
    let flows = rows.len();
    let ds = Dataset::prepare(
        names,
        rows,
        PrepareOptions {
            seed: 1,
            stratify: true,
            val_fraction: 0.1,
        },
    )
    .map_err(err)?;
    let mut cfg = TrainConfig::new(LabelMode::Binary, 5, 32);
    cfg.epochs = epochs;
    cfg.seed = 1;
    let train_set = ds.subset(SplitPart::Train);
    let test = ds.subset(SplitPart::Test);
    let (eager, _) = train(cfg.clone(), &train_set, &ds.subset(SplitPart::Val), &ds.classes, &ds.normalization)
        .map_err(err)?;
    let plain = train_plain(&cfg, &train_set, &ds.classes, |_, _| {}).map_err(err)?;
    let truth = test.targets(LabelMode::Binary);
    let f1 = |pred: Vec<usize>| -> Result<f64, String> {
        Ok(binary_metrics(&BinaryCounts::from_predictions(&pred, &truth)).map_err(err)?.f1)
    };
    let fe = f1(last_head_predictions(&eager, &test.features).map_err(err)?)?;
    let fp = f1(plain.predict(&test.features).map_err(err)?)?;
    let t = start.elapsed();
    verdict(
        flows >= 100_000 && (fe - fp).abs() <= 0.05,
        format!("{flows} flows (need >= 100000), {epochs} epochs: EagerNet F1 {fe:.4} vs plain {fp:.4}; {t:.1?}"),
    )
}

// ----------------------------------------------------------------

fn report(id: usize, name: &str, result: Check, failures: &mut usize) {
    let (tag, detail) = match result {
        Ok(Outcome::Pass(d)) => ("PASS", d),
        Ok(Outcome::Skip(d)) => ("SKIP", d),
        Ok(Outcome::Fail(d)) => ("FAIL", d),
        Err(e) => ("FAIL", format!("error: {e}")),
    };
    if tag == "FAIL" {
        *failures += 1;
    }
    println!("[{tag}] AC{id} {name}: {detail}");
}

fn main() {
    let mut failures = 0;
    report(1, "gradient correctness", ac1(), &mut failures);
    report(2, "loss oracles", ac2(), &mut failures);
    report(3, "weight schedules", ac3(), &mut failures);
    match small_trained() {
        Ok((model, test)) => {
            report(4, "agreement at ceiling", ac4(&model, &test), &mut failures);
            report(5, "exit monotonicity", ac5(&model, &test), &mut failures);
        }
        Err(e) => {
            report(4, "agreement at ceiling", Err(e.clone()), &mut failures);
            report(5, "exit monotonicity", Err(e), &mut failures);
        }
    }
    report(6, "baseline reduction", ac6(), &mut failures);
    report(7, "flowmeter golden", ac7(), &mut failures);
    match checker_dataset(&CheckerTask::default(), 1).and_then(|ds| ac8(&ds).map(|r| (ds, r))) {
        Ok((ds, (outcome, model))) => {
            report(8, "desk-scale behavior", Ok(outcome), &mut failures);
            report(9, "ablation direction", ac9(&ds, &model), &mut failures);
        }
        Err(e) => {
            report(8, "desk-scale behavior", Err(e.clone()), &mut failures);
            report(9, "ablation direction", Err(e), &mut failures);
        }
    }
    report(10, "optional dataset run", ac10(), &mut failures);
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
