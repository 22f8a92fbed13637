//! `eagernet selfcheck`: quick numeric and invariant checks on a fresh build.

use eagernet_core::dataset::{Dataset, LabelMode, Labels, PrepareOptions, SplitPart};
use eagernet_core::flowmeter::{meter_trace, FlowTableConfig, PacketRecord, FWD_OFFSET, TCP};
use eagernet_core::gradcheck::check_gradients;
use eagernet_core::metrics::default_grid;
use eagernet_core::model::{EagerNet, ModelConfig};
use eagernet_core::nn::Matrix;
use eagernet_core::synthetic::CheckerTask;
use eagernet_core::trainer::{
    bce_loss, cce_loss, last_head_predictions, loss_weight_fractions, loss_weights, train, TrainConfig,
    WeightScheme,
};

pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Outcome = Result<(bool, String), String>;
type NamedCheck = (&'static str, Box<dyn Fn() -> Outcome>);

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn gradients(mode: LabelMode, classes: usize, seed: u64) -> Outcome {
    let model = EagerNet::init(ModelConfig::new(5, 2, 8, mode, classes), seed).map_err(err)?;
    let n = 8;
    let x = Matrix::from_vec(n, 5, (0..n * 5).map(|i| ((i * 37 % 23) as f64 - 11.0) / 6.0).collect())
        .map_err(err)?;
    let targets = match mode {
        LabelMode::Binary => Labels::Binary((0..n).map(|i| (i % 2) as f64).collect()),
        LabelMode::Multiclass => {
            let mut m = Matrix::zeros(n, classes);
            for r in 0..n {
                m.set(r, r % classes, 1.0);
            }
            Labels::OneHot(m)
        }
    };
    let w = loss_weights(2, WeightScheme::Uniform).map_err(err)?;
    let g = check_gradients(&model, &x, &targets, &w, 1e-5).map_err(err)?;
    Ok((
        g.max_relative_error < 1e-4,
        format!("{} params, max rel err {:.2e}", g.parameters, g.max_relative_error),
    ))
}

fn losses() -> Outcome {
    let ln2 = bce_loss(&[0.0], &[1.0]).map_err(err)?.0;
    let mut y = Matrix::zeros(1, 4);
    y.set(0, 1, 1.0);
    let ln4 = cce_loss(&Matrix::zeros(1, 4), &y).map_err(err)?.0;
    let d = (ln2 - 2f64.ln()).abs().max((ln4 - 4f64.ln()).abs());
    Ok((d < 1e-12, format!("bce(0,1)={ln2:.6}, cce(uniform,4)={ln4:.6}")))
}

fn schedules() -> Outcome {
    let inc = loss_weight_fractions(3, WeightScheme::Increasing).map_err(err)?;
    let dec = loss_weight_fractions(3, WeightScheme::Decreasing).map_err(err)?;
    let uni = loss_weight_fractions(3, WeightScheme::Uniform).map_err(err)?;
    let ok = inc == [(1, 6), (2, 6), (3, 6)] && dec == [(3, 6), (2, 6), (1, 6)] && uni == [(1, 3); 3];
    Ok((ok, format!("L=3 increasing {inc:?}")))
}

fn flowmeter() -> Outcome {
    let p = |t: f64, len: u64| PacketRecord {
        timestamp: t,
        src_ip: "10.0.0.1".into(),
        dst_ip: "10.0.0.2".into(),
        src_port: 1234,
        dst_port: 80,
        protocol: TCP,
        ip_total_length: len,
        syn: false,
        ack: true,
        fin: false,
        cwr: false,
    };
    let trace = [p(0.0, 100), p(0.5, 60).reversed(), p(1.0, 40)];
    let flows = meter_trace(&trace, FlowTableConfig::default()).map_err(err)?;
    let f = &flows[0].features.0[FWD_OFFSET..FWD_OFFSET + 4];
    let ok = flows.len() == 1 && f == [70.0, 40.0, 100.0, 30.0];
    Ok((ok, format!("fwd length mean/min/max/stdev {f:?}")))
}

fn eager_invariants(seed: u64) -> Outcome {
    let task = CheckerTask {
        samples: 1500,
        ..CheckerTask::default()
    };
    let ds = Dataset::prepare(
        task.feature_names(),
        task.generate(seed),
        PrepareOptions {
            seed,
            stratify: false,
            val_fraction: 0.1,
        },
    )
    .map_err(err)?;
    let mut cfg = TrainConfig::new(LabelMode::Multiclass, 3, 16);
    cfg.epochs = 10;
    cfg.seed = seed;
    let (model, _) = train(
        cfg,
        &ds.subset(SplitPart::Train),
        &ds.subset(SplitPart::Val),
        &ds.classes,
        &ds.normalization,
    )
    .map_err(err)?;
    let test = ds.subset(SplitPart::Test);
    let full = last_head_predictions(&model, &test.features).map_err(err)?;
    let grid = default_grid(&model, 101);
    let mut disagreements = 0;
    let mut violations = 0;
    for (i, &want) in full.iter().enumerate() {
        let row = test.features.row(i);
        let mut prev = 0;
        for &t in &grid {
            let p = model.forward_eager(row, t).map_err(err)?;
            violations += (p.exit_layer < prev) as usize;
            prev = p.exit_layer;
            if t == 1.0 {
                disagreements += (p.class != want || p.exit_layer != model.depth()) as usize;
            }
        }
    }
    Ok((
        disagreements == 0 && violations == 0,
        format!(
            "{} samples: {disagreements} ceiling disagreements, {violations} exit-monotonicity violations",
            test.len()
        ),
    ))
}

pub fn run(seed: u64) -> Vec<CheckResult> {
    let checks: Vec<NamedCheck> = vec![
        ("gradient check (binary)", Box::new(move || gradients(LabelMode::Binary, 2, seed))),
        ("gradient check (3-class)", Box::new(move || gradients(LabelMode::Multiclass, 3, seed))),
        ("loss hand values", Box::new(losses)),
        ("loss weight schedules", Box::new(schedules)),
        ("flowmeter hand trace", Box::new(flowmeter)),
        ("ceiling agreement and exit monotonicity", Box::new(move || eager_invariants(seed))),
    ];
    checks
        .into_iter()
        .map(|(name, f)| match f() {
            Ok((passed, detail)) => CheckResult { name, passed, detail },
            Err(e) => CheckResult {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        })
        .collect()
}
