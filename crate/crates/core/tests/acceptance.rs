//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails. Pass criterion numbers to run a subset:
//! `cargo test -p apl-seg --test acceptance -- 3 5`.

use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use apl_seg::data::{generate_synthetic, make_split, mask_batch, image_batch, LabeledAmount, Sample, SplitConfig, SyntheticConfig};
use apl_seg::eval::{self, EvalOptions, EvalReport};
use apl_seg::losses::{self, ObjectiveParts};
use apl_seg::predictor::binarize;
use apl_seg::spl::{spl_pace_step, spl_weight_ranked, SplKind, SplScheme};
use apl_seg::tensor::Tensor;
use apl_seg::trainer::objective::{
    pace_objective, predictor_objective, pw_inputs, Inferred, Networks, ObjectiveSpec, ParamSets, PredictorBatch, PwInputs,
};
use apl_seg::trainer::schedule::lr_at;
use apl_seg::trainer::{run_ablation, Adversary, Mode, Phase, PwTarget, TrainConfig, Trainer, METRICS_FILE};
use rand::distributions::Uniform;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Synthetic setup shared by the behavioural criteria.
const DESK_RES: usize = 32;
// At 32px the GSM pools over a 2x2 map and memorises the 50 labeled masks.
const WARMUP_RES: usize = 64;
const DESK_COUNT: usize = 500;
const DESK_LABELED: usize = 50;
const DESK_NOISE: f64 = 0.05;
const DESK_ITERS: usize = 2000;
const DESK_WARMUP: usize = 500;
const HELD_OUT: usize = 200;

/// Seed-1 full-mode report, shared by the ordering check and the regression bound.
static FULL_SEED1: OnceLock<EvalReport> = OnceLock::new();

fn full_seed1(d: &Desk) -> EvalReport {
    FULL_SEED1.get_or_init(|| run_ablation(Mode::Full, &desk_config(1), &d.labeled, &d.unlabeled, &d.held, None).unwrap().report).clone()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(r: &mut ChaCha8Rng, n: usize, h: usize, w: usize, lo: f64, hi: f64) -> Tensor<f64> {
    let d = Uniform::new(lo, hi);
    Tensor::from_vec(n, 1, h, w, (0..n * h * w).map(|_| r.sample(d)).collect()).unwrap()
}

fn random_mask(r: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_vec(n, 1, h, w, (0..n * h * w).map(|_| f64::from(u8::from(r.gen_bool(0.5)))).collect()).unwrap()
}

fn t2(v: [f64; 4]) -> Tensor<f64> {
    Tensor::from_vec(1, 1, 2, 2, v.to_vec()).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() < tol
}

// 1
fn loss_identity() -> Outcome {
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let pred = random_tensor(&mut r, 1, 8, 8, 0.0, 1.0);
        let gt = random_mask(&mut r, 1, 8, 8);
        let ones = pred.map(|_| 1.0);
        let l = losses::labeled_loss(&pred, &gt, 1e-7).unwrap();
        let u = losses::unlabeled_loss(&pred, &gt, &ones, 1e-7).unwrap();
        worst = worst.max((l.value - u.value).abs());
        for (a, b) in l.grad.data.iter().zip(&u.grad.data) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(worst < 1e-9, format!("max |L^u(.,.,1) - L^l| = {worst:.2e} over 1000 instances"))
}

// 2
fn hand_oracles() -> Outcome {
    let eps = 1e-7;
    let ln2 = std::f64::consts::LN_2;
    let mut checks: Vec<(&str, f64, f64)> = Vec::new();
    let half = t2([0.5; 4]);
    checks.push(("uniform-0.5 CE", losses::labeled_loss(&half, &t2([1., 0., 0., 1.]), eps).unwrap().value, 4.0 * ln2));
    checks.push((
        "confident CE",
        losses::labeled_loss(&t2([0.9, 0.1, 0.1, 0.9]), &t2([1., 0., 0., 1.]), eps).unwrap().value,
        -4.0 * 0.9f64.ln(),
    ));
    checks.push((
        "weighted CE",
        losses::unlabeled_loss(&half, &t2([0., 1., 1., 0.]), &t2([1., 0., 0., 1.]), eps).unwrap().value,
        2.0 * ln2,
    ));
    let zero_logits = [0.0, 0.0];
    let adv = losses::pace_adversarial_loss(&zero_logits, &zero_logits, &zero_logits, 0.7, eps).unwrap();
    checks.push(("pace adversarial at D = 0.5", adv.value, 2.7 * 0.5f64.ln()));
    let one = Tensor::from_vec(1, 1, 1, 1, vec![0.5]).unwrap();
    checks.push(("PW CE at V* = 0.5", losses::pixel_weight_loss(&one, &one, eps).unwrap().value, ln2));

    // Hand-assembled predictor objective on 2x2 maps.
    let (pred_l, gt) = (t2([0.7, 0.2, 0.4, 0.9]), t2([1., 0., 0., 1.]));
    let (pred_u, pseudo, v) = (t2([0.6, 0.3, 0.8, 0.1]), t2([1., 0., 1., 0.]), t2([0.9, 0.5, 0.2, 1.0]));
    let (logit_l, logit_u) = ([0.3, -0.2], [-0.4, 0.1]);
    let (pw_out, vstar) = (t2([0.8, 0.6, 0.3, 0.5]), losses::reliability_target(&pred_l, &gt).unwrap());
    let ce = |p: f64, y: f64| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    let real = |z: [f64; 2]| 1.0 / (1.0 + (z[0] - z[1]).exp());
    let hand_l: f64 = (0..4).map(|i| ce(pred_l.data[i], gt.data[i])).sum();
    let hand_u: f64 = (0..4).map(|i| v.data[i] * ce(pred_u.data[i], pseudo.data[i])).sum();
    let hand_adv = (1.0 - real(logit_l)).ln() + 0.7 * (1.0 - real(logit_u)).ln();
    let hand_pw: f64 = (0..4).map(|i| ce(pw_out.data[i], 1.0 - (pred_l.data[i] - gt.data[i]).abs())).sum();
    let parts = ObjectiveParts {
        labeled: losses::labeled_loss(&pred_l, &gt, eps).unwrap().value,
        unlabeled: losses::unlabeled_loss(&pred_u, &pseudo, &v, eps).unwrap().value,
        adversarial: losses::generator_adversarial_terms(&logit_l, &logit_u, 0.7, eps, false).0,
        pixel_weight: losses::pixel_weight_loss(&pw_out, &vstar, eps).unwrap().value,
    };
    let total = losses::total_predictor_objective(&parts, 0.01);
    let hand_total = hand_l + hand_u + 0.01 * (hand_adv + hand_pw);
    let mut ok = close(total, hand_total, 1e-9);

    checks.push(("MAE", eval::mae(&[0.2, 0.8, 1.0, 0.0], &[0, 1, 1, 0]).unwrap(), 0.1));
    let (p, rc) = eval::precision_recall_at(&[0.6, 0.4, 0.4, 0.6], &[1, 0, 0, 1], 0.3).unwrap();
    checks.push(("precision at 0.3", p, 0.5));
    checks.push(("recall at 0.3", rc, 1.0));
    checks.push(("F at 0.3", eval::f_measure_at(&[0.6, 0.4, 0.4, 0.6], &[1, 0, 0, 1], 0.3, 0.3).unwrap(), 1.3 * 0.5 / (0.3 * 0.5 + 1.0)));
    checks.push(("F at 0.5", eval::f_measure_at(&[0.6, 0.4, 0.4, 0.6], &[1, 0, 0, 1], 0.5, 0.3).unwrap(), 1.0));
    checks.push(("poly LR at T/2", lr_at(500, 1.0, 1000, 0.9).unwrap(), 0.5f64.powf(0.9)));
    let lin = spl_weight_ranked(0.5, &SplScheme::new(SplKind::LinearSoft, 1.0), 1).unwrap();
    checks.push(("linear soft at lambda/2", lin, 0.5));
    checks.push(("linear soft grid argmin", grid_argmin(|v| v * 0.5 + (v * v / 2.0 - v)), 0.5));
    let bin = binarize(&t2([0.49, 0.51, 0.5, 0.1]), 0.5).unwrap();
    ok &= bin.data == vec![0.0, 1.0, 1.0, 0.0];
    ok &= apl_seg::data::binarize_gray(&[0, 128, 255], 255) == vec![0, 1, 1];

    let mut failed = Vec::new();
    for (name, got, want) in &checks {
        if !close(*got, *want, 1e-6) {
            failed.push(format!("{name}: {got} vs {want}"));
        }
    }
    if !ok {
        failed.push("objective assembly, binarization or mask decoding".into());
    }
    let n = checks.len() + 3;
    if failed.is_empty() {
        outcome(true, format!("{n} hand values match"))
    } else {
        outcome(false, failed.join("; "))
    }
}

// 3
/// Central-difference comparison over sampled coordinates of `params`.
/// Coordinates whose gradient is too small to resolve above round-off
/// (relative to the loss value) must match in absolute terms; at least
/// `need` larger ones must match in relative terms.
struct GradCheck {
    checked: usize,
    worst_rel: f64,
    worst_abs_small: f64,
    floor: f64,
}

fn grad_check(
    r: &mut ChaCha8Rng,
    params: &mut Vec<f64>,
    analytic: &[f64],
    need: usize,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> GradCheck {
    let h = 1e-5;
    let floor = 1e-6 * loss(params).abs().max(1.0);
    let mut out = GradCheck { checked: 0, worst_rel: 0.0, worst_abs_small: 0.0, floor };
    let mut tries = 0;
    while out.checked < need && tries < need * 50 {
        tries += 1;
        let i = r.gen_range(0..params.len());
        let orig = params[i];
        params[i] = orig + h;
        let up = loss(params);
        params[i] = orig - h;
        let down = loss(params);
        params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs());
        if scale < floor {
            out.worst_abs_small = out.worst_abs_small.max((a - numeric).abs());
        } else {
            out.checked += 1;
            out.worst_rel = out.worst_rel.max((a - numeric).abs() / scale);
        }
    }
    out
}

struct GradFixture {
    nets: Networks,
    params: ParamSets<f64>,
    images: Tensor<f64>,
    masks: Tensor<f64>,
    unl_images: Tensor<f64>,
    inferred: Inferred<f64>,
}

fn grad_fixture() -> GradFixture {
    let res = 16;
    let cfg = TrainConfig::desk(res, 5);
    let nets = Networks::new(&cfg).unwrap();
    let params = ParamSets::<f32>::init(&nets).cast::<f64>();
    let mut r = rng(7);
    let d = Uniform::new(-1.0, 1.0);
    let mut image = || Tensor::from_vec(2, 3, res, res, (0..2 * 3 * res * res).map(|_| r.sample(d)).collect()).unwrap();
    let (images, unl_images) = (image(), image());
    let masks = random_mask(&mut r, 2, res, res);
    let inferred = Inferred { pseudo: random_mask(&mut r, 2, res, res), weights: random_tensor(&mut r, 2, res, res, 0.0, 1.0) };
    GradFixture { nets, params, images, masks, unl_images, inferred }
}

fn grad_checks() -> Outcome {
    let start = Instant::now();
    let f = grad_fixture();
    let nets = &f.nets;
    let mut r = rng(3);
    let base = ObjectiveSpec {
        unlabeled: false,
        adversary: Adversary::None,
        pw_target: None,
        beta: 0.01,
        eta: 0.7,
        eps: 1e-7,
        non_saturating: false,
    };
    let batch = PredictorBatch { labeled_images: &f.images, labeled_masks: &f.masks, unlabeled: None };
    let mut results = Vec::new();

    // L^l w.r.t. Psi.
    {
        let g = predictor_objective(nets, &f.params, &base, &batch, None).unwrap();
        let mut psi = f.params.psi.clone();
        let c = grad_check(&mut r, &mut psi, &g.psi, 200, |p| {
            let pred = nets.predictor.predict(p, &f.images).unwrap();
            losses::labeled_loss(&pred, &f.masks, 1e-7).unwrap().value
        });
        results.push(("L^l", c));
    }
    // L^u w.r.t. Psi, pseudo-labels and weights held fixed.
    {
        let trace = nets.predictor.forward(&f.params.psi, &f.unl_images).unwrap();
        let lu = losses::unlabeled_loss(&trace.probs, &f.inferred.pseudo, &f.inferred.weights, 1e-7).unwrap();
        let mut grad = vec![0.0; f.params.psi.len()];
        nets.predictor.backward(&f.params.psi, &trace, &lu.grad, &mut grad);
        let mut psi = f.params.psi.clone();
        let c = grad_check(&mut r, &mut psi, &grad, 200, |p| {
            let pred = nets.predictor.predict(p, &f.unl_images).unwrap();
            losses::unlabeled_loss(&pred, &f.inferred.pseudo, &f.inferred.weights, 1e-7).unwrap().value
        });
        results.push(("L^u", c));
    }
    // L^{p_g} w.r.t. Phi_g, predictions held fixed.
    {
        let spec = ObjectiveSpec { unlabeled: true, adversary: Adversary::Image, ..base };
        let pred_l = nets.predictor.predict(&f.params.psi, &f.images).unwrap();
        let pred_u = nets.predictor.predict(&f.params.psi, &f.unl_images).unwrap();
        let g = pace_objective(nets, &f.params, &spec, &f.masks, &pred_l, Some(&pred_u)).unwrap();
        let mut phi_g = f.params.phi_g.clone();
        let c = grad_check(&mut r, &mut phi_g, &g.phi_g, 200, |p| {
            let ps = ParamSets { phi_g: p.to_vec(), ..f.params.clone() };
            pace_objective(nets, &ps, &spec, &f.masks, &pred_l, Some(&pred_u)).unwrap().value
        });
        results.push(("L^{p_g}", c));
    }
    // L^{p_w} w.r.t. Phi_v with detached features and target.
    let frozen: PwInputs<f64> = pw_inputs(nets, &f.params, PwTarget::Reliability, &f.images, &f.masks).unwrap();
    {
        let spec = ObjectiveSpec { pw_target: Some(PwTarget::Reliability), beta: 1.0, ..base };
        let g = predictor_objective(nets, &f.params, &spec, &batch, Some(&frozen)).unwrap();
        let mut phi_v = f.params.phi_v.clone();
        let c = grad_check(&mut r, &mut phi_v, g.phi_v.as_ref().unwrap(), 200, |p| {
            let ps = ParamSets { phi_v: p.to_vec(), ..f.params.clone() };
            predictor_objective(nets, &ps, &spec, &batch, Some(&frozen)).unwrap().parts.pixel_weight
        });
        results.push(("L^{p_w}", c));
    }
    // Combined predictor-step objective w.r.t. Psi and Phi_v.
    {
        let spec = ObjectiveSpec { unlabeled: true, adversary: Adversary::Image, pw_target: Some(PwTarget::Reliability), non_saturating: true, ..base };
        let full = PredictorBatch { unlabeled: Some((&f.unl_images, &f.inferred)), ..batch };
        let g = predictor_objective(nets, &f.params, &spec, &full, Some(&frozen)).unwrap();
        let mut psi = f.params.psi.clone();
        let c = grad_check(&mut r, &mut psi, &g.psi, 200, |p| {
            let ps = ParamSets { psi: p.to_vec(), ..f.params.clone() };
            predictor_objective(nets, &ps, &spec, &full, Some(&frozen)).unwrap().total
        });
        results.push(("combined (Psi)", c));
        let mut phi_v = f.params.phi_v.clone();
        let c = grad_check(&mut r, &mut phi_v, g.phi_v.as_ref().unwrap(), 200, |p| {
            let ps = ParamSets { phi_v: p.to_vec(), ..f.params.clone() };
            predictor_objective(nets, &ps, &spec, &full, Some(&frozen)).unwrap().total
        });
        results.push(("combined (Phi_v)", c));
    }
    let in_time = start.elapsed() < Duration::from_secs(300);
    let pass = in_time && results.iter().all(|(_, c)| c.checked >= 200 && c.worst_rel < 1e-3 && c.worst_abs_small < 1e-3 * c.floor);
    let detail = results
        .iter()
        .map(|(n, c)| format!("{n}: {} params, max rel {:.1e}", c.checked, c.worst_rel))
        .collect::<Vec<_>>()
        .join("; ");
    outcome(pass, format!("{detail}; within 5 min: {in_time}"))
}

// 4
fn vstar_properties() -> Outcome {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    let mut in_range = true;
    for _ in 0..1000 {
        let p = random_tensor(&mut r, 1, 8, 8, 0.0, 1.0);
        let g = random_mask(&mut r, 1, 8, 8);
        let v = losses::reliability_target(&p, &g).unwrap();
        let vc = losses::reliability_target(&p.map(|x| 1.0 - x), &g).unwrap();
        let at_gt = losses::reliability_target(&g, &g).unwrap();
        let at_inv = losses::reliability_target(&g.map(|x| 1.0 - x), &g).unwrap();
        in_range &= v.data.iter().all(|x| (0.0..=1.0).contains(x));
        for i in 0..v.len() {
            worst = worst.max((v.data[i] + vc.data[i] - 1.0).abs());
            worst = worst.max((at_gt.data[i] - 1.0).abs()).max(at_inv.data[i].abs());
        }
    }
    outcome(in_range && worst < 1e-12, format!("range ok: {in_range}, max identity error {worst:.1e}"))
}

// 5
fn regularizer(kind: SplKind, v: f64, rank: f64, gamma_over_lambda: f64) -> f64 {
    match kind {
        SplKind::HardL1 => -v,
        SplKind::LinearSoft => v * v / 2.0 - v,
        SplKind::LHalfGroup => -2.0 * v.sqrt(),
        SplKind::L21Group => -v - gamma_over_lambda * (rank.sqrt() - (rank - 1.0).sqrt()) * v,
        SplKind::Fraction => v - v.ln(),
    }
}

/// Minimiser of `f` over a 1e-4 grid on [0, 1].
fn grid_argmin(f: impl Fn(f64) -> f64) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=10_000 {
        let v = k as f64 * 1e-4;
        let val = f(v);
        if val < best.0 {
            best = (val, v);
        }
    }
    best.1
}

/// Grid minimiser refined by a fine grid around it.
fn fine_argmin(f: impl Fn(f64) -> f64) -> f64 {
    let c = grid_argmin(&f);
    let mut best = (f(c), c);
    for k in -2000..=2000 {
        let v = (c + k as f64 * 1e-7).clamp(0.0, 1.0);
        let val = f(v);
        if val < best.0 {
            best = (val, v);
        }
    }
    best.1
}

fn spl_oracle() -> Outcome {
    let mut r = rng(5);
    let mut worst = 0.0f64;
    for kind in SplKind::ALL {
        for _ in 0..10_000 {
            let lambda = r.gen_range(0.05..3.0);
            let loss = r.gen_range(0.0..4.0);
            let rank = r.gen_range(1..50usize);
            let scheme = SplScheme::new(kind, lambda);
            let closed = spl_weight_ranked(loss, &scheme, rank).unwrap();
            let g = scheme.gamma / lambda;
            let brute = grid_argmin(|v| v * loss + lambda * regularizer(kind, v, rank as f64, g));
            worst = worst.max((closed - brute).abs());
        }
    }
    // Whole-map weighting against per-pixel minimisation.
    let mut map_worst = 0.0f64;
    for kind in [SplKind::HardL1, SplKind::LinearSoft, SplKind::Fraction] {
        let losses_map = random_tensor(&mut r, 1, 4, 4, 0.0, 2.0);
        let scheme = SplScheme::new(kind, 0.9);
        let map = spl_pace_step(&losses_map, &scheme).unwrap();
        for (&l, &w) in losses_map.data.iter().zip(&map.data) {
            let brute = fine_argmin(|v| v * l + 0.9 * regularizer(kind, v, 1.0, 1.0));
            map_worst = map_worst.max((w - brute).abs());
        }
    }
    outcome(
        worst < 1e-3 && map_worst < 1e-6,
        format!("max |closed - grid| = {worst:.1e} over 50k pairs; 4x4 maps within {map_worst:.1e}"),
    )
}

// 6
fn small_trainer(mode: Mode, res: usize, total: usize, warmup: usize, seed: u64) -> (Trainer, Vec<Sample>) {
    let samples = generate_synthetic(&SyntheticConfig { image_size: res, num_images: 40, seed, ..Default::default() }).unwrap();
    let (l, u) = make_split(samples, &SplitConfig { labeled: LabeledAmount::Count(10), seed }).unwrap();
    let mut cfg = TrainConfig::desk(res, seed);
    cfg.mode = mode;
    cfg.total_iterations = total;
    cfg.warmup_iterations = warmup;
    cfg.labeled_batch = 4;
    cfg.unlabeled_batch = 4;
    cfg.log_every = 1;
    let held = generate_synthetic(&SyntheticConfig { image_size: res, num_images: 8, seed: seed + 99, ..Default::default() }).unwrap();
    let t = Trainer::new(cfg, l, u).unwrap();
    (t, held)
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn alternation_hygiene() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for mode in [Mode::Full, Mode::PixelGan, Mode::NoVstar] {
        let (mut t, _) = small_trainer(mode, 32, 20, 2, 6);
        t.run_until(4).unwrap();
        let cfg = t.config().clone();
        let spec = ObjectiveSpec::new(&cfg, false);
        let lrs = t.learning_rates(4).unwrap();
        let labeled = t.next_labeled().unwrap();
        let unl = t.next_unlabeled().unwrap().unwrap();
        let inferred = t.infer_step(&unl.images).unwrap();

        let before = t.params().clone();
        let batch = PredictorBatch { labeled_images: &labeled.images, labeled_masks: &labeled.masks, unlabeled: Some((&unl.images, &inferred)) };
        t.update_predictor(&batch, &spec, lrs).unwrap();
        let after = t.params().clone();
        let g_frozen = bits(&before.phi_g) == bits(&after.phi_g);
        let psi_moved = bits(&before.psi) != bits(&after.psi);

        let before = t.params().clone();
        t.update_pace(&labeled, Some(&unl.images), &spec, lrs).unwrap();
        let after = t.params().clone();
        let psi_frozen = bits(&before.psi) == bits(&after.psi);
        let v_frozen = mode == Mode::PixelGan || bits(&before.phi_v) == bits(&after.phi_v);
        let g_moved = bits(&before.phi_g) != bits(&after.phi_g);
        ok &= g_frozen && psi_moved && psi_frozen && v_frozen && g_moved;
        notes.push(format!("{mode}: phi_g frozen {g_frozen}, psi/phi_v frozen {}", psi_frozen && v_frozen));
    }

    // V and Y^u are constants: perturbing the reliability branch leaves the
    // predictor gradient bitwise unchanged, and adding the unlabeled term
    // leaves the PW gradient bitwise unchanged.
    let f = grad_fixture();
    let spec = ObjectiveSpec {
        unlabeled: true,
        adversary: Adversary::Image,
        pw_target: Some(PwTarget::Reliability),
        beta: 0.01,
        eta: 0.7,
        eps: 1e-7,
        non_saturating: false,
    };
    let lab = PredictorBatch { labeled_images: &f.images, labeled_masks: &f.masks, unlabeled: None };
    let full = PredictorBatch { unlabeled: Some((&f.unl_images, &f.inferred)), ..lab };
    let frozen = pw_inputs(&f.nets, &f.params, PwTarget::Reliability, &f.images, &f.masks).unwrap();
    let g0 = predictor_objective(&f.nets, &f.params, &spec, &full, Some(&frozen)).unwrap();
    let mut shifted = f.params.clone();
    shifted.phi_v.iter_mut().for_each(|x| *x *= 1.5);
    let g1 = predictor_objective(&f.nets, &shifted, &spec, &full, Some(&frozen)).unwrap();
    let g2 = predictor_objective(&f.nets, &f.params, &spec, &lab, Some(&frozen)).unwrap();
    let psi_indep = g0.psi == g1.psi;
    let v_indep = g0.phi_v == g2.phi_v;
    ok &= psi_indep && v_indep;
    notes.push(format!("d psi independent of phi_v {psi_indep}, d phi_v independent of L^u {v_indep}"));
    outcome(ok, notes.join("; "))
}

// 7
fn gsm_accuracy(nets: &Networks, params: &ParamSets<f32>, held: &[Sample]) -> f64 {
    let refs: Vec<&Sample> = held.iter().collect();
    let mut correct = 0usize;
    for chunk in refs.chunks(16) {
        let x: Tensor<f32> = image_batch(chunk).unwrap();
        let y: Tensor<f32> = mask_batch(chunk).unwrap();
        let pred = nets.predictor.predict(&params.psi, &x).unwrap();
        let real = nets.pace.gsm_forward(&params.phi_g, &y).unwrap().realness();
        let fake = nets.pace.gsm_forward(&params.phi_g, &pred).unwrap().realness();
        correct += real.iter().filter(|&&d| d > 0.5).count() + fake.iter().filter(|&&d| d <= 0.5).count();
    }
    correct as f64 / (2 * held.len()) as f64
}

struct Desk {
    labeled: Vec<Sample>,
    unlabeled: Vec<Sample>,
    held: Vec<Sample>,
}

fn desk_data(seed: u64, res: usize) -> Desk {
    let cfg = |n, s| SyntheticConfig { image_size: res, num_images: n, seed: s, noise_level: DESK_NOISE, ..Default::default() };
    let samples = generate_synthetic(&cfg(DESK_COUNT, seed)).unwrap();
    let (labeled, unlabeled) = make_split(samples, &SplitConfig { labeled: LabeledAmount::Count(DESK_LABELED), seed }).unwrap();
    let held = generate_synthetic(&cfg(HELD_OUT, seed + 1000)).unwrap();
    Desk { labeled, unlabeled, held }
}

fn desk_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::desk(DESK_RES, seed);
    cfg.total_iterations = DESK_ITERS;
    cfg.warmup_iterations = DESK_WARMUP;
    cfg.log_every = 100;
    cfg
}

fn warmup_discriminator() -> Outcome {
    let start = Instant::now();
    let d = desk_data(1, WARMUP_RES);
    let mut cfg = TrainConfig::desk(WARMUP_RES, 1);
    cfg.warmup_iterations = 1000;
    cfg.total_iterations = DESK_ITERS.max(1001);
    cfg.log_every = 100;
    let mut t = Trainer::new(cfg, d.labeled, d.unlabeled).unwrap();
    t.run_until(1000).unwrap();
    let acc = gsm_accuracy(t.networks(), t.params(), &d.held);
    let elapsed = start.elapsed();
    outcome(
        acc >= 0.8 && elapsed < Duration::from_secs(45 * 60),
        format!("GSM accuracy {acc:.3} on {} held-out GT/prediction pairs after 1000 warmup iterations at {WARMUP_RES}px ({:.0}s)", d.held.len(), elapsed.as_secs_f64()),
    )
}

// 8
fn scaled_ordering() -> Outcome {
    let start = Instant::now();
    let mut holds = 0;
    let mut rows = Vec::new();
    for seed in 1..=3 {
        let d = desk_data(seed, DESK_RES);
        let cfg = desk_config(seed);
        let mut f = [0.0; 3];
        for (k, mode) in [Mode::Full, Mode::NoPaceLoss, Mode::OnlyLabeled].into_iter().enumerate() {
            f[k] = if seed == 1 && mode == Mode::Full {
                full_seed1(&d).max_f
            } else {
                run_ablation(mode, &cfg, &d.labeled, &d.unlabeled, &d.held, None).unwrap().report.max_f
            };
        }
        let ok = f[0] >= f[1] && f[1] >= f[2] && f[0] - f[2] >= 0.02;
        holds += usize::from(ok);
        rows.push(format!("seed {seed}: full {:.4}, no L^p {:.4}, only L^l {:.4}", f[0], f[1], f[2]));
    }
    let elapsed = start.elapsed();
    outcome(
        holds >= 2 && elapsed < Duration::from_secs(3600),
        format!("ordering holds in {holds}/3 ({}; {:.0}s)", rows.join("; "), elapsed.as_secs_f64()),
    )
}

// 9
fn lr_schedule() -> Outcome {
    let total = 40;
    let (mut t, _) = small_trainer(Mode::Full, 32, total, 10, 9);
    t.run().unwrap();
    let cfg = t.config().clone();
    let mut ok = true;
    let mut seen = 0;
    for rec in t.records() {
        let s = rec.iteration;
        if ![0, total / 2, total].contains(&s) || rec.phase == Phase::Eval {
            continue;
        }
        seen += 1;
        ok &= rec.lr_predictor == lr_at(s, cfg.predictor_lr, total, cfg.poly_power).unwrap();
        ok &= rec.lr_pace == lr_at(s, cfg.pace_lr, total, cfg.poly_power).unwrap();
        ok &= rec.lr_gsm == lr_at(s, cfg.gsm_lr, total, cfg.poly_power).unwrap();
        ok &= (rec.lr_predictor - cfg.predictor_lr * (1.0 - s as f64 / total as f64).powf(0.9)).abs() <= 1e-18;
    }
    outcome(ok && seen == 3, format!("{seen} logged steps checked against lr_at"))
}

// 10
fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let run = |dir: &Path| {
        let (t, held) = small_trainer(Mode::Full, 32, 30, 10, 10);
        let mut t = t.with_eval_set(held, EvalOptions::default()).unwrap().with_output_dir(dir).unwrap();
        t.run().unwrap();
        std::fs::read(dir.join(METRICS_FILE)).unwrap()
    };
    let a = run(&tmp.path().join("a"));
    let b = run(&tmp.path().join("b"));
    outcome(a == b && !a.is_empty(), format!("metrics logs of {} bytes identical: {}", a.len(), a == b))
}

// 11
fn metric_invariances() -> Outcome {
    let mut r = rng(12);
    let maps: Vec<(Vec<f64>, Vec<u8>)> = (0..12)
        .map(|_| {
            let gt: Vec<u8> = (0..256).map(|_| u8::from(r.gen_bool(0.3))).collect();
            let pred = gt.iter().map(|&g| (0.35 * f64::from(g) + r.gen_range(0.0..0.65f64)).clamp(0.0, 1.0)).collect();
            (pred, gt)
        })
        .collect();
    let opts = EvalOptions::default();
    let base = eval::evaluate_maps(&maps, &opts, "d", "c").unwrap();
    let monotone: [(&str, fn(f64) -> f64); 10] = [
        ("affine", |x| 2.0 * x + 1.0),
        ("cube", |x| x * x * x),
        ("sqrt", f64::sqrt),
        ("exp", f64::exp),
        ("log", |x| (x + 0.01).ln()),
        ("logistic", |x| 1.0 / (1.0 + (-8.0 * (x - 0.5)).exp())),
        ("atan", |x| (3.0 * x).atan()),
        ("tanh", |x| (2.0 * x).tanh()),
        ("negated reciprocal", |x| -1.0 / (x + 0.5)),
        ("piecewise", |x| if x < 0.4 { 0.1 * x } else { 0.04 + 5.0 * (x - 0.4) }),
    ];
    let mut worst = 0.0f64;
    for (_, f) in monotone {
        let mapped: Vec<(Vec<f64>, Vec<u8>)> = maps.iter().map(|(p, g)| (p.iter().map(|&x| f(x)).collect(), g.clone())).collect();
        worst = worst.max((eval::evaluate_maps(&mapped, &opts, "d", "c").unwrap().max_f - base.max_f).abs());
    }
    let mut shuffled = maps.clone();
    shuffled.shuffle(&mut r);
    let perm = eval::evaluate_maps(&shuffled, &opts, "d", "c").unwrap();
    let mae_diff = (perm.mae - base.mae).abs();
    outcome(
        worst < 1e-9 && mae_diff < 1e-12,
        format!("max_f drift {worst:.1e} over 10 monotone maps; MAE drift under permutation {mae_diff:.1e}"),
    )
}

// Regression bound on the desk setup.
fn regression_bound() -> Outcome {
    let r = full_seed1(&desk_data(1, DESK_RES));
    outcome(r.max_f >= 0.85, format!("full mode, seed 1: max F {:.4}, MAE {:.4}", r.max_f, r.mae))
}

type Criterion = (&'static str, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 12] = [
    ("1", "loss identity", loss_identity),
    ("2", "hand oracles", hand_oracles),
    ("3", "gradient checks", grad_checks),
    ("4", "reliability target properties", vstar_properties),
    ("5", "self-paced oracle", spl_oracle),
    ("6", "alternation hygiene", alternation_hygiene),
    ("7", "warmup discriminator", warmup_discriminator),
    ("8", "ablation ordering", scaled_ordering),
    ("9", "learning-rate schedule", lr_schedule),
    ("10", "determinism", determinism),
    ("11", "metric invariances", metric_invariances),
    ("R", "max F regression bound", regression_bound),
];

fn main() {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        failed += usize::from(!o.pass);
        println!(
            "criterion {id:>2} {name:<30} {} ({:.1}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
