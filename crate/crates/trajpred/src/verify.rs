//! The named gradient-check suite behind the `gradcheck` subcommand: every
//! layer's backward pass, then the fully composed model on a synthetic
//! scene, all against central finite differences at h = 1e-5.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, AttentionNet, NeighborInput};
use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckReport};
use crate::localmap::{build_local_map, AgentState};
use crate::model::{nll_loss, transform_outputs, Mode, Predictor, HIDDEN, RAW_OUT};
use crate::nn;
use crate::optim::{two_grads, ParamStore};
use crate::social;
use crate::synth::straight_crossing_sample;

pub const DEFAULT_H: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Runs every check; each entry is `(name, report)`.
pub fn run_suite() -> Result<Vec<(&'static str, GradCheckReport)>> {
    Ok(vec![
        ("linear", check_linear()?),
        ("linear+relu", check_linear_relu()?),
        ("softmax", check_softmax()?),
        ("lstm-cell", check_lstm(1)?),
        ("lstm-bptt-8", check_lstm(8)?),
        ("gaussian-head", check_head()?),
        ("attention-scorer", check_attention()?),
        ("social-pooling", check_social()?),
        ("full-model-social", check_full_model(Mode::SocialOnly, 2)?),
        ("full-model-attention", check_full_model(Mode::Attention, 2)?),
    ])
}

fn rv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rand::Rng::gen_range(rng, -0.8..0.8)).collect()
}

fn check_linear() -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut store = ParamStore::<f64>::new();
    let w = store.register_uniform("w", 5, 3, 5, &mut rng)?;
    let b = store.register_uniform("b", 1, 3, 5, &mut rng)?;
    let x = rv(&mut rng, 5);
    let c = rv(&mut rng, 3);

    // L = c . (x W + b)
    let cc = c.clone();
    let xc = x.clone();
    let loss = move |s: &ParamStore<f64>| -> Result<f64> {
        let y = nn::linear_forward(&xc, s.value(s.id("w").unwrap()), s.value(s.id("b").unwrap()).row(0))?;
        Ok(y.iter().zip(&cc).map(|(a, b)| a * b).sum())
    };

    let mut dx = vec![0.0; 5];
    let (values, grads) = store.split_mut();
    let (dw, db) = two_grads(grads, w, b);
    nn::linear_backward(&x, &values[w.idx()], &c, dw, db.values_mut(), &mut dx);
    grad_check(loss, &mut store, DEFAULT_H, 1e-6, None, 0)
}

fn check_linear_relu() -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut store = ParamStore::<f64>::new();
    let w = store.register_uniform("w", 6, 4, 6, &mut rng)?;
    let b = store.register_uniform("b", 1, 4, 6, &mut rng)?;
    let x = rv(&mut rng, 6);

    let xc = x.clone();
    let loss = move |s: &ParamStore<f64>| -> Result<f64> {
        let pre = nn::linear_forward(&xc, s.value(s.id("w").unwrap()), s.value(s.id("b").unwrap()).row(0))?;
        Ok(nn::relu(&pre).iter().sum())
    };

    let pre = nn::linear_forward(&x, store.value(w), store.value(b).row(0))?;
    let dy = vec![1.0; 4];
    let mut dpre = vec![0.0; 4];
    nn::relu_backward(&pre, &dy, &mut dpre);
    let mut dx = vec![0.0; 6];
    let (values, grads) = store.split_mut();
    let (dw, db) = two_grads(grads, w, b);
    nn::linear_backward(&x, &values[w.idx()], &dpre, dw, db.values_mut(), &mut dx);
    grad_check(loss, &mut store, DEFAULT_H, 1e-6, None, 0)
}

fn check_softmax() -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut store = ParamStore::<f64>::new();
    let v = store.register_uniform("v", 1, 6, 1, &mut rng)?;
    let c = rv(&mut rng, 6);

    // L = c . softmax(v)
    let cc = c.clone();
    let loss = move |s: &ParamStore<f64>| -> Result<f64> {
        let y = nn::softmax(s.value(s.id("v").unwrap()).row(0))?;
        Ok(y.iter().zip(&cc).map(|(a, b)| a * b).sum())
    };

    let y = nn::softmax(store.value(v).row(0))?;
    let mut dv = vec![0.0; 6];
    nn::softmax_backward(&y, &c, &mut dv);
    for (j, d) in dv.iter().enumerate() {
        store.grad_mut(v).set(0, j, *d);
    }
    grad_check(loss, &mut store, DEFAULT_H, 1e-7, None, 0)
}

fn check_lstm(steps: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut store = ParamStore::<f64>::new();
    let hidden = 4;
    let input = 3;
    let wx = store.register_uniform("wx", input, 4 * hidden, input, &mut rng)?;
    let wh = store.register_uniform("wh", hidden, 4 * hidden, hidden, &mut rng)?;
    let b = store.register_uniform("b", 1, 4 * hidden, hidden, &mut rng)?;
    let xs: Vec<Vec<f64>> = (0..steps).map(|_| rv(&mut rng, input)).collect();

    let xsc = xs.clone();
    let loss = move |s: &ParamStore<f64>| -> Result<f64> {
        let mut state = nn::LstmState::zeros(4);
        for x in &xsc {
            state = nn::lstm_cell(
                x,
                &state,
                s.value(s.id("wx").unwrap()),
                s.value(s.id("wh").unwrap()),
                s.value(s.id("b").unwrap()).row(0),
            )?;
        }
        Ok(state.hidden.iter().sum::<f64>() + state.cell.iter().sum::<f64>())
    };

    let mut state = nn::LstmState::zeros(hidden);
    let mut caches = Vec::new();
    for x in &xs {
        let (next, cache) =
            nn::lstm_cell_cached(x, &state, store.value(wx), store.value(wh), store.value(b).row(0))?;
        caches.push(cache);
        state = next;
    }
    let mut dh = vec![1.0; hidden];
    let mut dc = vec![1.0; hidden];
    let (values, grads) = store.split_mut();
    for cache in caches.iter().rev() {
        let mut dx = vec![0.0; input];
        let mut dh_prev = vec![0.0; hidden];
        let mut dc_prev = vec![0.0; hidden];
        let (dwx, dwh, db) = crate::optim::three_grads(grads, wx, wh, b);
        nn::lstm_cell_backward(
            cache,
            &values[wx.idx()],
            &values[wh.idx()],
            &dh,
            &dc,
            dwx,
            dwh,
            db.values_mut(),
            &mut dx,
            &mut dh_prev,
            &mut dc_prev,
        );
        dh = dh_prev;
        dc = dc_prev;
    }
    grad_check(loss, &mut store, DEFAULT_H, 1e-5, None, 0)
}

fn check_head() -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut store = ParamStore::<f64>::new();
    let w = store.register_uniform("w", HIDDEN, RAW_OUT, HIDDEN, &mut rng)?;
    let b = store.register_uniform("b", 1, RAW_OUT, HIDDEN, &mut rng)?;
    let h = rv(&mut rng, HIDDEN);
    let target = [0.35, -0.6];

    let hc = h.clone();
    let loss = move |s: &ParamStore<f64>| -> Result<f64> {
        let raw = nn::linear_forward(&hc, s.value(s.id("w").unwrap()), s.value(s.id("b").unwrap()).row(0))?;
        Ok(nll_loss(&transform_outputs(&raw), target))
    };

    let raw = nn::linear_forward(&h, store.value(w), store.value(b).row(0))?;
    let g = transform_outputs(&raw);
    // Chain rule through the output transform, as the model backward does.
    let dx = target[0] - g.mux;
    let dy = target[1] - g.muy;
    let q = 1.0 - g.rho * g.rho;
    let a = dx / (g.sx * g.sx) - g.rho * dy / (g.sx * g.sy);
    let bb = dy / (g.sy * g.sy) - g.rho * dx / (g.sx * g.sy);
    let z = dx * a + dy * bb;
    let th: f64 = raw[4].tanh();
    let draw = vec![
        -(a / q),
        -(bb / q),
        (1.0 / g.sx - dx * a / (q * g.sx)) * g.sx,
        (1.0 / g.sy - dy * bb / (q * g.sy)) * g.sy,
        (-g.rho / q - dx * dy / (g.sx * g.sy * q) + z * g.rho / (q * q))
            * crate::model::RHO_CLAMP
            * (1.0 - th * th),
    ];
    let mut dh = vec![0.0; HIDDEN];
    let (values, grads) = store.split_mut();
    let (dw, db) = two_grads(grads, w, b);
    nn::linear_backward(&h, &values[w.idx()], &draw, dw, db.values_mut(), &mut dh);
    grad_check(loss, &mut store, DEFAULT_H, 1e-6, None, 0)
}

fn attention_scene() -> (AgentState<f64>, Vec<NeighborInput<f64>>) {
    let states = [
        AgentState::new([0.0, 0.0], [0.4, -0.1]),
        AgentState::new([0.6, 0.45], [-0.3, 0.2]),
        AgentState::new([-0.55, 0.8], [0.1, -0.35]),
        AgentState::new([1.1, -0.7], [-0.2, -0.15]),
    ];
    let target = states[0];
    let neighbors = (1..states.len())
        .map(|j| {
            let others: Vec<AgentState<f64>> = (0..states.len())
                .filter(|&k| k != j)
                .map(|k| states[k])
                .collect();
            let (map, _) = build_local_map(&states[j], &others);
            NeighborInput {
                ped: j as i64,
                state: states[j],
                map,
            }
        })
        .collect();
    (target, neighbors)
}

fn check_attention() -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut store = ParamStore::<f64>::new();
    let net = AttentionNet::register(&mut store, &mut rng)?;
    let (target, neighbors) = attention_scene();
    let c = rv(&mut rng, neighbors.len());

    // L = c . alpha
    let cc = c.clone();
    let (tc, nc) = (target, neighbors.clone());
    let loss = move |s: &ParamStore<f64>| -> Result<f64> {
        let net = AttentionNet::resolve(s)?;
        let scores = attention::score_neighbors(0, &tc, &nc, s, &net)?;
        Ok(scores.weights.iter().zip(&cc).map(|(a, b)| a * b).sum())
    };

    let (_, cache) = attention::score_neighbors_cached(0, &target, &neighbors, &store, &net)?;
    let (values, grads) = store.split_mut();
    attention::attention_backward(&cache, &net, values, grads, &c, None);
    grad_check(loss, &mut store, DEFAULT_H, 1e-5, None, 0)
}

fn check_social() -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut store = ParamStore::<f64>::new();
    let hidden = 6;
    let w = store.register_uniform("proj.w", hidden, social::SOCIAL_CHANNELS, hidden, &mut rng)?;
    let b = store.register_uniform("proj.b", 1, social::SOCIAL_CHANNELS, hidden, &mut rng)?;
    let hiddens: Vec<Vec<f64>> = (0..3).map(|_| rv(&mut rng, hidden)).collect();
    let positions = [[0.3, -0.4], [0.35, -0.38], [1.6, 1.2]];
    let c = rv(&mut rng, social::SOCIAL_LEN);

    let (cc, hc) = (c.clone(), hiddens.clone());
    let loss = move |s: &ParamStore<f64>| -> Result<f64> {
        let neighbors: Vec<([f64; 2], &[f64])> = positions
            .iter()
            .zip(&hc)
            .map(|(p, h)| (*p, h.as_slice()))
            .collect();
        let (tensor, _) = social::build_social_tensor(
            [0.0, 0.0],
            &neighbors,
            s.value(s.id("proj.w").unwrap()),
            s.value(s.id("proj.b").unwrap()).row(0),
            social::DEFAULT_REGION_SIDE,
        )?;
        Ok(tensor.values.iter().zip(&cc).map(|(a, b)| a * b).sum())
    };

    let neighbors: Vec<([f64; 2], &[f64])> = positions
        .iter()
        .zip(&hiddens)
        .map(|(p, h)| (*p, h.as_slice()))
        .collect();
    let (_, cache) = social::build_social_tensor(
        [0.0, 0.0],
        &neighbors,
        store.value(w),
        store.value(b).row(0),
        social::DEFAULT_REGION_SIDE,
    )?;
    let mut dh = vec![vec![0.0; hidden]; neighbors.len()];
    let (values, grads) = store.split_mut();
    let (dw, db) = two_grads(grads, w, b);
    social::social_tensor_backward(&cache, &neighbors, &values[w.idx()], &c, dw, db.values_mut(), &mut dh);
    grad_check(loss, &mut store, DEFAULT_H, 1e-6, None, 0)
}

fn check_full_model(mode: Mode, n_peds: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::<f64>::new();
    let model = Predictor::register(&mut store, mode, 0.5, 0.4, &mut rng)?;
    let sample = straight_crossing_sample(n_peds);

    let run = model.forward_sample(&store, &sample, false, None, None)?;
    store.zero_grads();
    model.backward_sample(&mut store, &sample, &run)?;
    let mc = model.clone();
    let sc = sample.clone();
    grad_check(
        move |s| mc.forward_sample(s, &sc, false, None, None).map(|r| r.loss),
        &mut store,
        DEFAULT_H,
        DEFAULT_TOL,
        Some(16),
        7,
    )
}

/// Renders the suite as the one-line-per-check report the CLI prints.
pub fn render_suite(results: &[(&'static str, GradCheckReport)]) -> String {
    let mut out = String::new();
    for (name, report) in results {
        out.push_str(&format!(
            "{:<22} max_rel_err {:>12.3e}  tol {:>8.0e}  entries {:>6}  {}\n",
            name,
            report.max_rel_err,
            report.tol,
            report.entries_checked,
            if report.passed() { "PASS" } else { "FAIL" }
        ));
    }
    out
}
