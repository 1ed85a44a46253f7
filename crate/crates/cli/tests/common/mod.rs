//! Shared helpers for the acceptance and CLI integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use retrograph_core::tensor::{ParamStore, Tape, Tid};
use retrograph_core::Float;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn read_lines(name: &str) -> Vec<String> {
    std::fs::read_to_string(data_path(name))
        .unwrap_or_else(|e| panic!("reading data/{name}: {e}"))
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.to_string())
        .collect()
}

/// Central finite differences (f64, h = 1e-5) over every scalar of every
/// parameter in the store against the analytic gradients. `build` must
/// construct the same scalar loss on a fresh tape each call. Instances
/// whose ReLU/|.| inputs sit within `margin` of a kink must be resampled by
/// the caller (checked here via `Tape::kink_margin`).
pub struct FdCheck {
    pub max_rel_err: Float,
    pub n_params: usize,
}

pub fn fd_check<F>(build: F, store: &mut ParamStore, margin: Float) -> Option<FdCheck>
where
    F: Fn(&mut Tape, &ParamStore) -> Tid,
{
    let names: Vec<String> = store.names().cloned().collect();
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    if tape.kink_margin() < margin {
        return None; // caller resamples the instance
    }
    tape.backward(loss, store).expect("backward");
    let h = 1e-5;
    let mut max_rel_err: Float = 0.0;
    let mut n_params = 0usize;
    for name in &names {
        let n = store.get(name).unwrap().value.len();
        for i in 0..n {
            n_params += 1;
            let orig = store.get(name).unwrap().value.data[i];
            store.get_mut(name).unwrap().value.data[i] = orig + h;
            let mut tp = Tape::new();
            let lp = build(&mut tp, store);
            let fp = tp.value(lp).item();
            store.get_mut(name).unwrap().value.data[i] = orig - h;
            let mut tm = Tape::new();
            let lm = build(&mut tm, store);
            let fm = tm.value(lm).item();
            store.get_mut(name).unwrap().value.data[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let an = store.get(name).unwrap().grad.data[i];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1.0);
            if err > max_rel_err {
                max_rel_err = err;
            }
        }
    }
    Some(FdCheck {
        max_rel_err,
        n_params,
    })
}
