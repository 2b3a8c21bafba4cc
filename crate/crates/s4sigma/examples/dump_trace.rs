//! Dump a full parameter set and encryption/decryption trace as JSON for
//! external differential checking.

use s4sigma::gf::FieldVector;
use s4sigma::rng::DeterministicRng;
use s4sigma::s4::{gen_params, DecOutput, EncInput, EncOutput, S4DecState, S4EncState, SwitchRule};
use s4sigma::scheme::Iv;

fn mat_json(m: &s4sigma::gf::FieldMatrix) -> serde_json::Value {
    serde_json::json!({"rows": m.rows(), "cols": m.cols(), "entries": m.entries()})
}

fn vec_json(v: &FieldVector) -> serde_json::Value {
    serde_json::json!(v.entries())
}

fn main() {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(1);
    let q: u64 = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(257);
    let n: usize = std::env::args().nth(3).map(|s| s.parse().unwrap()).unwrap_or(4);
    let ell: usize = std::env::args().nth(4).map(|s| s.parse().unwrap()).unwrap_or(3);
    let mut rng = DeterministicRng::new(seed);
    let (_, _, params) = gen_params(128, q, n, ell, &mut rng).unwrap();
    let rule = SwitchRule::TimeMod { ell };

    let s0 = FieldVector::random(q, n, &mut rng);
    let mem0 = FieldVector::random(q, n, &mut rng);
    let c0 = FieldVector::random(q, n, &mut rng);
    let sh1 = FieldVector::random(q, n, &mut rng);
    let plains: Vec<FieldVector> = (0..16).map(|_| FieldVector::random(q, n, &mut rng)).collect();

    let (mut enc, iv) =
        S4EncState::init_enc_with(&params, s0.clone(), mem0.clone(), c0.clone()).unwrap();
    enc.enc_step(&params, &rule, EncInput::Bootstrap).unwrap();
    let mut wire = Vec::new();
    let mut states = Vec::new();
    for p in &plains {
        match enc.enc_step(&params, &rule, EncInput::Block(p.clone())).unwrap() {
            EncOutput::Block(c) => wire.push(c),
            other => panic!("unexpected {other:?}"),
        }
        states.push(enc.state().clone());
    }
    if let EncOutput::Final(c) = enc.enc_step(&params, &rule, EncInput::Stop).unwrap() {
        wire.push(c);
    }
    let mut dec = S4DecState::init_dec_with(&params, &iv, sh1.clone()).unwrap();
    dec.dec_step(&params, &rule, &c0).unwrap();
    let mut recovered = Vec::new();
    for c in &wire {
        match dec.dec_step(&params, &rule, c).unwrap() {
            DecOutput::Ack => {}
            DecOutput::Block(p) => recovered.push(p),
        }
    }
    let _ = Iv::S4 { mem0: mem0.clone(), c0: c0.clone() };
    let out = serde_json::json!({
        "q": q, "n": n, "ell": ell, "n0": params.n0,
        "w": mat_json(&params.w), "m": mat_json(&params.m),
        "l": params.l.iter().map(mat_json).collect::<Vec<_>>(),
        "f": params.f.iter().map(mat_json).collect::<Vec<_>>(),
        "e": params.e.iter().map(mat_json).collect::<Vec<_>>(),
        "b": params.b.iter().map(mat_json).collect::<Vec<_>>(),
        "qm": params.q_mats.iter().map(mat_json).collect::<Vec<_>>(),
        "a": params.a.iter().map(mat_json).collect::<Vec<_>>(),
        "d": params.d.iter().map(mat_json).collect::<Vec<_>>(),
        "perm": params.perm.forward_table(),
        "s0": vec_json(&s0), "mem0": vec_json(&mem0), "c0": vec_json(&c0), "sh1": vec_json(&sh1),
        "plains": plains.iter().map(vec_json).collect::<Vec<_>>(),
        "wire": wire.iter().map(vec_json).collect::<Vec<_>>(),
        "states": states.iter().map(vec_json).collect::<Vec<_>>(),
        "recovered": recovered.iter().map(vec_json).collect::<Vec<_>>(),
    });
    println!("{out}");
}
