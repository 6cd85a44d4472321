use docpretrain::gradsuite::{run, Scope, TOLERANCE};

fn check(scope: Scope) {
    let rows = run(scope).unwrap();
    assert!(!rows.is_empty());
    for r in &rows {
        println!("{:?} {:<28} {:.3e} over {}", r.scope, r.name, r.max_rel_error, r.checked);
        assert!(r.pass, "{} failed: {} > {TOLERANCE}", r.name, r.max_rel_error);
    }
}

#[test]
fn every_primitive_matches_central_differences() {
    check(Scope::Primitives);
}

#[test]
fn encoder_block_and_embeddings_match_central_differences() {
    check(Scope::Encoder);
}

#[test]
fn every_loss_matches_central_differences_on_micro_instance() {
    check(Scope::Losses);
}
