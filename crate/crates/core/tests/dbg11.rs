use robba_core::budget::PrecisionBudget;
use robba_core::hodge::*;
use robba_core::phigamma::*;
#[test]
fn dbg_dst_p2() {
    let b = PrecisionBudget::default();
    let m = build_cyclotomic_cocycle(2, &b).unwrap();
    let inv = gamma_invariants(&m, &SearchParams::defaults(&b, 1), &b).unwrap();
    println!("final dim {} diag {:?}", inv.dim, inv.diagnostics);
}
