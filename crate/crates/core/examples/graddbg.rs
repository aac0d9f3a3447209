fn main() {
    let report = itexp::neural::grad_check(itexp::neural::ModelConfig::tiny(), 1e-5).unwrap();
    for e in &report.entries {
        if e.max_rel_error > 1e-8 {
            println!("{:24} rel {:.3e}  absdiff {:.3e}", e.name, e.max_rel_error, e.max_abs_diff);
        }
    }
    println!("MAX {:.3e}", report.max_rel_error);
}
