use std::fmt::Write;

use super::Explanation;
use crate::util::fmt_f64;

fn list<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    let parts: Vec<String> = items.iter().map(f).collect();
    format!("[{}]", parts.join(", "))
}

fn counts(c: &[usize]) -> String {
    list(c, |v| v.to_string())
}

/// Renders an explanation as a JSON document with a fixed field order.
/// Floats carry 17 significant digits, so equal explanations give
/// byte-identical documents.
pub fn explanation_document(e: &Explanation) -> String {
    let cfg = &e.config;
    let sd = &e.surrogate;
    let mut out = String::new();
    let w = &mut out;
    // writing to a String cannot fail
    let _ = writeln!(w, "{{");
    let _ = writeln!(w, "  \"method\": \"{}\",", cfg.method.name());
    let _ = writeln!(w, "  \"seed\": {},", cfg.seed);
    let _ = writeln!(w, "  \"target_class\": {},", e.target_class);
    let _ = writeln!(w, "  \"contrast_classes\": {},", counts(&e.contrast_classes));
    let _ = writeln!(w, "  \"phi\": {},", list(&e.phi, |v| fmt_f64(*v)));
    let _ = writeln!(w, "  \"intercept\": {},", fmt_f64(e.intercept));
    let _ = writeln!(w, "  \"top_features\": [");
    for (i, f) in e.top_features.iter().enumerate() {
        let sep = if i + 1 < e.top_features.len() { "," } else { "" };
        let name = serde_json::to_string(&f.name).unwrap_or_else(|_| "\"?\"".into());
        let _ = writeln!(w, "    {{\"index\": {}, \"name\": {}, \"score\": {}}}{sep}", f.index, name, fmt_f64(f.score));
    }
    let _ = writeln!(w, "  ],");
    let _ = writeln!(w, "  \"diagnostics\": {{");
    let _ = writeln!(w, "    \"balancer\": \"{}\",", cfg.balancer.name());
    match &cfg.influence {
        Some(inf) => {
            let _ = writeln!(w, "    \"influence\": {{\"keep_fraction\": {}, \"mode\": \"{}\"}},", fmt_f64(inf.keep_fraction), inf.mode.name());
        }
        None => {
            let _ = writeln!(w, "    \"influence\": null,");
        }
    }
    let _ = writeln!(w, "    \"n_prime\": {},", cfg.n_prime);
    let _ = writeln!(w, "    \"k\": {},", cfg.k);
    let _ = writeln!(w, "    \"lambda\": {},", fmt_f64(cfg.lambda()));
    let _ = writeln!(w, "    \"kernel_width\": {},", fmt_f64(cfg.kernel_for(e.phi.len()).width));
    let _ = writeln!(w, "    \"perturbation_scale\": {},", fmt_f64(sd.perturbation_scale));
    let _ = writeln!(w, "    \"n_initial\": {},", sd.n_initial);
    let _ = writeln!(w, "    \"class_counts_initial\": {},", counts(&sd.class_counts_initial));
    let _ = writeln!(w, "    \"n_balanced\": {},", sd.n_balanced);
    let _ = writeln!(w, "    \"class_counts_balanced\": {},", counts(&sd.class_counts_balanced));
    let _ = writeln!(w, "    \"n_final\": {},", sd.n_final);
    let _ = writeln!(w, "    \"class_counts_final\": {},", counts(&sd.class_counts_final));
    let _ = writeln!(w, "    \"balance_fallback\": {},", sd.balance_fallback);
    let _ = writeln!(w, "    \"loss\": {},", fmt_f64(e.fit.loss));
    let _ = writeln!(w, "    \"iterations\": {},", e.fit.iterations);
    let _ = writeln!(w, "    \"converged\": {}", e.fit.converged);
    let _ = writeln!(w, "  }}");
    let _ = writeln!(w, "}}");
    out
}
