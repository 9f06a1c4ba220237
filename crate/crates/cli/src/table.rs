//! Human-readable tables: coefficients with stars and z in parentheses,
//! margin rows with intervals. Numbers carry 3–4 significant digits.

use std::fmt::Write as _;

use margins_core::logit::FitStats;
use margins_core::MarginRow;

pub const STAR_NOTE: &str = "* p < 0.05, ** p < 0.01, *** p < 0.001";

pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// `x` with four significant digits in fixed notation (at most six
/// decimals, so tiny values print as 0.000000 rather than in exponent form).
pub fn sig4(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (3 - mag).clamp(0, 6) as usize;
    format!("{x:.decimals$}")
}

pub fn coefficient_table(title: &str, st: &FitStats<f64>, n: usize) -> String {
    let mut s = String::new();
    let w = st.coefficients.iter().map(|c| c.name.len()).max().unwrap_or(0).max(12) + 2;
    let _ = writeln!(s, "{title}");
    let _ = writeln!(s, "{}", "-".repeat(w + 16));
    for c in &st.coefficients {
        let line = format!("{:<w$}{:>12}{}", c.name, sig4(c.estimate), stars(c.p));
        let _ = writeln!(s, "{line}");
        let _ = writeln!(s, "{:<w$}{:>12}", "", format!("({:.2})", c.z));
    }
    let _ = writeln!(s, "{}", "-".repeat(w + 16));
    let _ = writeln!(s, "{:<w$}{:>12}", "N", n);
    let _ = writeln!(s, "{:<w$}{:>12}", "Pseudo R2", format!("{:.3}", st.pseudo_r2));
    let _ = writeln!(s, "{:<w$}{:>12}", "AIC", format!("{:.1}", st.aic));
    let _ = writeln!(s, "{:<w$}{:>12}", "BIC", format!("{:.1}", st.bic));
    let _ = writeln!(s, "{:<w$}{:>12}", "chi2", format!("{:.1}", st.lr_chi2));
    let _ = writeln!(s, "{:<w$}{:>12}", "D.F.", st.df);
    let _ = writeln!(s, "{STAR_NOTE}");
    s
}

pub fn margin_table(title: &str, rows: &[MarginRow], ci_pct: &str) -> String {
    let mut s = String::new();
    let w = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(10) + 2;
    let has_at = rows.iter().any(|r| r.at_value.is_some());
    let _ = writeln!(s, "{title}");
    let mut head = format!("{:<w$}", "");
    if has_at {
        let _ = write!(head, "{:>9}", "at");
    }
    let _ = write!(
        head,
        "{:>13}{:>11}{:>9}{:>8}  [{ci_pct} Conf. Interval]",
        "Margin", "Std. Err.", "z", "P>|z|"
    );
    let _ = writeln!(s, "{}", head.trim_end());
    for r in rows {
        let mut line = format!("{:<w$}", r.label);
        if has_at {
            let _ = write!(line, "{:>9}", r.at_value.map(|v| v.to_string()).unwrap_or_default());
        }
        let _ = write!(
            line,
            "{:>10}{:<3}{:>11}{:>9}{:>8}  {:>9} {:>9}",
            sig4(r.estimate),
            stars(r.p),
            sig4(r.se),
            format!("{:.2}", r.z),
            format!("{:.3}", r.p),
            sig4(r.ci_low),
            sig4(r.ci_high),
        );
        if r.extrapolated {
            line.push_str("  (extrapolated)");
        }
        let _ = writeln!(s, "{}", line.trim_end());
    }
    let _ = writeln!(s, "{STAR_NOTE}");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_thresholds() {
        assert_eq!(stars(0.0499), "*");
        assert_eq!(stars(0.05), "");
        assert_eq!(stars(0.0099), "**");
        assert_eq!(stars(0.01), "*");
        assert_eq!(stars(0.00099), "***");
        assert_eq!(stars(0.001), "**");
    }

    #[test]
    fn four_significant_digits() {
        assert_eq!(sig4(-3.961), "-3.961");
        assert_eq!(sig4(0.0245), "0.02450");
        assert_eq!(sig4(0.000519), "0.000519");
        assert_eq!(sig4(1234.56), "1235");
        assert_eq!(sig4(0.0), "0");
    }
}
