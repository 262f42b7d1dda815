//! Model invariants reported by `chr2sim validate`.

use std::fmt::Write as _;

use chr2_core::analysis::ExperimentConfig;
use chr2_core::kinetics::{check_stochastic, steady_state_at, STEADY_STATE_TOL};
use chr2_core::report::fmt_num;

const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: impl Into<String>, result: Result<String, String>) -> Check {
    match result {
        Ok(detail) => Check {
            name: name.into(),
            passed: true,
            detail,
        },
        Err(detail) => Check {
            name: name.into(),
            passed: false,
            detail,
        },
    }
}

fn max_row_error(m: &nalgebra::DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
}

/// Runs every invariant check on one resolved config.
pub fn run_checks(cfg: &ExperimentConfig) -> Vec<Check> {
    let mut out = vec![check(
        "parameters",
        cfg.validate().map(|_| "all keys within range".into()).map_err(|e| e.to_string()),
    )];
    if !out[0].passed {
        return out;
    }
    let array = match cfg.receptor_array() {
        Ok(a) => a,
        Err(e) => {
            out.push(check("receptor array", Err(e.to_string())));
            return out;
        }
    };

    for (label, x) in [("dark", 0.0), ("on", cfg.x_on), ("peak", cfg.max_intensity())] {
        out.push(check(
            format!("single-receptor P at {label} intensity {} is row-stochastic", fmt_num(x)),
            array
                .single_at(x)
                .map_err(|e| e.to_string())
                .and_then(|p| check_stochastic(p.matrix()).map(|_| format!("max row error {:e}", max_row_error(p.matrix())))),
        ));
        out.push(check(
            format!("lumped P at {label} intensity rows sum to 1 within {ROW_TOL:e}"),
            array.model_at(x).map_err(|e| e.to_string()).and_then(|m| {
                let err = max_row_error(m.lumped());
                let negative = m.lumped().iter().any(|&v| v < 0.0);
                if err <= ROW_TOL && !negative {
                    Ok(format!("{} states, max row error {err:e}", m.len()))
                } else {
                    Err(format!("max row error {err:e}, negative entries: {negative}"))
                }
            }),
        ));
    }

    let mean = cfg.mean_intensity();
    out.push(check(
        format!("stationary residual at mean intensity {} within {STEADY_STATE_TOL:e}", fmt_num(mean)),
        steady_state_at(&cfg.rates, mean, cfg.dt, cfg.mode)
            .map_err(|e| e.to_string())
            .and_then(|pi| {
                let p = array.single_at(mean).map_err(|e| e.to_string())?;
                let next = pi.propagate(&p);
                let r = (0..3).map(|i| (next[i] - pi[i]).abs()).fold(0.0, f64::max);
                if r <= STEADY_STATE_TOL {
                    Ok(format!("residual {r:e}"))
                } else {
                    Err(format!("residual {r:e}"))
                }
            }),
    ));

    out.push(check(
        "initial distribution sums to 1",
        array
            .initial_distribution(&cfg.init, mean)
            .map_err(|e| e.to_string())
            .and_then(|d| {
                let s: f64 = d.iter().sum();
                if (s - 1.0).abs() <= ROW_TOL && d.iter().all(|&v| v >= 0.0) {
                    Ok(format!("sum {}", fmt_num(s)))
                } else {
                    Err(format!("sum {}", fmt_num(s)))
                }
            }),
    ));

    out.push(check(
        "detector channel builds",
        cfg.bit_channel()
            .map(|c| format!("{} states, {} symbols, {} observations", c.n_states(), c.n_symbols(), c.n_obs()))
            .map_err(|e| e.to_string()),
    ));

    let r = cfg.data_rate();
    out.push(check(
        "data rate equals 1/(n dt)",
        if ((r * cfg.n_obs as f64 * cfg.dt) - 1.0).abs() <= 1e-12 {
            Ok(format!("{} bit/s", fmt_num(r)))
        } else {
            Err(format!("{} bit/s", fmt_num(r)))
        },
    ));
    out
}

/// Human-readable report; `true` when every check passed.
pub fn report(points: &[(String, Vec<Check>)]) -> (String, bool) {
    let mut text = String::new();
    let mut total = 0;
    let mut failed = 0;
    for (title, checks) in points {
        let _ = writeln!(text, "{title}");
        for c in checks {
            total += 1;
            if !c.passed {
                failed += 1;
            }
            let _ = writeln!(text, "  {} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
        }
    }
    let _ = writeln!(text, "summary: {total} checks, {failed} failed");
    (text, failed == 0)
}
