//! Markdown traceability report built from a validation run.

use std::fmt::Write as _;

use crate::analytics::{outage_asymptotic, GainConvention, OutageQuery};
use crate::error::{Error, Result};
use crate::link::{Scenario, User};
use crate::validate::CheckResult;

/// Model features that must each be covered by at least one check.
pub const REQUIRED_ANCHORS: &[&str] = &[
    "hybrid coupler scattering matrix",
    "terminated-port reduction",
    "coupled element coefficients",
    "independent element coefficients",
    "coupled phase lock",
    "energy classification",
    "Rician channel model",
    "received SNR",
    "cophase condition",
    "product density near origin",
    "cascaded sum density",
    "combined noise variance",
    "coupled scaling law",
    "independent scaling law",
    "sum diversity table",
    "outage definition",
    "aligned-user asymptotic outage",
    "non-aligned user outage",
    "diversity order",
    "reproducible streams",
    "radiation pattern",
];

/// One row of the report: a model feature and the checks that touch it.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry<'a> {
    pub anchor: &'static str,
    pub checks: Vec<&'a CheckResult>,
}

impl TraceEntry<'_> {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn trace(results: &[CheckResult]) -> Result<Vec<TraceEntry<'_>>> {
    REQUIRED_ANCHORS
        .iter()
        .map(|&anchor| {
            let checks: Vec<_> = results.iter().filter(|c| c.anchor == anchor).collect();
            if checks.is_empty() {
                Err(Error::MissingTraceEntry(anchor.to_string()))
            } else {
                Ok(TraceEntry { anchor, checks })
            }
        })
        .collect()
}

fn cell(s: &str) -> String {
    s.replace('|', "\\|")
}

pub fn generate_report(results: &[CheckResult]) -> Result<String> {
    let entries = trace(results)?;
    let mut out = String::new();
    let failed = results.iter().filter(|c| !c.passed).count();
    writeln!(out, "# Validation report\n").unwrap();
    writeln!(out, "{} checks, {} failed.\n", results.len(), failed).unwrap();
    writeln!(out, "| Feature | Operation | Kind | Result | Measured | Tolerance |").unwrap();
    writeln!(out, "|---|---|---|---|---|---|").unwrap();
    for e in &entries {
        for c in &e.checks {
            writeln!(
                out,
                "| {} | `{}` | {} | {} | {} | {} |",
                e.anchor,
                c.operation,
                c.kind.label(),
                if c.passed { "PASS" } else { "FAIL" },
                cell(&c.measured),
                cell(&c.tolerance)
            )
            .unwrap();
        }
    }
    let extra: Vec<_> = results
        .iter()
        .filter(|c| !REQUIRED_ANCHORS.contains(&c.anchor))
        .collect();
    if !extra.is_empty() {
        writeln!(out, "\nChecks outside the required list:\n").unwrap();
        for c in extra {
            writeln!(
                out,
                "- {} (`{}`): {}",
                c.anchor,
                c.operation,
                if c.passed { "PASS" } else { "FAIL" }
            )
            .unwrap();
        }
    }
    discrepancies(&mut out)?;
    Ok(out)
}

fn discrepancies(out: &mut String) -> Result<()> {
    writeln!(out, "\n## Known discrepancies\n").unwrap();
    writeln!(out, "### Amplifier gain in the aligned-user outage\n").unwrap();
    writeln!(
        out,
        "The effective gain can be read as `|G|²/4` (power) or `|G|/2` (amplitude). \
         Ratio of the two predictions (amplitude / power) for the coupled surface at default settings, \
         SNR target 0 dB, transmit power 40 dBm:\n"
    )
    .unwrap();
    writeln!(out, "| M | power reading | amplitude reading | ratio |").unwrap();
    writeln!(out, "|---|---|---|---|").unwrap();
    let sc = Scenario::default_coupled();
    let q = OutageQuery::new(1.0, crate::fading::dbm_to_watts(40.0))?;
    for m in [2usize, 4, 8] {
        let sq = outage_asymptotic(
            &sc.user_a_link,
            &sc.bs_link,
            &sc,
            User::A,
            &q,
            m,
            GainConvention::Squared,
        )?;
        let lit = outage_asymptotic(
            &sc.user_a_link,
            &sc.bs_link,
            &sc,
            User::A,
            &q,
            m,
            GainConvention::Literal,
        )?;
        writeln!(
            out,
            "| {m} | {:.3e} | {:.3e} | {:.3e} |",
            sq.probability,
            lit.probability,
            lit.probability / sq.probability
        )
        .unwrap();
    }
    writeln!(out, "\n### Near-origin density of the cascaded sum\n").unwrap();
    writeln!(
        out,
        "The product of two Rician amplitudes has a density `c·x·(−ln x + O(1))` near zero, not `c·x`. \
         The leading-order outage drops the logarithm, so it underestimates simulated outage at small M \
         by a factor that grows slowly as the SNR target shrinks. Slopes in log-log plots are unaffected."
    )
    .unwrap();
    writeln!(out, "\n### Non-aligned user\n").unwrap();
    writeln!(
        out,
        "Outage of a user whose phases are not steered uses a circular Gaussian for the random-phase sum. \
         At M = 4 the simulated outage differs by about 10%, at M = 16 by a few percent; the error shrinks as M grows. \
         The diversity order of one is exact."
    )
    .unwrap();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::outage_user_b_coupled;
    use crate::fading::RicianParams;
    use crate::validate::{run_suite, run_suite_with, Hooks};

    #[test]
    fn every_anchor_is_covered() {
        let r = run_suite();
        let text = generate_report(&r).unwrap();
        for a in REQUIRED_ANCHORS {
            assert!(text.contains(a), "{a}");
        }
        assert!(!text.contains("FAIL"));
    }

    #[test]
    fn orphan_anchor_is_an_error() {
        let mut r = run_suite();
        r.retain(|c| c.anchor != "radiation pattern");
        match generate_report(&r) {
            Err(Error::MissingTraceEntry(a)) => assert_eq!(a, "radiation pattern"),
            other => panic!("{other:?}"),
        }
    }

    fn off_by_two(
        h: &RicianParams,
        g: &RicianParams,
        sc: &Scenario,
        q: &OutageQuery,
        m: usize,
        c: GainConvention,
    ) -> Result<f64> {
        outage_user_b_coupled(h, g, sc, q, m, c).map(|v| 2.0 * v)
    }

    #[test]
    fn broken_formula_shows_as_fail() {
        let r = run_suite_with(&Hooks {
            unaligned_outage: off_by_two,
        });
        let text = generate_report(&r).unwrap();
        let row = text
            .lines()
            .find(|l| l.starts_with("| non-aligned user outage"))
            .unwrap();
        assert!(row.contains("| FAIL |"), "{row}");
    }

    #[test]
    fn literal_reading_differs_by_more_than_two() {
        let text = generate_report(&run_suite()).unwrap();
        let ratios: Vec<f64> = text
            .lines()
            .filter(|l| l.starts_with("| 2 |") || l.starts_with("| 4 |") || l.starts_with("| 8 |"))
            .map(|l| l.trim_end_matches(" |").rsplit("| ").next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(ratios.len(), 3);
        assert!(ratios.iter().all(|&r| r.max(r.recip()) > 2.0), "{ratios:?}");
    }
}
