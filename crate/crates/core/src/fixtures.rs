//! Bundled sample data: the request-handling example net, its
//! pre-compiled matrix artifact, and small event logs. Used by the test
//! suites and handy for trying out the CLI.

use crate::net::{AcceptingNet, NetBuilder};

pub const RUNNING_EXAMPLE_PNML: &str = include_str!("../fixtures/running_example.pnml");
pub const DYNAMICS_ARTIFACT_JSON: &str = include_str!("../fixtures/dynamics_artifact.json");
pub const SAMPLE_LOG_CSV: &str = include_str!("../fixtures/sample_log.csv");
pub const SAMPLE_LOG_XES: &str = include_str!("../fixtures/sample_log.xes");
pub const BROKEN_LOG_CSV: &str = include_str!("../fixtures/broken_log.csv");

/// The request-handling example net, built programmatically (independent of
/// the PNML parser so the two construction paths can cross-check each other).
pub fn running_example() -> AcceptingNet {
    NetBuilder::new()
        .place("p0")
        .place("p1")
        .place("p2")
        .place("p3")
        .place("p4")
        .place("p5")
        .place("p6")
        .place("p7")
        .place("p8")
        .transition("t_a", Some("a"), &["p0"], &["p1"])
        .transition("t_b", Some("b"), &["p2"], &["p4"])
        .transition("t_c", Some("c"), &["p2"], &["p4"])
        .transition("t_d", Some("d"), &["p3"], &["p5"])
        .transition("t_e", Some("e"), &["p4", "p5"], &["p6"])
        .transition("t_f", Some("f"), &["p6"], &["p1"])
        .transition("t_g", Some("g"), &["p7"], &["p8"])
        .transition("t_h", Some("h"), &["p7"], &["p8"])
        .transition("tau0", None, &["p1"], &["p2", "p3"])
        .transition("tau1", None, &["p6"], &["p7"])
        .initial("p0", 1)
        .final_marking("p8", 1)
        .build()
        .expect("running example net is valid")
}
