//! Source-level boundaries that the type system alone does not enforce.

const LIB: &str = include_str!("../src/lib.rs");
const SERVER: &str = include_str!("../src/federation/server.rs");
const CORE_SOURCES: &[(&str, &str)] = &[
    ("lib.rs", LIB),
    ("server.rs", SERVER),
    ("client.rs", include_str!("../src/federation/client.rs")),
    ("federation/mod.rs", include_str!("../src/federation/mod.rs")),
    ("model.rs", include_str!("../src/model.rs")),
    ("losses.rs", include_str!("../src/losses.rs")),
    ("signal.rs", include_str!("../src/signal.rs")),
    ("eval.rs", include_str!("../src/eval.rs")),
    ("data/mod.rs", include_str!("../src/data/mod.rs")),
    ("data/synth.rs", include_str!("../src/data/synth.rs")),
];

fn code_lines(src: &str) -> impl Iterator<Item = &str> {
    src.lines().map(str::trim_start).filter(|l| !l.starts_with("//"))
}

#[test]
fn core_is_no_std() {
    assert!(LIB.lines().next().is_some_and(|l| l.trim() == "#![no_std]"));
    for (name, src) in CORE_SOURCES {
        assert!(!code_lines(src).any(|l| l.contains("std::") || l.contains("extern crate std")), "{name} uses std");
    }
}

#[test]
fn server_never_sees_audio() {
    for forbidden in ["AudioBuffer", "SourceStack", "ClientDataset", "LossInstance", "crate::signal", "crate::data", "crate::losses"] {
        assert!(!code_lines(SERVER).any(|l| l.contains(forbidden)), "server.rs mentions {forbidden}");
    }
}
