//! Parameter counts against a hand-written per-layer ledger.

use adair_core::aflb::MaskMode;
use adair_core::blocks::Conv;
use adair_core::network::{count_parameters, AdaIr, Gap, ModelConfig};
use adair_core::params::ParamBuilder;

fn conv(cin: usize, cout: usize, k: usize, groups: usize, bias: bool) -> usize {
    cout * (cin / groups) * k * k + if bias { cout } else { 0 }
}

fn attention(c: usize, heads: usize) -> usize {
    3 * (conv(c, c, 1, 1, false) + conv(c, c, 3, c, false)) + heads + conv(c, c, 1, 1, false)
}

fn transformer(c: usize, heads: usize, expansion: f64) -> usize {
    let hidden = (c as f64 * expansion).round() as usize;
    let ffn = 2 * (conv(c, hidden, 1, 1, false) + conv(hidden, hidden, 3, hidden, false)) + conv(hidden, c, 1, 1, false);
    2 * c + attention(c, heads) + 2 * c + ffn
}

fn frequency_block(c: usize, heads: usize, r1: usize, r2: usize, learned: bool) -> usize {
    let m1 = (c / r1).max(2);
    let m2 = (c / r2).max(2);
    let mgb = if learned {
        conv(c, m1, 1, 1, true) + conv(m1, 2, 1, 1, true)
    } else {
        0
    };
    let mining = conv(3, c, 3, 1, false) + mgb + 2 * attention(c, heads);
    let hl = conv(2, 1, 7, 1, true);
    let lh = conv(c, m2, 1, 1, false) + conv(m2, c, 1, 1, false);
    let merge = conv(c, c, 1, 1, true) + attention(c, heads);
    mining + hl + lh + merge
}

/// Independent sum over every layer of the four-level network.
fn ledger(cfg: &ModelConfig) -> (usize, usize) {
    let c = |l: usize| cfg.base_channels << l;
    let tb = |n: usize, ch: usize, heads: usize| n * transformer(ch, heads, cfg.gdfn_expansion);
    let mut total = conv(3, c(0), 3, 1, false);
    for l in 0..3 {
        total += tb(cfg.tb_counts[l], c(l), cfg.heads[l]);
        total += conv(c(l), c(l) / 2, 3, 1, false);
    }
    total += tb(cfg.tb_counts[3], c(3), cfg.heads[3]);
    // decoder, deepest first
    total += conv(c(3), 2 * c(3), 3, 1, false) + conv(c(3), c(2), 1, 1, false) + tb(cfg.tb_counts[2], c(2), cfg.heads[2]);
    total += conv(c(2), 2 * c(2), 3, 1, false) + conv(c(2), c(1), 1, 1, false) + tb(cfg.tb_counts[1], c(1), cfg.heads[1]);
    total += conv(c(1), 2 * c(1), 3, 1, false) + tb(cfg.tb_counts[0], c(1), cfg.heads[0]);
    total += tb(cfg.refinement_blocks, c(1), cfg.heads[0]);
    total += conv(c(1), 3, 3, 1, false);
    let learned = cfg.mask_mode.learned();
    let aflb: usize = cfg
        .aflb
        .iter()
        .map(|g| match g {
            Gap::Latent => frequency_block(c(3), cfg.heads[3], cfg.r1, cfg.r2, learned),
            Gap::Level3 => frequency_block(c(2), cfg.heads[2], cfg.r1, cfg.r2, learned),
            Gap::Level2 => frequency_block(c(1), cfg.heads[1], cfg.r1, cfg.r2, learned),
        })
        .sum();
    (total + aflb, aflb)
}

fn count(cfg: &ModelConfig) -> adair_core::network::ParamBreakdown {
    count_parameters(&AdaIr::new(cfg.clone()).unwrap().1)
}

#[test]
fn pointwise_conv_closed_form() {
    let mut b = ParamBuilder::new(1.0);
    Conv::pointwise(&mut b, "p", 7, 5, true);
    assert_eq!(b.finish().count(), 7 * 5 + 5);
}

#[test]
fn desk_count_matches_ledger() {
    let cfg = ModelConfig::desk();
    let got = count(&cfg);
    let (total, aflb) = ledger(&cfg);
    assert_eq!(got.total, total);
    assert_eq!(got.aflb_total(), aflb);
    assert_eq!(got.aflb.len(), 3);
}

#[test]
fn variants_match_ledger() {
    let fixed = ModelConfig {
        mask_mode: MaskMode::Fixed { side: 10 },
        ..ModelConfig::desk()
    };
    let partial = ModelConfig {
        aflb: vec![Gap::Level2],
        base_channels: 16,
        tb_counts: [2, 1, 1, 3],
        ..ModelConfig::desk()
    };
    for cfg in [fixed, partial, ModelConfig::full(), ModelConfig::full_baseline()] {
        assert_eq!(count(&cfg).total, ledger(&cfg).0, "{cfg:?}");
    }
}

#[test]
fn breakdown_partitions_the_total() {
    let b = count(&ModelConfig::full());
    let parts = b.embed + b.encoder + b.latent + b.decoder + b.refinement + b.output + b.aflb_total();
    assert_eq!(parts, b.total);
    assert_eq!(b.backbone(), count(&ModelConfig::full_baseline()).total);
}

#[test]
fn full_size_counts_near_published_figures() {
    let base = count(&ModelConfig::full_baseline()).total as f64;
    assert!((base / 26.13e6 - 1.0).abs() < 0.03, "baseline {base}");
    let full = count(&ModelConfig::full()).total as f64;
    assert!((26.5e6..=31.0e6).contains(&full), "full {full}");
}

#[test]
fn invalid_configs_are_rejected() {
    let bad_heads = ModelConfig {
        heads: [1, 3, 4, 8],
        ..ModelConfig::desk()
    };
    assert!(AdaIr::new(bad_heads).is_err());
    let dup = ModelConfig {
        aflb: vec![Gap::Latent, Gap::Latent],
        ..ModelConfig::desk()
    };
    assert!(AdaIr::new(dup).is_err());
}
