use isac_core::config::RunConfig;
use isac_core::filters::FilterState;
use isac_core::sim::replay;

fn states(cfg: &RunConfig, fused: bool) -> Vec<(FilterState, FilterState)> {
    let scenario = cfg.scenario().unwrap();
    let mut out = Vec::new();
    replay(cfg, &scenario, 3, fused, |v| {
        out.push((v.bistatic.clone(), v.monostatic.clone()));
        Ok(())
    })
    .unwrap();
    out
}

fn short_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.scenario.steps = 12;
    cfg
}

#[test]
fn fusion_flag_only_changes_steps_from_the_first_fusion_on() {
    let cfg = short_config();
    let plain = states(&cfg, false);
    let fused = states(&cfg, true);
    let first = cfg.fusion.period;
    assert_eq!(plain[..first - 1], fused[..first - 1]);
    assert_ne!(plain[first - 1], fused[first - 1]);
}

#[test]
fn unfused_filters_do_not_share_state() {
    let cfg = short_config();
    let mut noisier = cfg.clone();
    noisier.filter.birth_monostatic.mass_per_scan *= 3.0;
    noisier.filter.mono_walk_noise.iter_mut().for_each(|q| *q *= 2.0);
    let a = states(&cfg, false);
    let b = states(&noisier, false);
    for (k, ((ba, _), (bb, _))) in a.iter().zip(&b).enumerate() {
        assert_eq!(ba, bb, "bistatic state changed at step {}", k + 1);
    }
    assert_ne!(a.last().unwrap().1, b.last().unwrap().1);
}
